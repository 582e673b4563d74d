/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demomodel_free: (a: number, b: number) => void;
export const demomodel_new: (a: number, b: number, c: number) => [number, number, number];
export const demomodel_sweep: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const lif_layer: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
export const synth_sample: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const __externref_table_alloc: () => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
