//! Browser bindings: a single LIF layer, synthetic event samples, and a cutoff
//! sweep over a network trained in the page. Every export returns JSON.

use aoisnn::autodiff::Tensor;
use aoisnn::data::{synth_samples, Split, SynthConfig};
use aoisnn::inference::{threshold_grid, threshold_sweep, trace_dataset, SampleTrace, ScoreMode};
use aoisnn::objective::{stf_compute, STF_EPSILON};
use aoisnn::snn::{lif_step, Input, Layer, LifParams, Network, NetworkSpec, SpikeMode};
use aoisnn::train::{train, TrainConfig};
use aoisnn::{Result, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn js(r: Result<String>) -> std::result::Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string()))
}

/// Membrane potential, spikes and ξ of `neurons` LIF units driven by constant
/// currents `mean ± spread`.
pub fn lif_layer_json(
    tau: f64,
    v_thr: f64,
    mean: f64,
    spread: f64,
    neurons: usize,
    steps: usize,
    seed: u64,
) -> Result<String> {
    let lif = LifParams { tau, v_thr, ..Default::default() };
    lif.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drive: Vec<f64> = (0..neurons.max(1)).map(|_| mean + spread * rng.random_range(-1.0..=1.0)).collect();
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::vector(drive.clone()));
    let mut residual = tape.constant(Tensor::zeros(&[drive.len()]));
    let (mut v, mut spikes, mut xi) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..steps {
        let state = lif_step(&mut tape, residual, z, &lif, SpikeMode::Hard)?;
        v.push(tape.value(state.v).data().to_vec());
        spikes.push(tape.value(state.spikes).data().to_vec());
        let x = stf_compute(&mut tape, &state, STF_EPSILON)?;
        xi.push(tape.value(x).item());
        residual = state.residual;
    }
    Ok(json!({ "drive": drive, "v": v, "spikes": spikes, "xi": xi }).to_string())
}

/// One synthetic test sample of `class`, binned into `timesteps` count frames
/// summed over polarity, `[t][y][x]`.
pub fn synth_sample_json(
    rate_hz: f64,
    noise_hz: f64,
    class: usize,
    timesteps: usize,
    seed: u64,
) -> Result<String> {
    let cfg = SynthConfig {
        rate_hz,
        noise_hz,
        timesteps,
        train_per_class: 0,
        test_per_class: 1,
        seed,
        ..Default::default()
    };
    cfg.validate()?;
    let samples = synth_samples(&cfg, Split::Test)?;
    let sample = &samples[class % cfg.classes];
    let Input::Events(bins) = &sample.input else { unreachable!("synthetic data is event data") };
    let (h, w) = (cfg.height as usize, cfg.width as usize);
    let frames: Vec<Vec<Vec<f64>>> = (0..timesteps)
        .map(|t| {
            (0..h)
                .map(|y| {
                    (0..w).map(|x| (0..2).map(|p| bins.data()[((t * 2 + p) * h + y) * w + x]).sum()).collect()
                })
                .collect()
        })
        .collect();
    let total: f64 = bins.data().iter().sum();
    Ok(json!({ "label": sample.label, "classes": cfg.classes, "events": total, "frames": frames })
        .to_string())
}

/// Compact network for 12×12 input, small enough to train in a page.
fn demo_spec(classes: usize) -> NetworkSpec {
    let lif = LifParams::default();
    NetworkSpec {
        input: [2, 12, 12],
        layers: vec![
            Layer::Conv { filters: 8, kernel: 4, stride: 2, padding: 0, lif },
            Layer::Flatten,
            Layer::Dense { units: 32, lif },
            Layer::Head { classes },
        ],
    }
}

/// A network trained in the page plus its per-step test traces.
#[wasm_bindgen]
pub struct DemoModel {
    traces: Vec<SampleTrace>,
    fixed_accuracy: f64,
}

impl DemoModel {
    pub fn train(alpha: f64, epochs: usize, seed: u64) -> Result<Self> {
        let data = SynthConfig {
            width: 12,
            height: 12,
            train_per_class: 16,
            test_per_class: 16,
            seed,
            ..Default::default()
        };
        let train_set = synth_samples(&data, Split::Train)?;
        let test_set = synth_samples(&data, Split::Test)?;
        let net = Network::new(demo_spec(data.classes))?;
        let cfg = TrainConfig { alpha, epochs, batch_size: 16, seed, ..Default::default() };
        let outcome = train(&net, &cfg, &train_set, &test_set)?;
        let traces =
            trace_dataset(&net, &outcome.params, &test_set, cfg.timesteps, ScoreMode::Instantaneous)?;
        let fixed_accuracy = outcome.metrics.last().map_or(0.0, |m| m.test.final_accuracy());
        Ok(DemoModel { traces, fixed_accuracy })
    }

    pub fn sweep(&self, lo: f64, hi: f64, n: usize) -> Result<String> {
        let report = threshold_sweep(&self.traces, &threshold_grid(lo, hi, n))?;
        let rows: Vec<_> = report
            .rows
            .iter()
            .map(|r| json!({ "threshold": r.threshold, "accuracy": r.accuracy, "avg_t": r.avg_timestep, "synops": r.avg_synops }))
            .collect();
        Ok(json!({ "max_t": report.max_t, "fixed_accuracy": self.fixed_accuracy, "rows": rows }).to_string())
    }
}

#[wasm_bindgen]
impl DemoModel {
    #[wasm_bindgen(constructor)]
    pub fn new(alpha: f64, epochs: usize, seed: u32) -> std::result::Result<DemoModel, JsValue> {
        Self::train(alpha, epochs, seed.into()).map_err(|e| JsValue::from_str(&e.to_string()))
    }

    #[wasm_bindgen(js_name = sweep)]
    pub fn sweep_js(&self, lo: f64, hi: f64, n: usize) -> std::result::Result<String, JsValue> {
        js(self.sweep(lo, hi, n))
    }
}

#[wasm_bindgen]
pub fn lif_layer(
    tau: f64,
    v_thr: f64,
    mean: f64,
    spread: f64,
    neurons: usize,
    steps: usize,
    seed: u32,
) -> std::result::Result<String, JsValue> {
    js(lif_layer_json(tau, v_thr, mean, spread, neurons, steps, seed.into()))
}

#[wasm_bindgen]
pub fn synth_sample(
    rate_hz: f64,
    noise_hz: f64,
    class: usize,
    timesteps: usize,
    seed: u32,
) -> std::result::Result<String, JsValue> {
    js(synth_sample_json(rate_hz, noise_hz, class, timesteps, seed.into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn constant_drive_above_threshold_fires_every_step() {
        let out: Value = serde_json::from_str(&lif_layer_json(0.5, 1.0, 1.5, 0.0, 4, 6, 0).unwrap()).unwrap();
        let spikes = out["spikes"].as_array().unwrap();
        assert_eq!(spikes.len(), 6);
        assert!(spikes.iter().flat_map(|s| s.as_array().unwrap()).all(|v| v.as_f64() == Some(1.0)));
    }

    #[test]
    fn sub_threshold_drive_settles_below_threshold() {
        // v converges to z / (1 − τ) = 0.8 and never fires
        let out: Value =
            serde_json::from_str(&lif_layer_json(0.5, 1.0, 0.4, 0.0, 1, 30, 0).unwrap()).unwrap();
        let v = out["v"].as_array().unwrap().last().unwrap()[0].as_f64().unwrap();
        assert!((v - 0.8).abs() < 1e-6, "{v}");
        assert!(out["xi"].as_array().unwrap().iter().all(|x| x.as_f64() == Some(0.0)));
    }

    #[test]
    fn invalid_lif_constants_are_rejected() {
        assert!(lif_layer_json(1.5, 1.0, 1.0, 0.0, 1, 3, 0).is_err());
    }

    #[test]
    fn synthetic_frames_hold_every_event() {
        let out: Value = serde_json::from_str(&synth_sample_json(100.0, 5.0, 1, 10, 3).unwrap()).unwrap();
        assert_eq!(out["label"], 1);
        let frames = out["frames"].as_array().unwrap();
        assert_eq!(frames.len(), 10);
        let sum: f64 = frames
            .iter()
            .flat_map(|f| f.as_array().unwrap())
            .flat_map(|r| r.as_array().unwrap())
            .map(|v| v.as_f64().unwrap())
            .sum();
        assert_eq!(sum, out["events"].as_f64().unwrap());
        assert!(sum > 0.0);
    }

    #[test]
    fn demo_model_sweep_is_monotone_in_avg_t() {
        let model = DemoModel::train(0.5, 4, 1).unwrap();
        let out: Value = serde_json::from_str(&model.sweep(0.5, 1.0, 6).unwrap()).unwrap();
        let rows = out["rows"].as_array().unwrap();
        assert_eq!(rows.len(), 6);
        let t: Vec<f64> = rows.iter().map(|r| r["avg_t"].as_f64().unwrap()).collect();
        assert!(t.windows(2).all(|w| w[0] <= w[1]), "{t:?}");
    }
}
