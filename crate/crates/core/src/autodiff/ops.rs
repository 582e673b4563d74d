//! Tape-free tensor kernels. The tape calls these for its forward values and
//! uses the `*_backward` helpers for adjoints.

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = dims2(a)?;
    let (k2, n) = dims2(b)?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner dimensions disagree: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = ad[i * k + p];
            if x == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &w) in row.iter_mut().zip(brow) {
                *o += x * w;
            }
        }
    }
    Tensor::new(&[m, n], out)
}

/// Adjoints of `a·b` given the output adjoint `g`: returns (dA, dB).
pub(crate) fn matmul_backward(
    a: &Tensor,
    b: &Tensor,
    g: &Tensor,
    need_a: bool,
    need_b: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let (ad, bd, gd) = (a.data(), b.data(), g.data());
    let ga = need_a.then(|| {
        let mut out = vec![0.0; m * k];
        for i in 0..m {
            let grow = &gd[i * n..(i + 1) * n];
            for p in 0..k {
                let brow = &bd[p * n..(p + 1) * n];
                out[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
            }
        }
        Tensor::new(&[m, k], out).expect("shape")
    });
    let gb = need_b.then(|| {
        let mut out = vec![0.0; k * n];
        for i in 0..m {
            let grow = &gd[i * n..(i + 1) * n];
            for p in 0..k {
                let x = ad[i * k + p];
                if x == 0.0 {
                    continue;
                }
                for (o, &gv) in out[p * n..(p + 1) * n].iter_mut().zip(grow) {
                    *o += x * gv;
                }
            }
        }
        Tensor::new(&[k, n], out).expect("shape")
    });
    (ga, gb)
}

fn dims2(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        &[m, n] => Ok((m, n)),
        s => Err(Error::Dimension(format!("expected a matrix, got shape {s:?}"))),
    }
}

/// Geometry of a square-kernel 2-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(
        input: &[usize],
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let &[in_channels, height, width] = input else {
            return Err(Error::Dimension(format!("conv2d expects a c×h×w input, got {input:?}")));
        };
        if stride == 0 || kernel == 0 {
            return Err(Error::Dimension("conv2d needs positive kernel and stride".into()));
        }
        if height + 2 * padding < kernel || width + 2 * padding < kernel {
            return Err(Error::Dimension(format!(
                "kernel {kernel} larger than padded input {input:?} (padding {padding})"
            )));
        }
        Ok(ConvGeometry { in_channels, height, width, out_channels, kernel, stride, padding })
    }

    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn output_shape(&self) -> [usize; 3] {
        [self.out_channels, self.out_height(), self.out_width()]
    }

    pub fn kernel_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    /// Calls `f(tap, out_pos)` for every kernel tap `(ky·k + kx)` through which
    /// input pixel `(iy, ix)` reaches output position `oy·ow + ox`.
    #[inline]
    pub fn for_each_tap(&self, iy: usize, ix: usize, mut f: impl FnMut(usize, usize)) {
        let (oh, ow) = (self.out_height(), self.out_width());
        let (s, k) = (self.stride, self.kernel);
        for ky in 0..k {
            let ty = iy + self.padding;
            if ty < ky || !(ty - ky).is_multiple_of(s) {
                continue;
            }
            let oy = (ty - ky) / s;
            if oy >= oh {
                continue;
            }
            for kx in 0..k {
                let tx = ix + self.padding;
                if tx < kx || !(tx - kx).is_multiple_of(s) {
                    continue;
                }
                let ox = (tx - kx) / s;
                if ox >= ow {
                    continue;
                }
                f(ky * k + kx, oy * ow + ox);
            }
        }
    }

    /// Number of output positions fed by input pixel `(iy, ix)`, per output channel.
    pub fn taps_at(&self, iy: usize, ix: usize) -> usize {
        let mut n = 0;
        self.for_each_tap(iy, ix, |_, _| n += 1);
        n
    }

    /// Kernel reordered to `[c_in·k·k, c_out]` so the inner loop runs over output channels.
    fn transpose_kernel(&self, kernel: &[f64]) -> Vec<f64> {
        let (co, taps) = (self.out_channels, self.in_channels * self.kernel * self.kernel);
        let mut wt = vec![0.0; taps * co];
        for o in 0..co {
            for j in 0..taps {
                wt[j * co + o] = kernel[o * taps + j];
            }
        }
        wt
    }
}

pub fn conv2d(x: &Tensor, kernels: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let ks = kernels.shape();
    let &[co, ci, kh, kw] = ks else {
        return Err(Error::Dimension(format!("conv2d kernels must be c_out×c_in×k×k, got {ks:?}")));
    };
    if kh != kw {
        return Err(Error::Dimension(format!("non-square kernel {ks:?}")));
    }
    let geo = ConvGeometry::new(x.shape(), co, kh, stride, padding)?;
    if geo.in_channels != ci {
        return Err(Error::Dimension(format!(
            "conv2d channel mismatch: input {:?}, kernels {ks:?}",
            x.shape()
        )));
    }
    Ok(conv2d_with(&geo, x, kernels))
}

pub(crate) fn conv2d_with(geo: &ConvGeometry, x: &Tensor, kernels: &Tensor) -> Tensor {
    let wt = geo.transpose_kernel(kernels.data());
    let (co, kk) = (geo.out_channels, geo.kernel * geo.kernel);
    let (oh, ow) = (geo.out_height(), geo.out_width());
    let mut acc = vec![0.0; oh * ow * co];
    let xd = x.data();
    for c in 0..geo.in_channels {
        for iy in 0..geo.height {
            for ix in 0..geo.width {
                let v = xd[(c * geo.height + iy) * geo.width + ix];
                if v == 0.0 {
                    continue;
                }
                geo.for_each_tap(iy, ix, |tap, pos| {
                    let w = &wt[(c * kk + tap) * co..(c * kk + tap + 1) * co];
                    for (a, &wv) in acc[pos * co..(pos + 1) * co].iter_mut().zip(w) {
                        *a += v * wv;
                    }
                });
            }
        }
    }
    let mut out = vec![0.0; co * oh * ow];
    for pos in 0..oh * ow {
        for o in 0..co {
            out[o * oh * ow + pos] = acc[pos * co + o];
        }
    }
    Tensor::new(&geo.output_shape(), out).expect("conv output shape")
}

pub(crate) fn conv2d_backward(
    geo: &ConvGeometry,
    x: &Tensor,
    kernels: &Tensor,
    g: &Tensor,
    need_x: bool,
    need_k: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let (co, kk) = (geo.out_channels, geo.kernel * geo.kernel);
    let npos = geo.out_height() * geo.out_width();
    // output adjoint as [pos, c_out]
    let gd = g.data();
    let mut gt = vec![0.0; npos * co];
    for o in 0..co {
        for pos in 0..npos {
            gt[pos * co + o] = gd[o * npos + pos];
        }
    }
    let xd = x.data();
    let gx = need_x.then(|| {
        let wt = geo.transpose_kernel(kernels.data());
        let mut out = vec![0.0; x.len()];
        for c in 0..geo.in_channels {
            for iy in 0..geo.height {
                for ix in 0..geo.width {
                    let mut s = 0.0;
                    geo.for_each_tap(iy, ix, |tap, pos| {
                        let w = &wt[(c * kk + tap) * co..(c * kk + tap + 1) * co];
                        let gr = &gt[pos * co..(pos + 1) * co];
                        s += w.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>();
                    });
                    out[(c * geo.height + iy) * geo.width + ix] = s;
                }
            }
        }
        Tensor::new(x.shape(), out).expect("shape")
    });
    let gk = need_k.then(|| {
        let taps = geo.in_channels * kk;
        let mut acc = vec![0.0; taps * co];
        for c in 0..geo.in_channels {
            for iy in 0..geo.height {
                for ix in 0..geo.width {
                    let v = xd[(c * geo.height + iy) * geo.width + ix];
                    if v == 0.0 {
                        continue;
                    }
                    geo.for_each_tap(iy, ix, |tap, pos| {
                        let dst = &mut acc[(c * kk + tap) * co..(c * kk + tap + 1) * co];
                        for (d, &gv) in dst.iter_mut().zip(&gt[pos * co..(pos + 1) * co]) {
                            *d += v * gv;
                        }
                    });
                }
            }
        }
        let mut out = vec![0.0; co * taps];
        for j in 0..taps {
            for o in 0..co {
                out[o * taps + j] = acc[j * co + o];
            }
        }
        Tensor::new(&geo.kernel_shape(), out).expect("shape")
    });
    (gx, gk)
}

/// Non-overlapping average pooling over the two trailing axes; partial windows are dropped.
pub fn avg_pool2d(x: &Tensor, size: usize) -> Result<Tensor> {
    let &[c, h, w] = x.shape() else {
        return Err(Error::Dimension(format!("avg_pool2d expects c×h×w, got {:?}", x.shape())));
    };
    let (oh, ow) = (h / size.max(1), w / size.max(1));
    if size == 0 || oh == 0 || ow == 0 {
        return Err(Error::Dimension(format!("pool size {size} does not fit input {:?}", x.shape())));
    }
    let scale = 1.0 / (size * size) as f64;
    let xd = x.data();
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = 0.0;
                for dy in 0..size {
                    for dx in 0..size {
                        s += xd[(ch * h + oy * size + dy) * w + ox * size + dx];
                    }
                }
                out[(ch * oh + oy) * ow + ox] = s * scale;
            }
        }
    }
    Tensor::new(&[c, oh, ow], out)
}

pub(crate) fn avg_pool2d_backward(input_shape: &[usize], size: usize, g: &Tensor) -> Tensor {
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let (oh, ow) = (h / size, w / size);
    let scale = 1.0 / (size * size) as f64;
    let gd = g.data();
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = gd[(ch * oh + oy) * ow + ox] * scale;
                for dy in 0..size {
                    for dx in 0..size {
                        out[(ch * h + oy * size + dy) * w + ox * size + dx] = gv;
                    }
                }
            }
        }
    }
    Tensor::new(input_shape, out).expect("shape")
}

/// Numerically stable softmax over all entries.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.data().iter().any(|x| x.is_nan()) {
        return Err(Error::Numeric("softmax input contains NaN".into()));
    }
    Tensor::new(logits.shape(), softmax_slice(logits.data()))
}

pub(crate) fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// `-log softmax(logits)[label]`, computed through log-sum-exp.
pub fn cross_entropy(logits: &Tensor, label: usize) -> Result<f64> {
    let x = logits.data();
    if label >= x.len() {
        return Err(Error::Index { index: label, len: x.len() });
    }
    if x.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("cross_entropy input contains NaN".into()));
    }
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    Ok(lse - x[label])
}

/// `sqrt(Σ x² + ε²)`.
pub fn l2_norm(x: &Tensor, epsilon: f64) -> f64 {
    (x.data().iter().map(|v| v * v).sum::<f64>() + epsilon * epsilon).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_examples() {
        let a = Tensor::matrix(&[&[1., 2.], &[3., 4.]]);
        let eye = Tensor::matrix(&[&[1., 0.], &[0., 1.]]);
        assert_eq!(matmul(&a, &eye).unwrap(), a);
        let r = matmul(&Tensor::matrix(&[&[1., 2.]]), &Tensor::matrix(&[&[3.], &[4.]])).unwrap();
        assert_eq!(r.data(), &[11.0]);
        let z = matmul(&Tensor::matrix(&[&[0., 0.]]), &Tensor::matrix(&[&[5.], &[7.]])).unwrap();
        assert_eq!(z.data(), &[0.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3] x [2, 3]"), "{msg}");
    }

    /// Direct gather-form correlation, independent of the scatter kernel.
    fn conv_reference(x: &Tensor, k: &Tensor, s: usize, p: usize) -> Tensor {
        let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (co, kk) = (k.shape()[0], k.shape()[2]);
        let oh = (h + 2 * p - kk) / s + 1;
        let ow = (w + 2 * p - kk) / s + 1;
        let mut out = vec![0.0; co * oh * ow];
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for ky in 0..kk {
                            for kx in 0..kk {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let ix = (ox * s + kx) as isize - p as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x.data()[(c * h + iy as usize) * w + ix as usize]
                                    * k.data()[((o * ci + c) * kk + ky) * kk + kx];
                            }
                        }
                    }
                    out[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        Tensor::new(&[co, oh, ow], out).unwrap()
    }

    #[test]
    fn conv2d_examples() {
        let ones = Tensor::ones(&[1, 4, 4]);
        let k = Tensor::ones(&[1, 1, 2, 2]);
        let out = conv2d(&ones, &k, 2, 0).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert!(out.data().iter().all(|&v| v == 4.0));

        let x = Tensor::new(&[1, 3, 3], (0..9).map(f64::from).collect()).unwrap();
        let zero = conv2d(&x, &Tensor::zeros(&[2, 1, 2, 2]), 1, 1).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));

        let big = conv2d(&Tensor::ones(&[1, 8, 8]), &Tensor::ones(&[1, 1, 8, 8]), 4, 2).unwrap();
        assert_eq!(big.shape(), &[1, 2, 2]);
    }

    #[test]
    fn conv2d_rejects_oversized_kernel() {
        let err = conv2d(&Tensor::ones(&[1, 3, 3]), &Tensor::ones(&[1, 1, 5, 5]), 1, 0);
        assert!(matches!(err, Err(Error::Dimension(_))));
        assert!(conv2d(&Tensor::ones(&[1, 3, 3]), &Tensor::ones(&[1, 1, 5, 5]), 1, 1).is_ok());
    }

    #[test]
    fn conv2d_matches_gather_reference() {
        let x = Tensor::new(&[2, 5, 6], (0..60).map(|i| ((i * 7) % 5) as f64 - 2.0).collect()).unwrap();
        let k = Tensor::new(&[3, 2, 3, 3], (0..54).map(|i| ((i * 11) % 7) as f64 * 0.1).collect()).unwrap();
        for (s, p) in [(1, 0), (1, 1), (2, 0), (2, 1), (3, 2)] {
            assert_eq!(conv2d(&x, &k, s, p).unwrap(), conv_reference(&x, &k, s, p), "s={s} p={p}");
        }
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&Tensor::vector(vec![0.0, 0.0])).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&Tensor::vector(vec![3f64.ln(), 0.0])).unwrap();
        assert!((s.data()[0] - 0.75).abs() < 1e-15 && (s.data()[1] - 0.25).abs() < 1e-15);
        let s = softmax(&Tensor::vector(vec![1000.0, 0.0])).unwrap();
        assert!(s.is_finite() && (s.data()[0] - 1.0).abs() < 1e-15 && s.data()[1] < 1e-300);
        assert!(matches!(softmax(&Tensor::vector(vec![f64::NAN])), Err(Error::Numeric(_))));
    }

    #[test]
    fn cross_entropy_examples() {
        let ce = cross_entropy(&Tensor::vector(vec![0.0, 0.0]), 0).unwrap();
        assert!((ce - 2f64.ln()).abs() < 1e-15);
        let ce = cross_entropy(&Tensor::vector(vec![3f64.ln(), 0.0]), 0).unwrap();
        assert!((ce - 0.287682).abs() < 1e-6);
        assert!(cross_entropy(&Tensor::vector(vec![50.0, 0.0]), 0).unwrap() < 1e-20);
        assert!(matches!(
            cross_entropy(&Tensor::vector(vec![0.0, 0.0]), 2),
            Err(Error::Index { index: 2, len: 2 })
        ));
    }

    #[test]
    fn l2_norm_examples() {
        assert_eq!(l2_norm(&Tensor::vector(vec![3.0, 4.0]), 0.0), 5.0);
        assert_eq!(l2_norm(&Tensor::zeros(&[3]), 0.0), 0.0);
        assert_eq!(l2_norm(&Tensor::vector(vec![1., 0., 1., 0.]), 0.0), 2f64.sqrt());
    }

    #[test]
    fn avg_pool_drops_partial_windows() {
        let x = Tensor::new(&[1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let p = avg_pool2d(&x, 2).unwrap();
        assert_eq!(p.shape(), &[1, 1, 1]);
        assert_eq!(p.data(), &[(1. + 2. + 4. + 5.) / 4.]);
    }
}
