use rand::Rng;

use super::binning::BinnedSample;
use super::frame::FrameSample;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAX_SHIFT_FRAC: f64 = 0.2;

/// Translates the two trailing axes by `(dx, dy)` pixels. Content leaving the
/// frame is dropped; vacated cells are zero.
pub fn shift_spatial(t: &Tensor, dx: isize, dy: isize) -> Tensor {
    let s = t.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let planes = t.len() / (h * w);
    let mut out = Tensor::zeros(s);
    let src = t.data();
    let dst = out.data_mut();
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..h {
            let ny = y as isize + dy;
            if ny < 0 || ny >= h as isize {
                continue;
            }
            for x in 0..w {
                let nx = x as isize + dx;
                if nx < 0 || nx >= w as isize {
                    continue;
                }
                dst[base + ny as usize * w + nx as usize] = src[base + y * w + x];
            }
        }
    }
    out
}

/// Pixel offset for a fractional shift of an axis of length `extent`.
pub fn shift_pixels(frac: f64, extent: usize) -> Result<isize> {
    if !(frac.abs() <= MAX_SHIFT_FRAC) {
        return Err(Error::config(
            "shift",
            format!("fraction {frac} outside [-{MAX_SHIFT_FRAC}, {MAX_SHIFT_FRAC}]"),
        ));
    }
    Ok((frac * extent as f64).round() as isize)
}

/// Samples whose trailing two axes can be translated.
pub trait Shiftable: Sized {
    fn spatial(&self) -> &Tensor;
    fn with_spatial(&self, t: Tensor) -> Self;

    fn augment_shift(&self, dx_frac: f64, dy_frac: f64) -> Result<Self> {
        let s = self.spatial().shape();
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let dx = shift_pixels(dx_frac, w)?;
        let dy = shift_pixels(dy_frac, h)?;
        Ok(self.with_spatial(shift_spatial(self.spatial(), dx, dy)))
    }

    /// Shift by fractions drawn uniformly from `[-max_frac, max_frac]`.
    fn random_shift(&self, max_frac: f64, rng: &mut impl Rng) -> Result<Self> {
        if max_frac == 0.0 {
            return self.augment_shift(0.0, 0.0);
        }
        let dx = rng.random_range(-max_frac..=max_frac);
        let dy = rng.random_range(-max_frac..=max_frac);
        self.augment_shift(dx, dy)
    }
}

impl Shiftable for BinnedSample {
    fn spatial(&self) -> &Tensor {
        &self.bins
    }
    fn with_spatial(&self, t: Tensor) -> Self {
        BinnedSample { bins: t, label: self.label }
    }
}

impl Shiftable for FrameSample {
    fn spatial(&self) -> &Tensor {
        &self.frame
    }
    fn with_spatial(&self, t: Tensor) -> Self {
        FrameSample { frame: t, label: self.label }
    }
}
