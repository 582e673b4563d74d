//! Analog frame samples and their `AFRM` container: `"AFRM"`, version
//! `u16 = 1`, channels/height/width `u16`, label `u32`, then `c·h·w`
//! little-endian `f32` intensities.

use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::snn::Input;

pub const FRAME_MAGIC: &[u8; 4] = b"AFRM";
pub const FRAME_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 6 + 4;

#[derive(Clone, Debug, PartialEq)]
pub struct FrameSample {
    /// `[c, h, w]` intensities in [0, 1].
    pub frame: Tensor,
    pub label: usize,
}

impl FrameSample {
    pub fn new(frame: Tensor, label: usize) -> Result<Self> {
        if frame.shape().len() != 3 {
            return Err(Error::Dimension(format!("frame must be c×h×w, got {:?}", frame.shape())));
        }
        if let Some(i) = frame.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data {
                index: i,
                msg: format!("intensity {} outside [0, 1]", frame.data()[i]),
            });
        }
        Ok(FrameSample { frame, label })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let s = self.frame.shape();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.frame.len());
        out.extend_from_slice(FRAME_MAGIC);
        out.extend_from_slice(&FRAME_VERSION.to_le_bytes());
        for &d in s {
            out.extend_from_slice(&(d as u16).to_le_bytes());
        }
        out.extend_from_slice(&(self.label as u32).to_le_bytes());
        for &v in self.frame.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format("truncated AFRM header".into()));
        }
        if &bytes[0..4] != FRAME_MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", &bytes[0..4])));
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let version = u16_at(4);
        if version != FRAME_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let shape = [u16_at(6) as usize, u16_at(8) as usize, u16_at(10) as usize];
        let label = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let n: usize = shape.iter().product();
        let body = &bytes[HEADER_LEN..];
        if body.len() != 4 * n {
            return Err(Error::Format(format!(
                "frame {shape:?} needs {} bytes, found {}",
                4 * n,
                body.len()
            )));
        }
        let data =
            body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
        FrameSample::new(Tensor::new(&shape, data)?, label)
    }
}

/// The analog frame as a constant current presented at every timestep.
pub fn frame_to_current(sample: &FrameSample) -> Input {
    Input::Frame(sample.frame.clone())
}

pub fn write_frame(path: &Path, sample: &FrameSample) -> Result<()> {
    std::fs::write(path, sample.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_frame(path: &Path) -> Result<FrameSample> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    FrameSample::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_for_f32_values() {
        let data = (0..12).map(|i| (i as f32 / 11.0) as f64).collect();
        let s = FrameSample::new(Tensor::new(&[1, 3, 4], data).unwrap(), 4).unwrap();
        assert_eq!(FrameSample::from_bytes(&s.to_bytes()).unwrap(), s);
    }

    #[test]
    fn rejects_out_of_range_and_bad_header() {
        assert!(FrameSample::new(Tensor::full(&[1, 1, 1], 1.5), 0).is_err());
        let s = FrameSample::new(Tensor::zeros(&[1, 2, 2]), 0).unwrap();
        let mut b = s.to_bytes();
        b[1] = b'X';
        assert!(matches!(FrameSample::from_bytes(&b), Err(Error::Format(_))));
        let b = s.to_bytes();
        assert!(FrameSample::from_bytes(&b[..b.len() - 2]).is_err());
    }

    #[test]
    fn zero_frame_gives_zero_current() {
        let s = FrameSample::new(Tensor::zeros(&[2, 3, 3]), 1).unwrap();
        let Input::Frame(f) = frame_to_current(&s) else { panic!() };
        assert!(f.data().iter().all(|&v| v == 0.0));
    }
}
