//! Versioned binary parameter container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "AOIS" | u16 version | u32 n | n bytes of JSON {spec, meta}
//!        | u32 tensors | per tensor: u8 rank, rank × u32 extents
//!        | f32 values of every tensor in declaration order
//!        | u32 CRC32 of everything before it
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::snn::{Network, NetworkSpec, Params};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AOIS";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub epoch: usize,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    meta: CheckpointMeta,
}

/// Parameters are held at 32-bit precision, widened to f64.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub params: Params,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    /// Validates `params` against `spec` and rounds them to f32.
    pub fn new(spec: NetworkSpec, params: &Params, meta: CheckpointMeta) -> Result<Self> {
        let net = Network::new(spec)?;
        params.check_against(&net.plan)?;
        Ok(Checkpoint { spec: net.spec, params: params.quantized(), meta })
    }

    pub fn network(&self) -> Result<Network> {
        Network::new(self.spec.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header { spec: self.spec.clone(), meta: self.meta.clone() })
            .expect("header serialises");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.params.tensors.len() as u32).to_le_bytes());
        for t in &self.params.tensors {
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
        }
        for t in &self.params.tensors {
            for v in t.to_f32_vec() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
            if bytes.len() < 4 && CHECKPOINT_MAGIC.starts_with(bytes) {
                return Err(Error::Integrity("checkpoint truncated".into()));
            }
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        if bytes.len() < 6 {
            return Err(Error::Integrity("checkpoint truncated".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        if bytes.len() < 10 {
            return Err(Error::Integrity("checkpoint truncated".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Integrity("checksum mismatch (truncated or corrupted)".into()));
        }

        let mut r = Reader { buf: body, pos: 6 };
        let n = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(n)?)
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let net =
            Network::new(header.spec).map_err(|e| Error::Integrity(format!("embedded network spec: {e}")))?;
        let count = r.u32()? as usize;
        if count != net.plan.param_shapes.len() {
            return Err(Error::Integrity(format!(
                "{count} tensors stored, spec declares {}",
                net.plan.param_shapes.len()
            )));
        }
        let mut shapes = Vec::with_capacity(count);
        for (i, expect) in net.plan.param_shapes.iter().enumerate() {
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if &shape != expect {
                return Err(Error::Integrity(format!(
                    "tensor {i} stored as {shape:?}, spec declares {expect:?}"
                )));
            }
            shapes.push(shape);
        }
        let mut tensors = Vec::with_capacity(count);
        for shape in shapes {
            let len: usize = shape.iter().product();
            let raw = r.take(len * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            tensors.push(Tensor::new(&shape, data)?);
        }
        if r.pos != body.len() {
            return Err(Error::Integrity(format!(
                "{} trailing bytes after parameter data",
                body.len() - r.pos
            )));
        }
        Ok(Checkpoint { spec: net.spec, params: Params { tensors }, meta: header.meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Integrity("checkpoint section runs past the end".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Checkpoints that can be evaluated together must share one spec.
pub fn require_same_spec(checkpoints: &[Checkpoint]) -> Result<()> {
    if let Some(first) = checkpoints.first() {
        for (i, c) in checkpoints.iter().enumerate().skip(1) {
            if c.spec != first.spec {
                return Err(Error::Compatibility(format!(
                    "checkpoint {} has a different network spec from checkpoint 0",
                    i
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Checkpoint {
        let spec = NetworkSpec::toy(3);
        let net = Network::new(spec.clone()).unwrap();
        let params = Params::init(&net.plan, 4);
        let meta = CheckpointMeta { config_hash: "abc".into(), epoch: 30, seed: 4 };
        Checkpoint::new(spec, &params, meta).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let c = toy();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn every_truncation_is_an_integrity_error() {
        let bytes = toy().to_bytes();
        for cut in [0, 1, 3, 4, 5, 7, 12, 100, bytes.len() / 2, bytes.len() - 1] {
            match Checkpoint::from_bytes(&bytes[..cut]) {
                Err(Error::Integrity(_)) => {}
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn wrong_magic_and_version_are_format_errors() {
        let mut bytes = toy().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format(_))));
        let mut bytes = toy().to_bytes();
        bytes[4] = 2;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn flipped_payload_bit_is_detected() {
        let mut bytes = toy().to_bytes();
        let i = bytes.len() - 20;
        bytes[i] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Integrity(_))));
    }

    #[test]
    fn shape_table_must_match_spec() {
        let c = toy();
        let mut bytes = c.to_bytes();
        // rewrite the first extent of the first tensor and re-seal the checksum
        let hlen = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let first_dim = 10 + hlen + 4 + 1;
        bytes[first_dim] += 1;
        let n = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..n]);
        bytes[n..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Integrity(_))));
    }

    #[test]
    fn mismatched_params_are_rejected_on_construction() {
        let params = Params { tensors: vec![Tensor::zeros(&[2])] };
        assert!(Checkpoint::new(NetworkSpec::toy(3), &params, CheckpointMeta::default()).is_err());
    }

    #[test]
    fn different_specs_are_incompatible() {
        let a = toy();
        let spec = NetworkSpec::toy(4);
        let net = Network::new(spec.clone()).unwrap();
        let b = Checkpoint::new(spec, &Params::init(&net.plan, 0), CheckpointMeta::default()).unwrap();
        assert!(require_same_spec(&[a.clone(), a.clone()]).is_ok());
        assert!(matches!(require_same_spec(&[a, b]), Err(Error::Compatibility(_))));
    }
}
