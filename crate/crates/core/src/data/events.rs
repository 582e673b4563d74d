//! AEDAT-lite event container.
//!
//! Little-endian layout: `"AESL"`, version `u16 = 1`, width `u16`, height
//! `u16`, label `u32`, event count `u64`, then per event: timestamp (µs)
//! `u64`, x `u16`, y `u16`, polarity `u8`, one pad byte.

use std::path::Path;

use crate::error::{Error, Result};

pub const EVENT_MAGIC: &[u8; 4] = b"AESL";
pub const EVENT_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 2 + 2 + 4 + 8;
const RECORD_LEN: usize = 8 + 2 + 2 + 1 + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Event {
    pub timestamp_us: u64,
    pub x: u16,
    pub y: u16,
    /// 0 = OFF, 1 = ON.
    pub polarity: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    pub width: u16,
    pub height: u16,
    pub label: u32,
    pub events: Vec<Event>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoadOptions {
    /// Reject out-of-order timestamps instead of sorting them.
    pub strict_order: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { strict_order: true }
    }
}

impl EventStream {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Format("sensor extents must be positive".into()));
        }
        for (i, e) in self.events.iter().enumerate() {
            if e.x >= self.width || e.y >= self.height {
                return Err(Error::Data {
                    index: i,
                    msg: format!(
                        "coordinate ({}, {}) outside {}×{} sensor",
                        e.x, e.y, self.width, self.height
                    ),
                });
            }
            if e.polarity > 1 {
                return Err(Error::Data { index: i, msg: format!("polarity {} is not 0 or 1", e.polarity) });
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * self.events.len());
        out.extend_from_slice(EVENT_MAGIC);
        out.extend_from_slice(&EVENT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.label.to_le_bytes());
        out.extend_from_slice(&(self.events.len() as u64).to_le_bytes());
        for e in &self.events {
            out.extend_from_slice(&e.timestamp_us.to_le_bytes());
            out.extend_from_slice(&e.x.to_le_bytes());
            out.extend_from_slice(&e.y.to_le_bytes());
            out.push(e.polarity);
            out.push(0);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], opts: LoadOptions) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format("truncated AEDAT-lite header".into()));
        }
        if &bytes[0..4] != EVENT_MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", &bytes[0..4])));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != EVENT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let width = u16::from_le_bytes([bytes[6], bytes[7]]);
        let height = u16::from_le_bytes([bytes[8], bytes[9]]);
        let label = u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes"));
        let count = u64::from_le_bytes(bytes[14..22].try_into().expect("8 bytes"));
        let body = &bytes[HEADER_LEN..];
        let expected = (count as usize).checked_mul(RECORD_LEN);
        if expected != Some(body.len()) {
            return Err(Error::Format(format!(
                "header announces {count} events but body holds {} bytes",
                body.len()
            )));
        }
        let mut events: Vec<Event> = body
            .chunks_exact(RECORD_LEN)
            .map(|r| Event {
                timestamp_us: u64::from_le_bytes(r[0..8].try_into().expect("8 bytes")),
                x: u16::from_le_bytes([r[8], r[9]]),
                y: u16::from_le_bytes([r[10], r[11]]),
                polarity: r[12],
            })
            .collect();
        if let Some(i) = events.windows(2).position(|w| w[1].timestamp_us < w[0].timestamp_us) {
            if opts.strict_order {
                return Err(Error::Data { index: i + 1, msg: "timestamp decreases".into() });
            }
            events.sort_by_key(|e| e.timestamp_us);
        }
        let stream = EventStream { width, height, label, events };
        stream.validate()?;
        Ok(stream)
    }
}

pub fn write_event_stream(path: &Path, stream: &EventStream) -> Result<()> {
    std::fs::write(path, stream.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_event_stream(path: &Path, opts: LoadOptions) -> Result<EventStream> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    EventStream::from_bytes(&bytes, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(ts: u64, x: u16, y: u16, p: u8) -> Event {
        Event { timestamp_us: ts, x, y, polarity: p }
    }

    #[test]
    fn empty_stream_round_trips() {
        let s = EventStream { width: 4, height: 3, label: 2, events: vec![] };
        let back = EventStream::from_bytes(&s.to_bytes(), LoadOptions::default()).unwrap();
        assert_eq!(back, s);
        assert_eq!(s.to_bytes().len(), HEADER_LEN);
    }

    #[test]
    fn out_of_order_rejected_or_sorted() {
        let s = EventStream { width: 4, height: 4, label: 0, events: vec![ev(10, 0, 0, 1), ev(5, 1, 1, 0)] };
        let bytes = s.to_bytes();
        let err = EventStream::from_bytes(&bytes, LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Data { index: 1, .. }));
        let sorted = EventStream::from_bytes(&bytes, LoadOptions { strict_order: false }).unwrap();
        assert_eq!(sorted.events, vec![ev(5, 1, 1, 0), ev(10, 0, 0, 1)]);
    }

    #[test]
    fn header_and_bounds_validation() {
        let s = EventStream { width: 2, height: 2, label: 0, events: vec![ev(1, 0, 0, 0)] };
        let mut bytes = s.to_bytes();
        bytes[0] = b'X';
        assert!(matches!(EventStream::from_bytes(&bytes, LoadOptions::default()), Err(Error::Format(_))));
        let mut bytes = s.to_bytes();
        bytes[4] = 2;
        assert!(matches!(EventStream::from_bytes(&bytes, LoadOptions::default()), Err(Error::Format(_))));
        let bad = EventStream { events: vec![ev(1, 0, 0, 0), ev(2, 2, 0, 0)], ..s.clone() };
        assert!(matches!(
            EventStream::from_bytes(&bad.to_bytes(), LoadOptions::default()),
            Err(Error::Data { index: 1, .. })
        ));
        let bytes = s.to_bytes();
        assert!(EventStream::from_bytes(&bytes[..bytes.len() - 1], LoadOptions::default()).is_err());
    }
}
