use super::events::EventStream;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Per-bin, per-polarity event counts `[T, 2, h, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BinnedSample {
    pub bins: Tensor,
    pub label: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BinStats {
    pub kept: usize,
    pub dropped: usize,
}

/// Accumulates events with `t0 ≤ ts < t1` into `steps` equal bins; event
/// `ts` lands in bin `floor((ts − t0)·steps / (t1 − t0))`.
pub fn bin_events(
    stream: &EventStream,
    steps: usize,
    t0: u64,
    t1: u64,
    binarize: bool,
) -> Result<(BinnedSample, BinStats)> {
    if t1 <= t0 {
        return Err(Error::config("window", format!("empty window [{t0}, {t1})")));
    }
    if steps == 0 {
        return Err(Error::config("timesteps", "must be at least 1"));
    }
    let (h, w) = (stream.height as usize, stream.width as usize);
    let mut counts = vec![0.0; steps * 2 * h * w];
    let mut stats = BinStats::default();
    let span = (t1 - t0) as u128;
    for e in &stream.events {
        if e.timestamp_us < t0 || e.timestamp_us >= t1 {
            stats.dropped += 1;
            continue;
        }
        let bin = (((e.timestamp_us - t0) as u128 * steps as u128) / span) as usize;
        let bin = bin.min(steps - 1);
        let idx = ((bin * 2 + e.polarity as usize) * h + e.y as usize) * w + e.x as usize;
        counts[idx] += 1.0;
        stats.kept += 1;
    }
    if binarize {
        counts.iter_mut().for_each(|c: &mut f64| *c = c.min(1.0));
    }
    let bins = Tensor::new(&[steps, 2, h, w], counts)?;
    Ok((BinnedSample { bins, label: stream.label as usize }, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::events::Event;

    fn stream(events: Vec<(u64, u16, u16, u8)>) -> EventStream {
        EventStream {
            width: 3,
            height: 2,
            label: 1,
            events: events
                .into_iter()
                .map(|(t, x, y, p)| Event { timestamp_us: t, x, y, polarity: p })
                .collect(),
        }
    }

    fn bin_of(b: &BinnedSample) -> Vec<usize> {
        let per = 2 * 3 * 2;
        b.bins.data().iter().enumerate().filter(|(_, &c)| c > 0.0).map(|(i, _)| i / per).collect()
    }

    #[test]
    fn bin_placement() {
        let (b, _) = bin_events(&stream(vec![(30, 0, 0, 0)]), 10, 0, 100, false).unwrap();
        assert_eq!(bin_of(&b), vec![3]);
        let (b, _) = bin_events(&stream(vec![(50, 0, 0, 0)]), 10, 50, 150, false).unwrap();
        assert_eq!(bin_of(&b), vec![0]);
        let (b, _) = bin_events(&stream(vec![(99, 0, 0, 0)]), 10, 0, 100, false).unwrap();
        assert_eq!(bin_of(&b), vec![9]);
    }

    #[test]
    fn counts_accumulate_and_window_drops() {
        let s = stream(vec![(1, 2, 1, 1), (2, 2, 1, 1), (100, 0, 0, 0), (3, 0, 0, 0)]);
        let (b, stats) = bin_events(&s, 2, 0, 100, false).unwrap();
        assert_eq!(stats, BinStats { kept: 3, dropped: 1 });
        let idx = (2 + 1) * 3 + 2;
        assert_eq!(b.bins.data()[idx], 2.0);
        assert_eq!(b.bins.sum(), 3.0);
        let (b, _) = bin_events(&s, 2, 0, 100, true).unwrap();
        assert_eq!(b.bins.data()[idx], 1.0);
        assert!(bin_events(&s, 2, 5, 5, false).is_err());
    }
}
