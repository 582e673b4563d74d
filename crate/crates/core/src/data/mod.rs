//! Event ingestion, temporal binning, frame input, augmentation and
//! synthetic datasets.

mod augment;
mod binning;
mod events;
mod frame;
mod manifest;
mod synth;

pub use augment::{shift_pixels, shift_spatial, Shiftable, MAX_SHIFT_FRAC};
pub use binning::{bin_events, BinStats, BinnedSample};
pub use events::{
    load_event_stream, write_event_stream, Event, EventStream, LoadOptions, EVENT_MAGIC, EVENT_VERSION,
};
pub use frame::{frame_to_current, load_frame, write_frame, FrameSample, FRAME_MAGIC};
pub use manifest::{write_synth_dataset, DataMode, DatasetManifest, ManifestEntry, Split, MANIFEST_FILE};
pub use synth::{synth_event_dataset, SynthConfig, SynthItem};

use crate::snn::Input;

/// One labelled network input.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: Input,
    pub label: usize,
}

impl From<BinnedSample> for Sample {
    fn from(b: BinnedSample) -> Self {
        Sample { input: Input::Events(b.bins), label: b.label }
    }
}

impl From<FrameSample> for Sample {
    fn from(f: FrameSample) -> Self {
        Sample { input: Input::Frame(f.frame), label: f.label }
    }
}

/// Bins every stream of a synthetic split in memory.
pub fn synth_samples(cfg: &SynthConfig, split: Split) -> crate::Result<Vec<Sample>> {
    synth_event_dataset(cfg)?
        .into_iter()
        .filter(|i| i.split == split)
        .map(|i| {
            let (b, _) = bin_events(&i.stream, cfg.timesteps, 0, cfg.window_us, false)?;
            Ok(b.into())
        })
        .collect()
}

impl Shiftable for Sample {
    fn spatial(&self) -> &crate::autodiff::Tensor {
        match &self.input {
            Input::Events(t) | Input::Frame(t) => t,
        }
    }
    fn with_spatial(&self, t: crate::autodiff::Tensor) -> Self {
        let input = match self.input {
            Input::Events(_) => Input::Events(t),
            Input::Frame(_) => Input::Frame(t),
        };
        Sample { input, label: self.label }
    }
}
