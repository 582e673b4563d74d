use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::binning::bin_events;
use super::events::{load_event_stream, write_event_stream, LoadOptions};
use super::frame::{frame_to_current, load_frame, write_frame, FrameSample};
use super::synth::{synth_event_dataset, SynthConfig};
use super::Sample;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::snn::Input;

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataMode {
    #[default]
    Event,
    Frame,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub label: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(skip)]
    pub root: PathBuf,
    pub mode: DataMode,
    pub timesteps: usize,
    pub seed: u64,
    pub window_us: u64,
    pub classes: usize,
    pub width: u16,
    pub height: u16,
    pub samples: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serialises")
    }

    /// Parses and validates the manifest at `path`; its directory becomes the root.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest =
            toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, e) in self.samples.iter().enumerate() {
            if !seen.insert(&e.path) {
                return Err(Error::Data { index: i, msg: format!("{} listed twice", e.path) });
            }
            if e.label >= self.classes {
                return Err(Error::Data {
                    index: i,
                    msg: format!("label {} with only {} classes", e.label, self.classes),
                });
            }
            let full = self.root.join(&e.path);
            if !full.is_file() {
                return Err(Error::Data { index: i, msg: format!("missing file {}", full.display()) });
            }
        }
        Ok(())
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.samples.iter().filter(move |e| e.split == split)
    }

    /// Loads and bins every sample of one split into the manifest's `timesteps`.
    pub fn load_split(&self, split: Split, binarize: bool) -> Result<Vec<Sample>> {
        self.load_split_with(split, self.timesteps, binarize)
    }

    /// As [`load_split`](Self::load_split) with an explicit bin count.
    pub fn load_split_with(&self, split: Split, steps: usize, binarize: bool) -> Result<Vec<Sample>> {
        self.entries(split)
            .map(|e| {
                let path = self.root.join(&e.path);
                match self.mode {
                    DataMode::Event => {
                        let stream = load_event_stream(&path, LoadOptions::default())?;
                        let (b, _) = bin_events(&stream, steps, 0, self.window_us, binarize)?;
                        Ok(Sample { input: Input::Events(b.bins), label: e.label })
                    }
                    DataMode::Frame => {
                        let f = load_frame(&path)?;
                        Ok(Sample { input: frame_to_current(&f), label: e.label })
                    }
                }
            })
            .collect()
    }
}

/// Normalised per-polarity event counts of a stream as an analog frame.
fn integrate_frame(stream: &super::events::EventStream) -> Result<FrameSample> {
    let (h, w) = (stream.height as usize, stream.width as usize);
    let mut counts = vec![0.0; 2 * h * w];
    for e in &stream.events {
        counts[(e.polarity as usize * h + e.y as usize) * w + e.x as usize] += 1.0;
    }
    let max = counts.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        counts.iter_mut().for_each(|c| *c = (*c / max) as f32 as f64);
    }
    FrameSample::new(Tensor::new(&[2, h, w], counts)?, stream.label as usize)
}

/// Generates a synthetic dataset under `out` and writes its manifest.
/// A non-empty `out` is refused unless `force` is set.
pub fn write_synth_dataset(cfg: &SynthConfig, out: &Path, force: bool) -> Result<DatasetManifest> {
    cfg.validate()?;
    if out.exists() {
        let non_empty = fs::read_dir(out).map_err(|e| Error::io(out, e))?.next().is_some();
        if non_empty && !force {
            return Err(Error::config(
                "out",
                format!("{} is not empty (use --force to overwrite)", out.display()),
            ));
        }
    }
    for split in [Split::Train, Split::Test] {
        let dir = out.join(split.as_str());
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let items = synth_event_dataset(cfg)?;
    let mut samples = Vec::with_capacity(items.len());
    let mut counters = [0usize; 2];
    for item in &items {
        let k = item.split as usize;
        let ext = match cfg.mode {
            DataMode::Event => "aesl",
            DataMode::Frame => "afrm",
        };
        let rel = format!("{}/{:06}.{ext}", item.split.as_str(), counters[k]);
        counters[k] += 1;
        let path = out.join(&rel);
        match cfg.mode {
            DataMode::Event => write_event_stream(&path, &item.stream)?,
            DataMode::Frame => write_frame(&path, &integrate_frame(&item.stream)?)?,
        }
        samples.push(ManifestEntry { path: rel, label: item.stream.label as usize, split: item.split });
    }
    let manifest = DatasetManifest {
        root: out.to_path_buf(),
        mode: cfg.mode,
        timesteps: cfg.timesteps,
        seed: cfg.seed,
        window_us: cfg.window_us,
        classes: cfg.classes,
        width: cfg.width,
        height: cfg.height,
        samples,
    };
    let mpath = out.join(MANIFEST_FILE);
    fs::write(&mpath, manifest.to_toml()).map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}
