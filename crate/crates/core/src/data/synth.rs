//! Seeded synthetic event streams: each class is a bar at its own
//! orientation, emitting Poisson events over a uniform background.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::events::{Event, EventStream};
use super::manifest::{DataMode, Split};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub width: u16,
    pub height: u16,
    pub window_us: u64,
    /// Bins per sample recorded in the manifest.
    pub timesteps: usize,
    /// Event rate of each pixel on the bar, in events per second, once fully
    /// faded in.
    pub rate_hz: f64,
    /// The bar rate ramps linearly from zero over this leading part of the
    /// window, so early bins carry less evidence than late ones.
    pub fade_in_us: u64,
    /// Background event rate of every pixel, in events per second.
    pub noise_hz: f64,
    pub bar_width: f64,
    /// Maximum bar offset from the sensor centre, in pixels.
    pub jitter: usize,
    pub seed: u64,
    pub mode: DataMode,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 3,
            train_per_class: 32,
            test_per_class: 40,
            width: 16,
            height: 16,
            window_us: 100_000,
            timesteps: 10,
            rate_hz: 100.0,
            fade_in_us: 0,
            noise_hz: 5.0,
            bar_width: 3.0,
            jitter: 2,
            seed: 0,
            mode: DataMode::Event,
        }
    }
}

impl SynthConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SynthConfig = crate::error::parse_toml(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("classes", "need at least 2 classes"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("width/height", "sensor extents must be positive"));
        }
        if self.window_us == 0 {
            return Err(Error::config("window_us", "must be positive"));
        }
        if self.timesteps == 0 {
            return Err(Error::config("timesteps", "must be at least 1"));
        }
        if !(self.rate_hz >= 0.0 && self.noise_hz >= 0.0) {
            return Err(Error::config("rate_hz/noise_hz", "rates must be non-negative"));
        }
        if self.fade_in_us > self.window_us {
            return Err(Error::config("fade_in_us", "must not exceed window_us"));
        }
        if !(self.bar_width > 0.0) {
            return Err(Error::config("bar_width", "must be positive"));
        }
        Ok(())
    }

    fn window_s(&self) -> f64 {
        self.window_us as f64 * 1e-6
    }

    /// Expected bar events per active pixel: the rate times the window
    /// shortened by half the fade-in.
    pub fn bar_events_per_pixel(&self) -> f64 {
        self.rate_hz * (self.window_us as f64 - self.fade_in_us as f64 / 2.0) * 1e-6
    }

    /// Inverse CDF of the faded-in bar intensity, `u` in [0, 1).
    fn bar_timestamp(&self, u: f64) -> u64 {
        let (w, f) = (self.window_us as f64, self.fade_in_us as f64);
        let m = u * (w - f / 2.0);
        let t = if m < f / 2.0 { (2.0 * f * m).sqrt() } else { m + f / 2.0 };
        (t as u64).min(self.window_us - 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthItem {
    pub stream: EventStream,
    pub split: Split,
    /// Pixels on the class bar.
    pub active_pixels: usize,
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("positive rate").sample(rng) as u64
}

fn bar_mask(cfg: &SynthConfig, class: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let (w, h) = (cfg.width as usize, cfg.height as usize);
    let j = cfg.jitter as i64;
    let cx = w as f64 / 2.0 + rng.random_range(-j..=j) as f64;
    let cy = h as f64 / 2.0 + rng.random_range(-j..=j) as f64;
    let angle = PI * class as f64 / cfg.classes as f64;
    let (s, c) = angle.sin_cos();
    let mut mask = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            mask[y * w + x] = (px * s - py * c).abs() <= cfg.bar_width / 2.0;
        }
    }
    mask
}

fn synth_stream(cfg: &SynthConfig, class: usize, rng: &mut ChaCha8Rng) -> (EventStream, usize) {
    let mask = bar_mask(cfg, class, rng);
    let w = cfg.width as usize;
    let lam_bar = cfg.bar_events_per_pixel();
    let lam_bg = cfg.noise_hz * cfg.window_s();
    let mut events = Vec::new();
    for (i, &on) in mask.iter().enumerate() {
        let (x, y) = ((i % w) as u16, (i / w) as u16);
        for _ in 0..poisson(rng, lam_bg) {
            let timestamp_us = rng.random_range(0..cfg.window_us);
            events.push(Event { timestamp_us, x, y, polarity: rng.random_range(0..2u8) });
        }
        if on {
            for _ in 0..poisson(rng, lam_bar) {
                let timestamp_us = cfg.bar_timestamp(rng.random());
                events.push(Event { timestamp_us, x, y, polarity: rng.random_range(0..2u8) });
            }
        }
    }
    events.sort();
    let active = mask.iter().filter(|&&m| m).count();
    let stream = EventStream { width: cfg.width, height: cfg.height, label: class as u32, events };
    (stream, active)
}

/// Train items first, then test items; classes interleaved.
pub fn synth_event_dataset(cfg: &SynthConfig) -> Result<Vec<SynthItem>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut items = Vec::new();
    for (split, per_class) in [(Split::Train, cfg.train_per_class), (Split::Test, cfg.test_per_class)] {
        for i in 0..per_class * cfg.classes {
            let (stream, active_pixels) = synth_stream(cfg, i % cfg.classes, &mut rng);
            items.push(SynthItem { stream, split, active_pixels });
        }
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_dataset() {
        let cfg = SynthConfig { train_per_class: 2, test_per_class: 1, ..Default::default() };
        assert_eq!(synth_event_dataset(&cfg).unwrap(), synth_event_dataset(&cfg).unwrap());
        let other = SynthConfig { seed: 1, ..cfg.clone() };
        assert_ne!(synth_event_dataset(&cfg).unwrap(), synth_event_dataset(&other).unwrap());
    }

    #[test]
    fn fade_in_backloads_bar_events() {
        let cfg = SynthConfig { noise_hz: 0.0, fade_in_us: 50_000, ..Default::default() };
        let items = synth_event_dataset(&cfg).unwrap();
        let half = cfg.window_us / 2;
        let (early, late) = items.iter().flat_map(|i| &i.stream.events).fold((0, 0), |(e, l), ev| {
            if ev.timestamp_us < half {
                (e + 1, l)
            } else {
                (e, l + 1)
            }
        });
        // fade-in over the first half: a third of the bar events land there
        let frac = early as f64 / (early + late) as f64;
        assert!((frac - 1.0 / 3.0).abs() < 0.02, "{frac}");
    }

    #[test]
    fn no_fade_in_is_uniform() {
        let cfg = SynthConfig { fade_in_us: 0, ..Default::default() };
        assert_eq!(cfg.bar_timestamp(0.25), 25_000);
        assert_eq!(cfg.bar_events_per_pixel(), 10.0);
    }

    #[test]
    fn zero_rate_gives_empty_streams() {
        let cfg = SynthConfig { rate_hz: 0.0, noise_hz: 0.0, ..Default::default() };
        assert!(synth_event_dataset(&cfg).unwrap().iter().all(|i| i.stream.events.is_empty()));
    }

    #[test]
    fn mean_event_count_matches_poisson_rate() {
        let cfg = SynthConfig { noise_hz: 0.0, rate_hz: 40.0, ..Default::default() };
        let items = synth_event_dataset(&cfg).unwrap();
        let observed: usize = items.iter().map(|i| i.stream.events.len()).sum();
        let expected: f64 = items.iter().map(|i| cfg.bar_events_per_pixel() * i.active_pixels as f64).sum();
        // the total is Poisson, so its variance equals its mean
        assert!((observed as f64 - expected).abs() <= 3.0 * expected.sqrt(), "{observed} vs {expected}");
    }

    #[test]
    fn streams_are_valid_and_sorted() {
        let items = synth_event_dataset(&SynthConfig::default()).unwrap();
        for it in &items {
            it.stream.validate().unwrap();
            assert!(it.stream.events.windows(2).all(|w| w[0].timestamp_us <= w[1].timestamp_us));
        }
        assert_eq!(items.iter().filter(|i| i.split == Split::Test).count(), 120);
    }

    #[test]
    fn needs_two_classes() {
        let cfg = SynthConfig { classes: 1, ..Default::default() };
        assert!(matches!(synth_event_dataset(&cfg), Err(Error::Config { .. })));
    }
}
