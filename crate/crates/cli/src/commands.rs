use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use aoisnn::checkpoint::{require_same_spec, Checkpoint, CheckpointMeta};
use aoisnn::data::{write_synth_dataset, DataMode, DatasetManifest, Sample, Split, SynthConfig};
use aoisnn::ensemble::{uncertainty_curve, Ensemble};
use aoisnn::inference::{anytime_csv, threshold_sweep, trace_dataset, ScoreMode};
use aoisnn::snn::{Network, NetworkSpec};
use aoisnn::train::{train_with, EpochMetrics, RunMetrics, TrainConfig};
use aoisnn::{parse_toml, Error, Result};
use serde::{Deserialize, Serialize};

use crate::summary::{config_hash, RunSummary};
use crate::{thresholds, Common, EvalMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Dataset manifest, resolved relative to the config file.
    pub dataset: PathBuf,
    /// Evaluation horizon; the manifest's when absent.
    pub timesteps: Option<usize>,
    pub score: ScoreMode,
    /// Report σ² instead of σ for the ensemble spread.
    pub squared: bool,
    pub binarize: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            dataset: PathBuf::from("manifest.toml"),
            timesteps: None,
            score: ScoreMode::Instantaneous,
            squared: true,
            binarize: false,
        }
    }
}

fn read_config(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config {
        field: "config".into(),
        msg: format!("cannot read {}: {e}", path.display()),
    })
}

/// Parsed config (or its default) plus the directory relative paths resolve against.
fn load_config<T: Default + serde::de::DeserializeOwned>(common: &Common) -> Result<(T, PathBuf)> {
    match &common.config {
        None => Ok((T::default(), PathBuf::from("."))),
        Some(p) => {
            let cfg = parse_toml(&read_config(p)?)?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            Ok((cfg, base))
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Creates `dir`, refusing one that already has content unless forced.
fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    let occupied = fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false);
    if occupied && !force {
        return Err(Error::Config {
            field: "out".into(),
            msg: format!("{} is not empty; pass --force to overwrite", dir.display()),
        });
    }
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })
}

fn write(dir: &Path, name: &str, text: &str, outputs: &mut Vec<String>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::Io { path, source: e })?;
    outputs.push(name.into());
    Ok(())
}

fn load_dataset(path: &Path, mode: DataMode) -> Result<DatasetManifest> {
    let manifest = DatasetManifest::load(path)?;
    if manifest.mode != mode {
        return Err(Error::Config {
            field: "mode".into(),
            msg: format!("config asks for {mode:?} data but {} holds {:?}", path.display(), manifest.mode),
        });
    }
    Ok(manifest)
}

pub fn synth(common: &Common) -> Result<()> {
    let started = Instant::now();
    let (mut cfg, _): (SynthConfig, _) = load_config(common)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let manifest = write_synth_dataset(&cfg, &common.out, common.force)?;
    let text = cfg.to_toml();
    let mut summary = RunSummary::new("synth", &text, cfg.seed, started);
    summary.outputs.push(aoisnn::data::MANIFEST_FILE.into());
    eprintln!(
        "wrote {} samples ({} classes) to {}",
        manifest.samples.len(),
        manifest.classes,
        common.out.display()
    );
    summary.write(&common.out)
}

fn network_for(cfg: &TrainConfig, base: &Path, manifest: &DatasetManifest) -> Result<Network> {
    let spec = match &cfg.network {
        Some(p) => {
            let p = resolve(base, p);
            let text = fs::read_to_string(&p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
            serde_json::from_str(&text).map_err(|e| Error::Config {
                field: "network".into(),
                msg: format!("{}: {e}", p.display()),
            })?
        }
        None => {
            let mut spec = NetworkSpec::toy(manifest.classes);
            spec.input = [2, manifest.height as usize, manifest.width as usize];
            spec
        }
    };
    if spec.classes() != manifest.classes {
        return Err(Error::Config {
            field: "network".into(),
            msg: format!("network has {} classes, dataset {}", spec.classes(), manifest.classes),
        });
    }
    Network::new(spec).map_err(|e| Error::Config { field: "network".into(), msg: e.to_string() })
}

fn stf_csv(metrics: &RunMetrics) -> String {
    let mut out = String::from("epoch,layer,timestep,xi_mean\n");
    for e in &metrics.epochs {
        for (l, row) in e.test.xi_means.iter().enumerate() {
            for (t, v) in row.iter().enumerate() {
                let _ = writeln!(out, "{},{},{},{}", e.epoch, l + 1, t + 1, v);
            }
        }
    }
    out
}

pub fn train(common: &Common) -> Result<()> {
    let started = Instant::now();
    let (mut cfg, base): (TrainConfig, _) = load_config(common)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let manifest = load_dataset(&resolve(&base, &cfg.dataset), cfg.mode)?;
    let net = network_for(&cfg, &base, &manifest)?;
    let train_set = manifest.load_split_with(Split::Train, cfg.timesteps, cfg.binarize)?;
    let test_set = manifest.load_split_with(Split::Test, cfg.timesteps, cfg.binarize)?;
    prepare_out(&common.out, common.force)?;

    let text = cfg.to_toml();
    let mut summary = RunSummary::new("train", &text, cfg.seed, started);
    let mut seen = RunMetrics::default();
    let progress = |e: &EpochMetrics| {
        eprintln!(
            "epoch {:>3}  lr {:.5}  loss {:.4}  str {:.4}  acc@T {:.3}",
            e.epoch,
            e.lr,
            e.total_loss,
            e.str_penalty,
            e.test.final_accuracy()
        );
        seen.epochs.push(e.clone());
    };
    let outcome = match train_with(&net, &cfg, &train_set, &test_set, progress) {
        Ok(o) => o,
        Err(err @ Error::Numeric(_)) => {
            let mut dump = format!("{err}\n\nconfig:\n{text}");
            if !seen.epochs.is_empty() {
                let _ = write!(dump, "\ncompleted epochs:\n{}", seen.to_csv());
            }
            write(&common.out, "diagnostics.txt", &dump, &mut summary.outputs)?;
            return Err(err);
        }
        Err(err) => return Err(err),
    };

    let meta = CheckpointMeta { config_hash: config_hash(&text), epoch: cfg.epochs, seed: cfg.seed };
    let ckpt = Checkpoint::new(net.spec.clone(), &outcome.params, meta)?;
    ckpt.save(&common.out.join("model.aois"))?;
    summary.outputs.push("model.aois".into());
    write(&common.out, "metrics.csv", &outcome.metrics.to_csv(), &mut summary.outputs)?;
    write(&common.out, "stf.csv", &stf_csv(&outcome.metrics), &mut summary.outputs)?;
    write(&common.out, "train_config.toml", &text, &mut summary.outputs)?;
    summary.wall_clock_s = started.elapsed().as_secs_f64();
    summary.write(&common.out)
}

fn eval_samples(
    cfg: &EvalConfig,
    manifest: &DatasetManifest,
    mode: DataMode,
) -> Result<(Vec<Sample>, usize)> {
    let steps = cfg.timesteps.unwrap_or(manifest.timesteps);
    if steps == 0 {
        return Err(Error::Config { field: "timesteps".into(), msg: "must be at least 1".into() });
    }
    let samples = manifest.load_split_with(Split::Test, steps, cfg.binarize)?;
    if samples.is_empty() {
        return Err(Error::Data { index: 0, msg: format!("{mode:?} test split is empty") });
    }
    Ok((samples, steps))
}

pub fn eval(
    common: &Common,
    mode: EvalMode,
    threshold_spec: &str,
    checkpoint_paths: &[PathBuf],
    dataset: Option<&Path>,
) -> Result<()> {
    let started = Instant::now();
    let (mut cfg, base): (EvalConfig, _) = load_config(common)?;
    let manifest_path = match dataset {
        Some(p) => p.to_path_buf(),
        None => resolve(&base, &cfg.dataset),
    };
    cfg.dataset = manifest_path.clone();
    let thresholds = match mode {
        EvalMode::Cutoff => thresholds::parse(threshold_spec)?,
        _ => Vec::new(),
    };
    if mode == EvalMode::Uncertainty && checkpoint_paths.len() < 2 {
        return Err(Error::Config {
            field: "checkpoints".into(),
            msg: "uncertainty mode needs at least two checkpoints".into(),
        });
    }
    let checkpoints = checkpoint_paths.iter().map(|p| Checkpoint::load(p)).collect::<Result<Vec<_>>>()?;
    require_same_spec(&checkpoints)?;
    let manifest = DatasetManifest::load(&manifest_path)?;
    let (samples, steps) = eval_samples(&cfg, &manifest, manifest.mode)?;
    let net = checkpoints[0].network()?;
    prepare_out(&common.out, common.force)?;

    let mut hashed = toml::to_string(&cfg).expect("config serialises");
    let _ = write!(hashed, "\nmode = {mode:?}\nthresholds = {threshold_spec:?}\n");
    for c in &checkpoints {
        let _ = writeln!(hashed, "checkpoint = {:?}", c.meta.config_hash);
    }
    let seed = common.seed.unwrap_or(checkpoints[0].meta.seed);
    let mut summary = RunSummary::new("eval", &hashed, seed, started);
    let out = &common.out;
    match mode {
        EvalMode::Fixed => {
            let traces = trace_dataset(&net, &checkpoints[0].params, &samples, steps, cfg.score)?;
            let curve = aoisnn::inference::anytime_curve_from(&traces)?;
            eprintln!("accuracy at T={steps}: {:.4}", curve[steps - 1]);
            write(out, "anytime.csv", &anytime_csv(&curve), &mut summary.outputs)?;
        }
        EvalMode::Cutoff => {
            let traces = trace_dataset(&net, &checkpoints[0].params, &samples, steps, cfg.score)?;
            let report = threshold_sweep(&traces, &thresholds)?;
            for r in &report.rows {
                eprintln!(
                    "threshold {:<8.4} acc {:.4}  avg T {:.2}  synops {:.0}",
                    r.threshold, r.accuracy, r.avg_timestep, r.avg_synops
                );
            }
            write(out, "sweep.csv", &report.to_csv(), &mut summary.outputs)?;
        }
        EvalMode::Uncertainty => {
            let members = checkpoints.iter().map(|c| c.params.clone()).collect();
            let ensemble = Ensemble::new(net, members)?;
            let curve = uncertainty_curve(&ensemble, &samples, steps, cfg.squared)?;
            eprintln!("avg spread {:.5}, ensemble accuracy {:.4}", curve.avg_sigma2, curve.final_accuracy);
            write(out, "uncertainty.csv", &curve.to_csv(), &mut summary.outputs)?;
            write(out, "uncertainty_summary.csv", &curve.summary_csv(), &mut summary.outputs)?;
        }
    }
    summary.wall_clock_s = started.elapsed().as_secs_f64();
    summary.write(out)
}
