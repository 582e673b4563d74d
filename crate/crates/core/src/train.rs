//! Minibatch SGD with momentum and cosine learning-rate decay, optionally
//! regularised by the spatial-temporal penalty.

use std::borrow::Cow;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::PathBuf;
use web_time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::data::{DataMode, Sample, Shiftable, MAX_SHIFT_FRAC};
use crate::error::{Error, Result};
use crate::objective::{
    combined_loss, stf_compute, variance, ExtremeGradient, MaskMode, ObjectiveConfig, StfTrace, TaskLoss,
    STF_EPSILON,
};
use crate::snn::{ForwardOptions, ForwardRecord, Network, Params};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Dataset manifest, resolved relative to the config file.
    pub dataset: PathBuf,
    /// Network spec (JSON). The reference toy network when absent.
    pub network: Option<PathBuf>,
    pub mode: DataMode,
    pub timesteps: usize,
    pub loss: TaskLoss,
    /// Regulariser weight; 0 trains the plain baseline.
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub mask: MaskMode,
    /// Block the gradient through the largest ξ of each layer.
    pub stop_gradient_on_max: bool,
    /// Dropout on the last dense layer; 0 disables.
    pub dropout: f64,
    /// Maximum random translation as a fraction of each extent; 0 disables.
    pub shift: f64,
    /// Clip event bins to {0, 1}.
    pub binarize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset: PathBuf::from("manifest.toml"),
            network: None,
            mode: DataMode::Event,
            timesteps: 10,
            loss: TaskLoss::Tet,
            alpha: 0.0,
            epochs: 30,
            batch_size: 32,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            mask: MaskMode::PerTimestep,
            stop_gradient_on_max: true,
            dropout: 0.0,
            shift: MAX_SHIFT_FRAC,
            binarize: false,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = crate::error::parse_toml(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(field, msg))
            }
        };
        check(self.alpha >= 0.0 && self.alpha.is_finite(), "alpha", "must be a finite value >= 0")?;
        check(self.timesteps >= 1, "timesteps", "must be at least 1")?;
        check(self.lr > 0.0 && self.lr.is_finite(), "lr", "must be a finite value > 0")?;
        check(self.epochs >= 1, "epochs", "must be at least 1")?;
        check(self.batch_size >= 1, "batch_size", "must be at least 1")?;
        check((0.0..1.0).contains(&self.momentum), "momentum", "must lie in [0, 1)")?;
        check(
            self.weight_decay >= 0.0 && self.weight_decay.is_finite(),
            "weight_decay",
            "must be a finite value >= 0",
        )?;
        check((0.0..1.0).contains(&self.dropout), "dropout", "must lie in [0, 1)")?;
        check((0.0..=MAX_SHIFT_FRAC).contains(&self.shift), "shift", "must lie in [0, 0.2]")?;
        Ok(())
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            task: self.loss,
            alpha: self.alpha,
            mask: self.mask,
            extremes: if self.stop_gradient_on_max {
                ExtremeGradient::MinOnly
            } else {
                ExtremeGradient::Both
            },
            epsilon: STF_EPSILON,
        }
    }
}

/// `lr0·(1 + cos(π·e/E))/2` for epoch `e` of `E`.
pub fn cosine_lr(lr0: f64, epoch: usize, epochs: usize) -> f64 {
    lr0 * (1.0 + (PI * epoch as f64 / epochs as f64).cos()) / 2.0
}

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(params: &Params, momentum: f64, weight_decay: f64) -> Self {
        let velocity = params.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect();
        Sgd { momentum, weight_decay, velocity }
    }

    pub fn step(&mut self, params: &mut Params, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != params.tensors.len() {
            return Err(Error::Contract("one gradient per parameter tensor".into()));
        }
        for ((p, g), v) in params.tensors.iter_mut().zip(grads).zip(&mut self.velocity) {
            p.expect_same_shape(g)?;
            let decay = p.data().to_vec();
            for ((vi, gi), pi) in v.data_mut().iter_mut().zip(g.data()).zip(&decay) {
                *vi = self.momentum * *vi + gi + self.weight_decay * pi;
            }
            p.add_scaled(v, -lr);
        }
        Ok(())
    }
}

/// Test-set statistics after an epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalStats {
    /// Accuracy of the instantaneous prediction at each timestep.
    pub accuracy: Vec<f64>,
    /// `[spiking layer][t]` mean ξ over samples.
    pub xi_means: Vec<Vec<f64>>,
}

impl EvalStats {
    pub fn final_accuracy(&self) -> f64 {
        self.accuracy.last().copied().unwrap_or(0.0)
    }

    /// Across-timestep variance of the mean ξ of each spiking layer.
    pub fn xi_time_variance(&self) -> Vec<f64> {
        self.xi_means.iter().map(|m| variance(m)).collect()
    }
}

/// Per-timestep accuracy and ξ profile of `params` on `samples`.
pub fn evaluate_stats(
    net: &Network,
    params: &Params,
    samples: &[Sample],
    timesteps: usize,
) -> Result<EvalStats> {
    let layers = net.plan.spiking_layers();
    let mut correct = vec![0usize; timesteps];
    let mut xi = vec![vec![0.0; timesteps]; layers];
    for s in samples {
        let mut tape = Tape::new();
        let vars = net.bind(&mut tape, params, false)?;
        let opts = ForwardOptions { keep_states: true, ..Default::default() };
        let rec = net.forward(&mut tape, &vars, &s.input, timesteps, opts)?;
        for (t, out) in rec.outputs.iter().enumerate() {
            if tape.value(*out).argmax() == s.label {
                correct[t] += 1;
            }
            for (l, state) in rec.states[t].iter().enumerate() {
                let x = stf_compute(&mut tape, state, STF_EPSILON)?;
                xi[l][t] += tape.value(x).item();
            }
        }
    }
    let n = samples.len().max(1) as f64;
    Ok(EvalStats {
        accuracy: correct.iter().map(|&c| c as f64 / n).collect(),
        xi_means: xi.into_iter().map(|row| row.into_iter().map(|v| v / n).collect()).collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub task_loss: f64,
    pub str_penalty: f64,
    pub total_loss: f64,
    pub test: EvalStats,
    pub wall_clock_s: f64,
}

/// One row per completed epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub epochs: Vec<EpochMetrics>,
}

impl RunMetrics {
    pub fn last(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }

    pub fn to_csv(&self) -> String {
        let (steps, layers) =
            self.epochs.first().map(|e| (e.test.accuracy.len(), e.test.xi_means.len())).unwrap_or((0, 0));
        let mut out = String::from("epoch,lr,task_loss,str_penalty,total_loss,final_accuracy");
        for t in 1..=steps {
            let _ = write!(out, ",acc_t{t}");
        }
        for l in 1..=layers {
            let _ = write!(out, ",xi_var_l{l}");
        }
        out.push_str(",wall_clock_s\n");
        for e in &self.epochs {
            let _ = write!(
                out,
                "{},{},{},{},{},{}",
                e.epoch,
                e.lr,
                e.task_loss,
                e.str_penalty,
                e.total_loss,
                e.test.final_accuracy()
            );
            for a in &e.test.accuracy {
                let _ = write!(out, ",{a}");
            }
            for v in e.test.xi_time_variance() {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{:.3}", e.wall_clock_s);
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: Params,
    pub metrics: RunMetrics,
}

fn check_inputs(net: &Network, cfg: &TrainConfig, samples: &[Sample], what: &str) -> Result<()> {
    let classes = net.spec.classes();
    for (i, s) in samples.iter().enumerate() {
        if s.label >= classes {
            return Err(Error::Data {
                index: i,
                msg: format!("{what} label {} but the network has {classes} classes", s.label),
            });
        }
        if let Some(steps) = s.input.available_steps() {
            if steps < cfg.timesteps {
                return Err(Error::Data {
                    index: i,
                    msg: format!("{what} sample has {steps} bins, need {}", cfg.timesteps),
                });
            }
        }
    }
    Ok(())
}

/// Appends where training stood to a numeric error; `stage` is e.g. `batch: 3`.
fn numeric_context(err: Error, epoch: usize, stage: &str, lr: f64, params: &Params) -> Error {
    match err {
        Error::Numeric(msg) => {
            let max_abs =
                params.tensors.iter().flat_map(|t| t.data().iter()).fold(0.0f64, |m, v| m.max(v.abs()));
            Error::Numeric(format!(
                "{msg}\n  epoch: {epoch}\n  {stage}\n  lr: {lr:e}\n  max |param|: {max_abs:e}"
            ))
        }
        other => other,
    }
}

/// Trains from the seeded initialisation.
pub fn train(
    net: &Network,
    cfg: &TrainConfig,
    train_set: &[Sample],
    test_set: &[Sample],
) -> Result<TrainOutcome> {
    train_with(net, cfg, train_set, test_set, |_| {})
}

/// [`train`] with a callback after each epoch.
pub fn train_with(
    net: &Network,
    cfg: &TrainConfig,
    train_set: &[Sample],
    test_set: &[Sample],
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data { index: 0, msg: "training split is empty".into() });
    }
    check_inputs(net, cfg, train_set, "train")?;
    check_inputs(net, cfg, test_set, "test")?;
    let objective = cfg.objective();
    let mut params = Params::init(&net.plan, cfg.seed);
    let mut sgd = Sgd::new(&params, cfg.momentum, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut metrics = RunMetrics::default();
    let start = Instant::now();

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(cfg.lr, epoch, cfg.epochs);
        order.shuffle(&mut rng);
        let (mut task, mut penalty, mut total) = (0.0, 0.0, 0.0);
        let batches = order.chunks(cfg.batch_size).count();
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let step = train_batch(net, cfg, &objective, &params, train_set, chunk, &mut rng)
                .map_err(|e| numeric_context(e, epoch + 1, &format!("batch: {b}"), lr, &params))?;
            if !step.total.is_finite() {
                return Err(numeric_context(
                    Error::Numeric(format!("non-finite loss (task {}, penalty {})", step.task, step.penalty)),
                    epoch + 1,
                    &format!("batch: {b}"),
                    lr,
                    &params,
                ));
            }
            sgd.step(&mut params, &step.grads, lr)?;
            task += step.task;
            penalty += step.penalty;
            total += step.total;
        }
        let n = batches as f64;
        let test = evaluate_stats(net, &params, test_set, cfg.timesteps)
            .map_err(|e| numeric_context(e, epoch + 1, "stage: test evaluation", lr, &params))?;
        let row = EpochMetrics {
            epoch: epoch + 1,
            lr,
            task_loss: task / n,
            str_penalty: penalty / n,
            total_loss: total / n,
            test,
            wall_clock_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&row);
        metrics.epochs.push(row);
    }
    Ok(TrainOutcome { params, metrics })
}

struct BatchStep {
    task: f64,
    penalty: f64,
    total: f64,
    grads: Vec<Tensor>,
}

fn train_batch(
    net: &Network,
    cfg: &TrainConfig,
    objective: &ObjectiveConfig,
    params: &Params,
    samples: &[Sample],
    chunk: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<BatchStep> {
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape, params, true)?;
    let mut records: Vec<(ForwardRecord, usize)> = Vec::with_capacity(chunk.len());
    for &i in chunk {
        let sample: Cow<Sample> = if cfg.shift > 0.0 {
            Cow::Owned(samples[i].random_shift(cfg.shift, rng)?)
        } else {
            Cow::Borrowed(&samples[i])
        };
        let opts = ForwardOptions {
            keep_states: cfg.alpha > 0.0,
            dropout: (cfg.dropout > 0.0).then(|| (cfg.dropout, rng.random())),
            ..Default::default()
        };
        let rec = net.forward(&mut tape, &vars, &sample.input, cfg.timesteps, opts)?;
        records.push((rec, sample.label));
    }
    let batch: Vec<(&ForwardRecord, usize)> = records.iter().map(|(r, l)| (r, *l)).collect();
    let trace = if cfg.alpha > 0.0 {
        Some(StfTrace::collect(&mut tape, net, &batch, objective.epsilon, objective.mask)?)
    } else {
        None
    };
    let loss = combined_loss(&mut tape, &batch, trace.as_ref(), objective)?;
    if !loss.total.is_finite() {
        return Ok(BatchStep {
            task: loss.task_loss,
            penalty: loss.str_penalty,
            total: loss.total,
            grads: Vec::new(),
        });
    }
    tape.backward(loss.total_var)?;
    let grads = vars.iter().map(|&v| tape.grad(v).cloned().expect("parameters receive gradients")).collect();
    Ok(BatchStep { task: loss.task_loss, penalty: loss.str_penalty, total: loss.total, grads })
}
