//! Training objectives: time-averaged and per-timestep cross-entropy, the
//! spatial-temporal factor ξ = ‖θ‖₂ / ‖Δ‖₂ and the min/max regulariser over
//! correctly predicted ξ values in a mini-batch.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::snn::{ForwardRecord, LifState, Network};

/// Guard added inside the denominator norm of ξ.
pub const STF_EPSILON: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskLoss {
    Mean,
    #[default]
    Tet,
}

/// Which prediction decides whether a ξ value is kept.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// argmax of the output at the same timestep.
    #[default]
    PerTimestep,
    /// argmax of the time-averaged output, shared by all timesteps.
    PerSample,
}

/// Gradient routing through the regulariser's extremes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtremeGradient {
    /// The maximum is a fixed target; only the minimum moves.
    #[default]
    MinOnly,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub task: TaskLoss,
    pub alpha: f64,
    pub mask: MaskMode,
    pub extremes: ExtremeGradient,
    pub epsilon: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            task: TaskLoss::Tet,
            alpha: 0.0,
            mask: MaskMode::PerTimestep,
            extremes: ExtremeGradient::MinOnly,
            epsilon: STF_EPSILON,
        }
    }
}

fn require_outputs(outputs: &[Var]) -> Result<()> {
    if outputs.is_empty() {
        return Err(Error::Contract("loss needs at least one timestep".into()));
    }
    Ok(())
}

/// Cross-entropy of the time-averaged output.
pub fn loss_mean(tape: &mut Tape, outputs: &[Var], label: usize) -> Result<Var> {
    require_outputs(outputs)?;
    let mut acc = outputs[0];
    for &o in &outputs[1..] {
        acc = tape.add(acc, o)?;
    }
    let mean = if outputs.len() == 1 { acc } else { tape.scale(acc, 1.0 / outputs.len() as f64)? };
    tape.cross_entropy(mean, label)
}

/// Mean over timesteps of the per-timestep cross-entropy.
pub fn loss_tet(tape: &mut Tape, outputs: &[Var], label: usize) -> Result<Var> {
    require_outputs(outputs)?;
    let mut acc = tape.cross_entropy(outputs[0], label)?;
    for &o in &outputs[1..] {
        let ce = tape.cross_entropy(o, label)?;
        acc = tape.add(acc, ce)?;
    }
    if outputs.len() == 1 {
        Ok(acc)
    } else {
        tape.scale(acc, 1.0 / outputs.len() as f64)
    }
}

/// ξ = ‖θ‖₂ / sqrt(‖Δ‖₂² + ε²). The constant V_thr·τ is left out; it folds
/// into the regulariser weight.
pub fn stf_compute(tape: &mut Tape, state: &LifState, epsilon: f64) -> Result<Var> {
    let spikes = tape.l2_norm(state.spikes, 0.0)?;
    let residual = tape.l2_norm(state.residual, epsilon)?;
    tape.div(spikes, residual)
}

pub fn stf_mask(xi: f64, correct: bool) -> f64 {
    if correct {
        xi
    } else {
        0.0
    }
}

/// `(min S − max S)²` over the non-zero entries `S`; zero when `|S| < 2`.
pub fn str_penalty_value(xi_set: &[f64]) -> f64 {
    let mut nz = xi_set.iter().copied().filter(|&x| x != 0.0);
    let Some(first) = nz.next() else { return 0.0 };
    let (mut lo, mut hi, mut n) = (first, first, 1);
    for x in nz {
        lo = lo.min(x);
        hi = hi.max(x);
        n += 1;
    }
    if n < 2 {
        0.0
    } else {
        (lo - hi) * (lo - hi)
    }
}

/// Regulariser on the tape. `xi_set` holds masked ξ nodes; zero-valued
/// entries are skipped when locating the extremes.
pub fn str_penalty(tape: &mut Tape, xi_set: &[Var], extremes: ExtremeGradient) -> Result<Var> {
    let mut lo: Option<(Var, f64)> = None;
    let mut hi: Option<(Var, f64)> = None;
    let mut n = 0;
    for &v in xi_set {
        let x = tape.value(v).item();
        if x == 0.0 {
            continue;
        }
        n += 1;
        if lo.is_none_or(|(_, m)| x < m) {
            lo = Some((v, x));
        }
        if hi.is_none_or(|(_, m)| x > m) {
            hi = Some((v, x));
        }
    }
    match (lo, hi) {
        (Some((lo, _)), Some((hi, _))) if n >= 2 => {
            let target = match extremes {
                ExtremeGradient::MinOnly => tape.detach(hi),
                ExtremeGradient::Both => hi,
            };
            let gap = tape.sub(lo, target)?;
            tape.square(gap)
        }
        _ => Ok(tape.constant(Tensor::scalar(0.0))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StfEntry {
    pub layer: usize,
    /// 1-based timestep.
    pub timestep: usize,
    pub sample: usize,
    pub xi: f64,
    pub correct: bool,
}

impl StfEntry {
    pub fn masked(&self) -> f64 {
        stf_mask(self.xi, self.correct)
    }
}

/// ξ values for every (spiking layer, timestep, sample) of a batch.
#[derive(Clone, Debug, Default)]
pub struct StfTrace {
    pub entries: Vec<StfEntry>,
    /// V_thr·τ per spiking layer, recorded for plotting.
    pub alpha_tilde: Vec<f64>,
    pub layers: usize,
    vars: Vec<Var>,
}

/// Correctness flags `[t]` for one sample.
pub fn correctness(logits: &[Tensor], label: usize, mode: MaskMode) -> Vec<bool> {
    match mode {
        MaskMode::PerTimestep => logits.iter().map(|l| l.argmax() == label).collect(),
        MaskMode::PerSample => {
            let mut mean = vec![0.0; logits[0].len()];
            for l in logits {
                for (m, v) in mean.iter_mut().zip(l.data()) {
                    *m += v;
                }
            }
            let ok = crate::autodiff::Tensor::vector(mean).argmax() == label;
            vec![ok; logits.len()]
        }
    }
}

impl StfTrace {
    /// Computes ξ on the tape for records produced with `keep_states`.
    pub fn collect(
        tape: &mut Tape,
        net: &Network,
        batch: &[(&ForwardRecord, usize)],
        epsilon: f64,
        mask: MaskMode,
    ) -> Result<Self> {
        let layers = net.plan.spiking_layers();
        let alpha_tilde = net
            .plan
            .spiking
            .iter()
            .map(|&l| {
                let lif = net.spec.layers[l].lif().expect("spiking");
                lif.v_thr * lif.tau
            })
            .collect();
        let mut trace = StfTrace { alpha_tilde, layers, ..Default::default() };
        for (sample, &(rec, label)) in batch.iter().enumerate() {
            if rec.states.len() != rec.outputs.len() {
                return Err(Error::Contract("forward record was produced without keep_states".into()));
            }
            let flags = correctness(&rec.logits(tape), label, mask);
            for (t, states) in rec.states.iter().enumerate() {
                for (layer, state) in states.iter().enumerate() {
                    let xi = stf_compute(tape, state, epsilon)?;
                    trace.entries.push(StfEntry {
                        layer,
                        timestep: t + 1,
                        sample,
                        xi: tape.value(xi).item(),
                        correct: flags[t],
                    });
                    trace.vars.push(xi);
                }
            }
        }
        Ok(trace)
    }

    /// Masked ξ nodes (Ξ) of one layer across the batch and all timesteps.
    fn masked_vars(&self, layer: usize) -> Vec<Var> {
        self.entries
            .iter()
            .zip(&self.vars)
            .filter(|(e, _)| e.layer == layer && e.correct)
            .map(|(_, &v)| v)
            .collect()
    }

    pub fn masked_values(&self, layer: usize) -> Vec<f64> {
        self.entries.iter().filter(|e| e.layer == layer).map(StfEntry::masked).collect()
    }

    /// Mean ξ over samples at each timestep for one layer.
    pub fn layer_time_means(&self, layer: usize) -> Vec<f64> {
        let steps = self.entries.iter().map(|e| e.timestep).max().unwrap_or(0);
        let mut sum = vec![0.0; steps];
        let mut cnt = vec![0usize; steps];
        for e in self.entries.iter().filter(|e| e.layer == layer) {
            sum[e.timestep - 1] += e.xi;
            cnt[e.timestep - 1] += 1;
        }
        sum.iter().zip(&cnt).map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect()
    }

    /// CSV with header `layer,timestep,sample_id,xi,masked,correct`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,timestep,sample_id,xi,masked,correct\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                e.layer + 1,
                e.timestep,
                e.sample,
                e.xi,
                e.masked(),
                e.correct as u8
            );
        }
        out
    }
}

/// Population variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

#[derive(Clone, Debug)]
pub struct LossBreakdown {
    pub task_loss: f64,
    /// Σ over spiking layers of the regulariser.
    pub str_penalty: f64,
    pub per_layer: Vec<f64>,
    pub alpha: f64,
    pub total: f64,
    pub total_var: Var,
}

/// `task + α·Σ_l R(Ξ_l)` averaged over the batch for the task term.
pub fn combined_loss(
    tape: &mut Tape,
    batch: &[(&ForwardRecord, usize)],
    trace: Option<&StfTrace>,
    cfg: &ObjectiveConfig,
) -> Result<LossBreakdown> {
    if !(cfg.alpha >= 0.0) {
        return Err(Error::config("alpha", format!("{} must be non-negative", cfg.alpha)));
    }
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let mut task = None;
    for &(rec, label) in batch {
        let l = match cfg.task {
            TaskLoss::Tet => loss_tet(tape, &rec.outputs, label)?,
            TaskLoss::Mean => loss_mean(tape, &rec.outputs, label)?,
        };
        task = Some(match task {
            None => l,
            Some(acc) => tape.add(acc, l)?,
        });
    }
    let mut task = task.expect("non-empty batch");
    if batch.len() > 1 {
        task = tape.scale(task, 1.0 / batch.len() as f64)?;
    }
    let task_loss = tape.value(task).item();
    if cfg.alpha == 0.0 {
        return Ok(LossBreakdown {
            task_loss,
            str_penalty: 0.0,
            per_layer: Vec::new(),
            alpha: 0.0,
            total: task_loss,
            total_var: task,
        });
    }
    let trace = trace.ok_or_else(|| Error::Contract("alpha > 0 requires an STF trace".into()))?;
    let mut per_layer = Vec::with_capacity(trace.layers);
    let mut penalty: Option<Var> = None;
    for layer in 0..trace.layers {
        let set = trace.masked_vars(layer);
        let r = str_penalty(tape, &set, cfg.extremes)?;
        per_layer.push(tape.value(r).item());
        penalty = Some(match penalty {
            None => r,
            Some(acc) => tape.add(acc, r)?,
        });
    }
    let penalty = penalty.unwrap_or_else(|| tape.constant(Tensor::scalar(0.0)));
    let weighted = tape.scale(penalty, cfg.alpha)?;
    let total_var = tape.add(task, weighted)?;
    Ok(LossBreakdown {
        task_loss,
        str_penalty: tape.value(penalty).item(),
        per_layer,
        alpha: cfg.alpha,
        total: tape.value(total_var).item(),
        total_var,
    })
}
