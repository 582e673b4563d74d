//! Softmax-threshold cutoff inference, fixed-timestep accuracy curves and
//! synaptic-operation accounting.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ops, Tape, Tensor};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::snn::{ForwardOptions, ForwardRecord, Network, Params};

/// How the per-step confidence is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Softmax of `f(X(t))` alone.
    #[default]
    Instantaneous,
    /// Softmax of the running mean of `f(X(1..t))`.
    Cumulative,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CutoffPolicy {
    /// Exit once the top softmax score reaches this; `f64::INFINITY` never exits early.
    pub threshold: f64,
    pub max_t: usize,
}

impl CutoffPolicy {
    pub fn new(threshold: f64, max_t: usize) -> Result<Self> {
        if threshold.is_nan() || threshold < 0.0 {
            return Err(Error::config("threshold", format!("{threshold} must be ≥ 0")));
        }
        if max_t == 0 {
            return Err(Error::config("max_t", "must be at least 1"));
        }
        Ok(CutoffPolicy { threshold, max_t })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CutoffResult {
    /// 1-based exit timestep.
    pub exit_t: usize,
    pub prediction: usize,
    pub max_score: f64,
    pub synops: u64,
}

/// Total synaptic operations of the first `t_stop` steps of `record`.
pub fn synaptic_ops(record: &ForwardRecord, t_stop: usize) -> Result<u64> {
    if t_stop > record.synops.len() {
        return Err(Error::Range(format!(
            "t_stop {t_stop} beyond the {} recorded steps",
            record.synops.len()
        )));
    }
    Ok(record.synops[..t_stop].iter().flatten().sum())
}

/// Index (1-based) of the first score ≥ `threshold`, else `scores.len()`.
pub fn first_crossing(scores: &[f64], threshold: f64) -> usize {
    scores.iter().position(|&s| s >= threshold).map_or(scores.len(), |i| i + 1)
}

struct Scorer {
    mode: ScoreMode,
    sum: Option<Tensor>,
    steps: usize,
}

impl Scorer {
    fn new(mode: ScoreMode) -> Self {
        Scorer { mode, sum: None, steps: 0 }
    }

    /// `(top score, argmax)` after observing `logits`.
    fn observe(&mut self, logits: &Tensor) -> Result<(f64, usize)> {
        self.steps += 1;
        let basis = match self.mode {
            ScoreMode::Instantaneous => logits.clone(),
            ScoreMode::Cumulative => {
                let sum = match self.sum.take() {
                    None => logits.clone(),
                    Some(s) => s.zip_map(logits, |a, b| a + b)?,
                };
                let mean = sum.map(|v| v / self.steps as f64);
                self.sum = Some(sum);
                mean
            }
        };
        let p = ops::softmax(&basis)?;
        let k = p.argmax();
        Ok((p.data()[k], k))
    }
}

/// Runs one sample step by step and stops at the first confident step.
pub fn cutoff_run(
    net: &Network,
    params: &Params,
    sample: &Sample,
    policy: CutoffPolicy,
    mode: ScoreMode,
) -> Result<CutoffResult> {
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape, params, false)?;
    let mut run = net.unroll(&mut tape, &vars, &sample.input, ForwardOptions::default())?;
    let mut scorer = Scorer::new(mode);
    loop {
        let out = run.step(&mut tape)?;
        let (score, pred) = scorer.observe(tape.value(out))?;
        let t = run.timestep();
        if score >= policy.threshold || t == policy.max_t {
            return Ok(CutoffResult {
                exit_t: t,
                prediction: pred,
                max_score: score,
                synops: synaptic_ops(run.record(), t)?,
            });
        }
    }
}

/// Per-step confidence, prediction and cumulative cost of one sample over
/// the full horizon. Exits for any threshold can be read off it without
/// re-running the network.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleTrace {
    pub label: usize,
    pub scores: Vec<f64>,
    pub predictions: Vec<usize>,
    pub cum_synops: Vec<u64>,
}

impl SampleTrace {
    pub fn exit(&self, threshold: f64) -> CutoffResult {
        let t = first_crossing(&self.scores, threshold);
        CutoffResult {
            exit_t: t,
            prediction: self.predictions[t - 1],
            max_score: self.scores[t - 1],
            synops: self.cum_synops[t - 1],
        }
    }
}

pub fn trace_sample(
    net: &Network,
    params: &Params,
    sample: &Sample,
    max_t: usize,
    mode: ScoreMode,
) -> Result<SampleTrace> {
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape, params, false)?;
    let rec = net.forward(&mut tape, &vars, &sample.input, max_t, ForwardOptions::default())?;
    let mut scorer = Scorer::new(mode);
    let mut trace = SampleTrace {
        label: sample.label,
        scores: Vec::with_capacity(max_t),
        predictions: Vec::with_capacity(max_t),
        cum_synops: Vec::with_capacity(max_t),
    };
    let mut cum = 0;
    for (t, &out) in rec.outputs.iter().enumerate() {
        let (s, k) = scorer.observe(tape.value(out))?;
        cum += rec.synops[t].iter().sum::<u64>();
        trace.scores.push(s);
        trace.predictions.push(k);
        trace.cum_synops.push(cum);
    }
    Ok(trace)
}

pub fn trace_dataset(
    net: &Network,
    params: &Params,
    dataset: &[Sample],
    max_t: usize,
    mode: ScoreMode,
) -> Result<Vec<SampleTrace>> {
    dataset.iter().map(|s| trace_sample(net, params, s, max_t, mode)).collect()
}

/// Accuracy of `argmax f(X(t))` at every fixed timestep.
pub fn anytime_curve(net: &Network, params: &Params, dataset: &[Sample], max_t: usize) -> Result<Vec<f64>> {
    let traces = trace_dataset(net, params, dataset, max_t, ScoreMode::Instantaneous)?;
    anytime_curve_from(&traces)
}

pub fn anytime_curve_from(traces: &[SampleTrace]) -> Result<Vec<f64>> {
    let first = traces.first().ok_or_else(|| Error::Contract("anytime curve of an empty dataset".into()))?;
    let steps = first.predictions.len();
    Ok((0..steps)
        .map(|t| {
            let hits = traces.iter().filter(|tr| tr.predictions[t] == tr.label).count();
            hits as f64 / traces.len() as f64
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub threshold: f64,
    pub accuracy: f64,
    pub avg_timestep: f64,
    pub avg_synops: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub max_t: usize,
    pub rows: Vec<SweepRow>,
}

pub fn threshold_sweep(traces: &[SampleTrace], thresholds: &[f64]) -> Result<SweepReport> {
    if thresholds.is_empty() {
        return Err(Error::Contract("threshold sweep needs at least one threshold".into()));
    }
    let first =
        traces.first().ok_or_else(|| Error::Contract("threshold sweep over an empty dataset".into()))?;
    let n = traces.len() as f64;
    let rows = thresholds
        .iter()
        .map(|&th| {
            let (mut hits, mut steps, mut ops) = (0usize, 0usize, 0u64);
            for tr in traces {
                let r = tr.exit(th);
                hits += (r.prediction == tr.label) as usize;
                steps += r.exit_t;
                ops += r.synops;
            }
            SweepRow {
                threshold: th,
                accuracy: hits as f64 / n,
                avg_timestep: steps as f64 / n,
                avg_synops: ops as f64 / n,
            }
        })
        .collect();
    Ok(SweepReport { max_t: first.scores.len(), rows })
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn threshold_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

fn fmt_threshold(t: f64) -> String {
    if t.is_infinite() {
        "inf".into()
    } else {
        t.to_string()
    }
}

impl SweepReport {
    /// CSV with header `threshold,accuracy,avg_timestep,avg_synops`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,accuracy,avg_timestep,avg_synops\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                fmt_threshold(r.threshold),
                r.accuracy,
                r.avg_timestep,
                r.avg_synops
            );
        }
        out
    }
}

/// CSV with header `timestep,accuracy`.
pub fn anytime_csv(curve: &[f64]) -> String {
    let mut out = String::from("timestep,accuracy\n");
    for (t, a) in curve.iter().enumerate() {
        let _ = writeln!(out, "{},{}", t + 1, a);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snn::{Input, NetworkSpec};
    use proptest::prelude::*;

    fn trace_with(scores: Vec<f64>) -> SampleTrace {
        let n = scores.len();
        SampleTrace {
            label: 0,
            predictions: vec![0; n],
            cum_synops: (1..=n as u64).map(|t| 10 * t).collect(),
            scores,
        }
    }

    #[test]
    fn first_crossing_examples() {
        assert_eq!(first_crossing(&[0.6, 0.92, 0.97], 0.9), 2);
        assert_eq!(first_crossing(&[0.6, 0.92, 0.97], 0.0), 1);
        assert_eq!(first_crossing(&[0.6, 0.92, 0.97], f64::INFINITY), 3);
        assert_eq!(first_crossing(&[0.6, 0.92, 1.0], 1.0), 3);
    }

    #[test]
    fn policy_validation() {
        assert!(CutoffPolicy::new(-0.1, 3).is_err());
        assert!(CutoffPolicy::new(0.5, 0).is_err());
        assert!(CutoffPolicy::new(f64::INFINITY, 3).is_ok());
    }

    #[test]
    fn synops_additive_over_time() {
        let rec = ForwardRecord { synops: vec![vec![0, 30], vec![0, 20]], ..Default::default() };
        assert_eq!(synaptic_ops(&rec, 1).unwrap(), 30);
        assert_eq!(synaptic_ops(&rec, 2).unwrap(), 50);
        assert_eq!(synaptic_ops(&rec, 0).unwrap(), 0);
        assert!(matches!(synaptic_ops(&rec, 3), Err(Error::Range(_))));
    }

    #[test]
    fn sweep_edge_thresholds() {
        let traces = vec![trace_with(vec![0.5, 0.7, 0.95]), trace_with(vec![0.99, 0.99, 0.99])];
        let rep = threshold_sweep(&traces, &[0.0, 0.9, f64::INFINITY]).unwrap();
        assert_eq!(rep.rows[0].avg_timestep, 1.0);
        assert_eq!(rep.rows[1].avg_timestep, 2.0);
        assert_eq!(rep.rows[2].avg_timestep, 3.0);
        assert_eq!(rep.rows[1].avg_synops, 20.0);
        assert!(threshold_sweep(&traces, &[]).is_err());
        assert!(rep.to_csv().lines().last().unwrap().starts_with("inf,"));
    }

    #[test]
    fn grid_is_inclusive() {
        let g = threshold_grid(0.8, 1.0, 20);
        assert_eq!(g.len(), 20);
        assert_eq!(g[0], 0.8);
        assert!((g[19] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cutoff_matches_trace_and_fixed_inference() {
        let net = Network::new(NetworkSpec::toy(3)).unwrap();
        let params = Params::init(&net.plan, 11);
        let bins = Tensor::new(
            &[5, 2, 16, 16],
            (0..5 * 512).map(|i| (i * 2654435761usize).is_multiple_of(5) as u8 as f64).collect(),
        )
        .unwrap();
        let sample = Sample { input: Input::Events(bins), label: 1 };
        let tr = trace_sample(&net, &params, &sample, 5, ScoreMode::Instantaneous).unwrap();
        for th in [0.0, 0.4, 0.6, 0.9, f64::INFINITY] {
            let policy = CutoffPolicy::new(th, 5).unwrap();
            let r = cutoff_run(&net, &params, &sample, policy, ScoreMode::Instantaneous).unwrap();
            assert_eq!(r, tr.exit(th), "threshold {th}");
        }
        let fixed = net.evaluate(&params, &sample.input, 5).unwrap();
        let inf = cutoff_run(
            &net,
            &params,
            &sample,
            CutoffPolicy::new(f64::INFINITY, 5).unwrap(),
            ScoreMode::Instantaneous,
        )
        .unwrap();
        assert_eq!(inf.exit_t, 5);
        assert_eq!(inf.prediction, fixed[4].argmax());
        let p = ops::softmax(&fixed[4]).unwrap();
        assert_eq!(inf.max_score.to_bits(), p.data()[p.argmax()].to_bits());
    }

    #[test]
    fn cumulative_scores_use_running_mean() {
        let mut s = Scorer::new(ScoreMode::Cumulative);
        s.observe(&Tensor::vector(vec![2.0, 0.0])).unwrap();
        let (score, k) = s.observe(&Tensor::vector(vec![0.0, 0.0])).unwrap();
        let expect = ops::softmax(&Tensor::vector(vec![1.0, 0.0])).unwrap();
        assert_eq!((score, k), (expect.data()[0], 0));
    }

    proptest! {
        #[test]
        fn exit_is_monotone_in_threshold(
            scores in prop::collection::vec(0.0f64..1.0, 1..12),
            a in 0.0f64..1.2,
            b in 0.0f64..1.2,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(first_crossing(&scores, lo) <= first_crossing(&scores, hi));
        }
    }
}
