use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::lif::{lif_step, reset_state, LifState, SpikeMode};
use super::spec::{Layer, NetworkSpec, Params, Plan};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Network input for one sample.
#[derive(Clone, Debug, PartialEq)]
pub enum Input {
    /// Per-timestep event bins `[T, c, h, w]`.
    Events(Tensor),
    /// One analog frame `[c, h, w]` presented unchanged at every timestep.
    Frame(Tensor),
}

impl Input {
    pub fn available_steps(&self) -> Option<usize> {
        match self {
            Input::Events(t) => Some(t.shape()[0]),
            Input::Frame(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    pub spike_mode: SpikeMode,
    /// Keep per-step LIF state handles (needed for STF).
    pub keep_states: bool,
    /// Inverted dropout on the last dense layer's spikes: `(rate, seed)`.
    /// One mask is drawn per sample and reused at every timestep.
    pub dropout: Option<(f64, u64)>,
}

/// Result of unrolling a network over `T` timesteps.
#[derive(Clone, Debug, Default)]
pub struct ForwardRecord {
    /// Head current `f(X(t))` per timestep.
    pub outputs: Vec<Var>,
    /// `[t][spiking layer]` spike totals.
    pub spike_counts: Vec<Vec<u64>>,
    /// `[t][source]` synaptic operations; source 0 is the input, then one per
    /// spiking layer.
    pub synops: Vec<Vec<u64>>,
    /// `[t][spiking layer]`, empty unless `keep_states` was set.
    pub states: Vec<Vec<LifState>>,
}

impl ForwardRecord {
    pub fn logits(&self, tape: &Tape) -> Vec<Tensor> {
        self.outputs.iter().map(|&v| tape.value(v).clone()).collect()
    }

    pub fn timesteps(&self) -> usize {
        self.outputs.len()
    }
}

/// A validated spec together with its resolved plan.
#[derive(Clone, Debug)]
pub struct Network {
    pub spec: NetworkSpec,
    pub plan: Plan,
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        let plan = Plan::new(&spec)?;
        Ok(Network { spec, plan })
    }

    /// Records parameters on the tape, differentiable when `trainable`.
    pub fn bind(&self, tape: &mut Tape, params: &Params, trainable: bool) -> Result<Vec<Var>> {
        params.check_against(&self.plan)?;
        Ok(params
            .tensors
            .iter()
            .map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect())
    }

    /// Starts a fresh (zero-state) unroll for one sample.
    pub fn unroll<'a>(
        &'a self,
        tape: &mut Tape,
        params: &'a [Var],
        input: &'a Input,
        opts: ForwardOptions,
    ) -> Result<Unroll<'a>> {
        let expect = &self.spec.input;
        let sample_shape = match input {
            Input::Events(t) if t.shape().len() == 4 => &t.shape()[1..],
            Input::Frame(t) => t.shape(),
            Input::Events(t) => {
                return Err(Error::Dimension(format!("event input must be T×c×h×w, got {:?}", t.shape())))
            }
        };
        if sample_shape != expect {
            return Err(Error::Dimension(format!(
                "input {sample_shape:?} does not match network input {expect:?}"
            )));
        }
        if params.len() != self.plan.param_shapes.len() {
            return Err(Error::Integrity("parameter count does not match plan".into()));
        }
        let states = reset_state(tape, &self.plan);
        let dropout_mask = match opts.dropout {
            Some((rate, seed)) if rate > 0.0 => self.dropout_mask(tape, rate, seed),
            _ => None,
        };
        Ok(Unroll {
            net: self,
            params,
            input,
            opts,
            states,
            frame_z1: None,
            dropout_mask,
            t: 0,
            record: ForwardRecord::default(),
        })
    }

    fn dropout_mask(&self, tape: &mut Tape, rate: f64, seed: u64) -> Option<(usize, Var)> {
        let layer = self.spec.layers.iter().rposition(|l| matches!(l, Layer::Dense { .. }))?;
        let shape = &self.plan.layers[layer].output;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - rate);
        let n = shape.iter().product();
        let mask = (0..n).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
        Some((layer, tape.constant(Tensor::new(shape, mask).expect("shape"))))
    }

    /// Unrolls `timesteps` steps from a zero state.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &[Var],
        input: &Input,
        timesteps: usize,
        opts: ForwardOptions,
    ) -> Result<ForwardRecord> {
        if timesteps == 0 {
            return Err(Error::Contract("need at least one timestep".into()));
        }
        let mut run = self.unroll(tape, params, input, opts)?;
        for _ in 0..timesteps {
            run.step(tape)?;
        }
        Ok(run.finish())
    }

    /// Forward pass on plain parameter values, returning per-step logits.
    pub fn evaluate(&self, params: &Params, input: &Input, timesteps: usize) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, params, false)?;
        let rec = self.forward(&mut tape, &vars, input, timesteps, ForwardOptions::default())?;
        Ok(rec.logits(&tape))
    }
}

/// Encoder current `Z¹(t)` for timestep `t` (0-based): `W¹X(t) + b¹` for
/// events, `W¹X̄ + b¹` for frames.
pub fn encode_input(tape: &mut Tape, net: &Network, params: &[Var], input: &Input, t: usize) -> Result<Var> {
    let x = match input {
        Input::Events(bins) => {
            let steps = bins.shape()[0];
            if t >= steps {
                return Err(Error::Range(format!(
                    "timestep {} requested but only {steps} event bins exist",
                    t + 1
                )));
            }
            tape.constant(bins.index_axis0(t)?)
        }
        Input::Frame(frame) => tape.constant(frame.clone()),
    };
    let mut x = x;
    for li in 0..net.plan.encoder {
        x = apply_passive(tape, net, li, x)?;
    }
    weighted(tape, net, params, net.plan.encoder, x)
}

fn apply_passive(tape: &mut Tape, net: &Network, li: usize, x: Var) -> Result<Var> {
    match net.spec.layers[li] {
        Layer::AvgPool { size } => tape.avg_pool2d(x, size),
        Layer::Flatten => tape.reshape(x, &net.plan.layers[li].output),
        _ => unreachable!("weighted layer {li} handled elsewhere"),
    }
}

fn weighted(tape: &mut Tape, net: &Network, params: &[Var], li: usize, x: Var) -> Result<Var> {
    let lp = &net.plan.layers[li];
    let (wi, bi) = lp.params.expect("weighted layer");
    match net.spec.layers[li] {
        Layer::Conv { stride, padding, .. } => {
            let c = tape.conv2d(x, params[wi], stride, padding)?;
            tape.channel_bias(c, params[bi])
        }
        _ => {
            let row = tape.reshape(x, &[1, lp.input[0]])?;
            let m = tape.matmul(row, params[wi])?;
            let flat = tape.reshape(m, &lp.output)?;
            tape.add(flat, params[bi])
        }
    }
}

/// Step-by-step unroll of one sample; state persists across `step` calls.
pub struct Unroll<'a> {
    net: &'a Network,
    params: &'a [Var],
    input: &'a Input,
    opts: ForwardOptions,
    states: Vec<LifState>,
    frame_z1: Option<Var>,
    dropout_mask: Option<(usize, Var)>,
    t: usize,
    record: ForwardRecord,
}

impl<'a> Unroll<'a> {
    pub fn timestep(&self) -> usize {
        self.t
    }

    pub fn record(&self) -> &ForwardRecord {
        &self.record
    }

    pub fn finish(self) -> ForwardRecord {
        self.record
    }

    /// Advances one timestep and returns the head output for it.
    pub fn step(&mut self, tape: &mut Tape) -> Result<Var> {
        let net = self.net;
        let plan = &net.plan;
        let mut synops = vec![0u64; plan.spiking.len() + 1];
        let z1 = match self.input {
            Input::Frame(_) => match self.frame_z1 {
                Some(z) => z,
                None => {
                    let z = encode_input(tape, net, self.params, self.input, self.t)?;
                    self.frame_z1 = Some(z);
                    z
                }
            },
            Input::Events(bins) => {
                let bin = bins.index_axis0(self.t.min(bins.shape()[0].saturating_sub(1)))?;
                synops[0] = weighted_count(bin.data(), &plan.fan_out[0]);
                encode_input(tape, net, self.params, self.input, self.t)?
            }
        };

        let mut spike_counts = Vec::with_capacity(plan.spiking.len());
        let mut step_states = Vec::with_capacity(plan.spiking.len());
        let mut x = z1;
        let mut si = 0;
        let mut logits = None;
        for li in plan.encoder..net.spec.layers.len() {
            let layer = &net.spec.layers[li];
            match layer {
                Layer::AvgPool { .. } | Layer::Flatten => x = apply_passive(tape, net, li, x)?,
                Layer::Conv { lif, .. } | Layer::Dense { lif, .. } => {
                    let z = if li == plan.encoder { x } else { weighted(tape, net, self.params, li, x)? };
                    let state = lif_step(tape, self.states[si].residual, z, lif, self.opts.spike_mode)
                        .map_err(|e| at_layer(li, e))?;
                    self.states[si] = state;
                    let spikes = tape.value(state.spikes).data();
                    spike_counts.push(spikes.iter().filter(|&&s| s != 0.0).count() as u64);
                    synops[si + 1] = weighted_count(spikes, &plan.fan_out[si + 1]);
                    if self.opts.keep_states {
                        step_states.push(state);
                    }
                    x = state.spikes;
                    if let Some((dl, mask)) = self.dropout_mask {
                        if dl == li {
                            x = tape.mul(x, mask)?;
                        }
                    }
                    si += 1;
                }
                Layer::Head { .. } => {
                    logits = Some(weighted(tape, net, self.params, li, x)?);
                }
            }
        }
        let logits = logits.expect("head is last");
        self.t += 1;
        self.record.outputs.push(logits);
        self.record.spike_counts.push(spike_counts);
        self.record.synops.push(synops);
        if self.opts.keep_states {
            self.record.states.push(step_states);
        }
        Ok(logits)
    }
}

fn at_layer(li: usize, e: Error) -> Error {
    match e {
        Error::Dimension(m) => Error::Dimension(format!("layer {li}: {m}")),
        other => other,
    }
}

/// `Σ_i round(count_i) · fan_out_i`.
fn weighted_count(counts: &[f64], fan_out: &[u32]) -> u64 {
    counts
        .iter()
        .zip(fan_out)
        .filter(|(&c, _)| c != 0.0)
        .map(|(&c, &f)| c.round().max(0.0) as u64 * f as u64)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snn::spec::LifParams;

    fn single_neuron(tau: f64) -> Network {
        Network::new(NetworkSpec {
            input: [1, 1, 1],
            layers: vec![
                Layer::Flatten,
                Layer::Dense { units: 1, lif: LifParams { tau, v_thr: 1.0, surrogate_width: 1.0 } },
                Layer::Head { classes: 1 },
            ],
        })
        .unwrap()
    }

    fn identity_params() -> Params {
        Params {
            tensors: vec![
                Tensor::new(&[1, 1], vec![1.0]).unwrap(),
                Tensor::vector(vec![0.0]),
                Tensor::new(&[1, 1], vec![1.0]).unwrap(),
                Tensor::vector(vec![0.0]),
            ],
        }
    }

    #[test]
    fn constant_drive_fires_on_third_step() {
        let net = single_neuron(0.5);
        let mut tape = Tape::new();
        let p = net.bind(&mut tape, &identity_params(), false).unwrap();
        let input = Input::Frame(Tensor::new(&[1, 1, 1], vec![0.6]).unwrap());
        let opts = ForwardOptions { keep_states: true, ..Default::default() };
        let rec = net.forward(&mut tape, &p, &input, 3, opts).unwrap();
        let v: Vec<f64> = rec.states.iter().map(|s| tape.value(s[0].v).item()).collect();
        assert!((v[0] - 0.6).abs() < 1e-12);
        assert!((v[1] - 0.9).abs() < 1e-12);
        assert!((v[2] - 1.05).abs() < 1e-12);
        let spikes: Vec<u64> = rec.spike_counts.iter().map(|c| c[0]).collect();
        assert_eq!(spikes, vec![0, 0, 1]);
    }

    #[test]
    fn event_encoder_identity() {
        let net = single_neuron(0.5);
        let mut tape = Tape::new();
        let p = net.bind(&mut tape, &identity_params(), false).unwrap();
        let input = Input::Events(Tensor::new(&[1, 1, 1, 1], vec![2.0]).unwrap());
        let z = encode_input(&mut tape, &net, &p, &input, 0).unwrap();
        assert_eq!(tape.value(z).data(), &[2.0]);
        assert!(matches!(encode_input(&mut tape, &net, &p, &input, 1), Err(Error::Range(_))));
    }

    #[test]
    fn frame_current_identical_at_every_step() {
        let net = Network::new(NetworkSpec::toy(3)).unwrap();
        let plan = &net.plan;
        let params = Params::init(plan, 1);
        let frame = Tensor::new(&[2, 16, 16], (0..512).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap();
        let input = Input::Frame(frame);
        let mut tape = Tape::new();
        let p = net.bind(&mut tape, &params, false).unwrap();
        let a = encode_input(&mut tape, &net, &p, &input, 0).unwrap();
        let b = encode_input(&mut tape, &net, &p, &input, 5).unwrap();
        assert_eq!(tape.value(a), tape.value(b));
    }

    #[test]
    fn dead_network_is_silent() {
        let net = Network::new(NetworkSpec::toy(3)).unwrap();
        let zeros = Params { tensors: net.plan.param_shapes.iter().map(|s| Tensor::zeros(s)).collect() };
        let input = Input::Events(Tensor::ones(&[4, 2, 16, 16]));
        let mut tape = Tape::new();
        let p = net.bind(&mut tape, &zeros, false).unwrap();
        let rec = net.forward(&mut tape, &p, &input, 4, ForwardOptions::default()).unwrap();
        assert!(rec.logits(&tape).iter().all(|l| l.data().iter().all(|&v| v == 0.0)));
        assert!(rec.spike_counts.iter().flatten().all(|&c| c == 0));
    }

    #[test]
    fn input_shape_mismatch_is_rejected() {
        let net = Network::new(NetworkSpec::toy(3)).unwrap();
        let params = Params::init(&net.plan, 0);
        let bad = Input::Events(Tensor::zeros(&[2, 2, 8, 8]));
        assert!(matches!(net.evaluate(&params, &bad, 2), Err(Error::Dimension(_))));
        let short = Input::Events(Tensor::zeros(&[2, 2, 16, 16]));
        assert!(matches!(net.evaluate(&params, &short, 3), Err(Error::Range(_))));
    }
}
