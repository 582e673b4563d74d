use super::spec::{LifParams, Plan};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;

/// Forward form of the firing nonlinearity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SpikeMode {
    /// Exact threshold; backward uses the boxcar surrogate.
    #[default]
    Hard,
    /// Clamped-linear forward whose true derivative is the boxcar. Only used
    /// to check the surrogate path against finite differences.
    Smoothed,
}

/// Membrane potential before firing, residual after firing, and spikes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LifState {
    pub v: Var,
    pub residual: Var,
    pub spikes: Var,
}

pub fn spike_fire(tape: &mut Tape, v: Var, lif: &LifParams, mode: SpikeMode) -> Result<Var> {
    match mode {
        SpikeMode::Hard => tape.spike_fire(v, lif.v_thr, lif.surrogate_width),
        SpikeMode::Smoothed => tape.clamp_linear(v, lif.v_thr, lif.surrogate_width),
    }
}

/// One leaky integrate-and-fire update:
/// `v = τ·residual + z`, `spikes = [v ≥ v_thr]`, `residual' = (1 − spikes)·v`.
pub fn lif_step(
    tape: &mut Tape,
    residual: Var,
    z: Var,
    lif: &LifParams,
    mode: SpikeMode,
) -> Result<LifState> {
    let decayed = tape.scale(residual, lif.tau)?;
    let v = tape.add(decayed, z)?;
    let spikes = spike_fire(tape, v, lif, mode)?;
    let keep = tape.affine(spikes, -1.0, 1.0)?;
    let residual = tape.mul(keep, v)?;
    Ok(LifState { v, residual, spikes })
}

/// Zeroed states for every spiking layer of `plan`.
pub fn reset_state(tape: &mut Tape, plan: &Plan) -> Vec<LifState> {
    plan.spiking
        .iter()
        .map(|&l| {
            let zero = tape.constant(Tensor::zeros(&plan.layers[l].output));
            LifState { v: zero, residual: zero, spikes: zero }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_step(tau: f64, residual: f64, z: f64) -> (f64, f64, f64) {
        let mut t = Tape::new();
        let r = t.constant(Tensor::scalar(residual));
        let z = t.constant(Tensor::scalar(z));
        let lif = LifParams { tau, v_thr: 1.0, surrogate_width: 1.0 };
        let s = lif_step(&mut t, r, z, &lif, SpikeMode::Hard).unwrap();
        (t.value(s.v).item(), t.value(s.spikes).item(), t.value(s.residual).item())
    }

    #[test]
    fn lif_step_examples() {
        let (v, s, r) = scalar_step(0.5, 0.6, 0.8);
        assert!((v - 1.1).abs() < 1e-15);
        assert_eq!((s, r), (1.0, 0.0));
        let (v, s, r) = scalar_step(0.5, 0.6, 0.2);
        assert!((v - 0.5).abs() < 1e-15);
        assert_eq!(s, 0.0);
        assert!((r - 0.5).abs() < 1e-15);
        assert_eq!(scalar_step(0.5, 0.0, 0.0), (0.0, 0.0, 0.0));
    }

    #[test]
    fn spike_at_exact_threshold() {
        let (_, s, r) = scalar_step(1.0, 0.0, 1.0);
        assert_eq!((s, r), (1.0, 0.0));
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let mut t = Tape::new();
        let r = t.constant(Tensor::zeros(&[3]));
        let z = t.constant(Tensor::zeros(&[4]));
        let err = lif_step(&mut t, r, z, &LifParams::default(), SpikeMode::Hard);
        assert!(matches!(err, Err(crate::Error::Dimension(_))));
    }

    fn vec_step(tau: f64, residual: &[f64], z: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut t = Tape::new();
        let r = t.constant(Tensor::vector(residual.to_vec()));
        let z = t.constant(Tensor::vector(z.to_vec()));
        let lif = LifParams { tau, v_thr: 1.0, surrogate_width: 1.0 };
        let s = lif_step(&mut t, r, z, &lif, SpikeMode::Hard).unwrap();
        let get = |v: Var| t.value(v).data().to_vec();
        (get(s.v), get(s.spikes), get(s.residual))
    }

    proptest::proptest! {
        #[test]
        fn threshold_plus_decayed_residual_bounds_v(
            tau in 0.05f64..=1.0,
            pairs in proptest::collection::vec((0.0f64..2.0, 0.0f64..2.0), 1..16),
        ) {
            let (r, z): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let (v, spikes, residual) = vec_step(tau, &r, &z);
            for i in 0..v.len() {
                proptest::prop_assert!(spikes[i] * 1.0 + tau * residual[i] <= v[i] + 1e-12);
                if spikes[i] == 1.0 {
                    proptest::prop_assert_eq!(residual[i], 0.0);
                }
            }
        }

        #[test]
        fn perfect_integrator_decomposes_exactly(
            pairs in proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..16),
        ) {
            let (r, z): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let (v, spikes, residual) = vec_step(1.0, &r, &z);
            for i in 0..v.len() {
                let rebuilt = spikes[i] + residual[i];
                if spikes[i] == 0.0 || v[i] == 1.0 {
                    proptest::prop_assert_eq!(rebuilt, v[i]);
                } else {
                    proptest::prop_assert!(rebuilt < v[i]);
                }
            }
        }
    }

    #[test]
    fn clipped_excess_never_returns() {
        // fires with v = 1.7; the 0.7 above threshold is gone next step
        let (_, s, r) = scalar_step(0.5, 0.0, 1.7);
        assert_eq!((s, r), (1.0, 0.0));
        let (v, _, _) = scalar_step(0.5, r, 0.3);
        assert_eq!(v, 0.3);
    }
}
