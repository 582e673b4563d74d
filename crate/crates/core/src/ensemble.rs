//! Ensemble mean and per-timestep spread of independently initialised members.

use std::fmt::Write as _;

use crate::autodiff::{ops, Tensor};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::snn::{Network, Params};

/// Elementwise mean `μ = (1/M) Σ f_i`, accumulated as offsets from the first
/// member so that identical members yield exactly that member.
pub fn ensemble_mean(outputs: &[Tensor]) -> Result<Tensor> {
    let first = outputs.first().ok_or_else(|| Error::Contract("ensemble has no members".into()))?;
    let mut acc = Tensor::zeros(first.shape());
    for o in &outputs[1..] {
        acc.add_assign(&o.zip_map(first, |a, b| a - b)?);
    }
    let m = outputs.len() as f64;
    first.zip_map(&acc, |f, d| f + d / m)
}

/// `σ² = (1/M) Σ ‖f_i − μ‖₂`; with `squared` the norms are squared.
pub fn ensemble_variance(outputs: &[Tensor], mu: &Tensor, squared: bool) -> Result<f64> {
    if outputs.is_empty() {
        return Err(Error::Contract("ensemble has no members".into()));
    }
    let mut acc = 0.0;
    for o in outputs {
        let d = o.zip_map(mu, |a, b| a - b)?;
        let n = ops::l2_norm(&d, 0.0);
        acc += if squared { n * n } else { n };
    }
    Ok(acc / outputs.len() as f64)
}

/// Members sharing one network, each with its own parameters.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub net: Network,
    pub members: Vec<Params>,
}

impl Ensemble {
    pub fn new(net: Network, members: Vec<Params>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Contract("ensemble has no members".into()));
        }
        for m in &members {
            m.check_against(&net.plan)?;
        }
        Ok(Ensemble { net, members })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyCurve {
    /// Dataset-mean σ²(t), t = 1..T.
    pub sigma2: Vec<f64>,
    /// Mean of `sigma2` over timesteps.
    pub avg_sigma2: f64,
    /// Accuracy of `argmax μ(T)`.
    pub final_accuracy: f64,
}

pub fn uncertainty_curve(
    ensemble: &Ensemble,
    dataset: &[Sample],
    timesteps: usize,
    squared: bool,
) -> Result<UncertaintyCurve> {
    if dataset.is_empty() {
        return Err(Error::Contract("uncertainty curve of an empty dataset".into()));
    }
    let mut sigma2 = vec![0.0; timesteps];
    let mut hits = 0usize;
    for sample in dataset {
        let per_member: Vec<Vec<Tensor>> = ensemble
            .members
            .iter()
            .map(|p| ensemble.net.evaluate(p, &sample.input, timesteps))
            .collect::<Result<_>>()?;
        for (t, s) in sigma2.iter_mut().enumerate() {
            let outs: Vec<Tensor> = per_member.iter().map(|m| m[t].clone()).collect();
            let mu = ensemble_mean(&outs)?;
            *s += ensemble_variance(&outs, &mu, squared)?;
            if t + 1 == timesteps && mu.argmax() == sample.label {
                hits += 1;
            }
        }
    }
    let n = dataset.len() as f64;
    sigma2.iter_mut().for_each(|s| *s /= n);
    Ok(UncertaintyCurve {
        avg_sigma2: sigma2.iter().sum::<f64>() / timesteps as f64,
        final_accuracy: hits as f64 / n,
        sigma2,
    })
}

impl UncertaintyCurve {
    /// CSV with header `timestep,sigma2`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestep,sigma2\n");
        for (t, s) in self.sigma2.iter().enumerate() {
            let _ = writeln!(out, "{},{}", t + 1, s);
        }
        out
    }

    /// One-row CSV with header `avg_sigma2,final_accuracy`.
    pub fn summary_csv(&self) -> String {
        format!("avg_sigma2,final_accuracy\n{},{}\n", self.avg_sigma2, self.final_accuracy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mean_examples() {
        let a = Tensor::vector(vec![1.0, 0.0]);
        let b = Tensor::vector(vec![0.0, 1.0]);
        assert_eq!(ensemble_mean(std::slice::from_ref(&a)).unwrap(), a);
        assert_eq!(ensemble_mean(&[a.clone(), b]).unwrap().data(), &[0.5, 0.5]);
        assert_eq!(ensemble_mean(&[a.clone(), a.clone(), a.clone()]).unwrap(), a);
        assert!(ensemble_mean(&[]).is_err());
    }

    #[test]
    fn variance_examples() {
        let a = Tensor::vector(vec![1.0, 0.0]);
        let b = Tensor::vector(vec![0.0, 1.0]);
        let outs = [a.clone(), b];
        let mu = ensemble_mean(&outs).unwrap();
        assert!((ensemble_variance(&outs, &mu, false).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((ensemble_variance(&outs, &mu, true).unwrap() - 0.5).abs() < 1e-15);
        let same = [a.clone(), a.clone()];
        assert_eq!(ensemble_variance(&same, &a, false).unwrap(), 0.0);
        assert!(ensemble_variance(&same, &Tensor::vector(vec![0.0; 3]), false).is_err());
    }

    fn members() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..5).prop_flat_map(|k| prop::collection::vec(prop::collection::vec(-5.0f64..5.0, k), 1..6))
    }

    proptest! {
        #[test]
        fn variance_homogeneous_and_permutation_invariant(outs in members(), c in 0.0f64..4.0) {
            let ts: Vec<Tensor> = outs.iter().map(|o| Tensor::vector(o.clone())).collect();
            let mu = ensemble_mean(&ts).unwrap();
            let v = ensemble_variance(&ts, &mu, false).unwrap();
            prop_assert!(v >= 0.0);
            let scaled: Vec<Tensor> = ts.iter().map(|t| t.map(|x| c * x)).collect();
            let smu = ensemble_mean(&scaled).unwrap();
            prop_assert!((ensemble_variance(&scaled, &smu, false).unwrap() - c * v).abs() < 1e-9);
            let mut rev = ts.clone();
            rev.reverse();
            let rmu = ensemble_mean(&rev).unwrap();
            prop_assert!((ensemble_variance(&rev, &rmu, false).unwrap() - v).abs() < 1e-12);
        }

        #[test]
        fn mean_is_affine(outs in members(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let ts: Vec<Tensor> = outs.iter().map(|o| Tensor::vector(o.clone())).collect();
            let mapped: Vec<Tensor> = ts.iter().map(|t| t.map(|x| a * x + b)).collect();
            let lhs = ensemble_mean(&mapped).unwrap();
            let rhs = ensemble_mean(&ts).unwrap().map(|x| a * x + b);
            for (x, y) in lhs.data().iter().zip(rhs.data()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn variance_zero_iff_members_agree(outs in members()) {
            let ts: Vec<Tensor> = outs.iter().map(|o| Tensor::vector(o.clone())).collect();
            let mu = ensemble_mean(&ts).unwrap();
            let v = ensemble_variance(&ts, &mu, false).unwrap();
            let agree = ts.iter().all(|t| t == &ts[0]);
            prop_assert_eq!(v == 0.0, agree);
        }
    }
}
