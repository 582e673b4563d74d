use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Absolute floor on the denominator of the relative error.
pub const ABS_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(tensor, entry)` where the maximum was observed.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub entries: usize,
}

/// Compares tape gradients of `f` against central differences
/// `(f(p + h·e_i) − f(p − h·e_i)) / 2h`, entry by entry.
pub fn finite_difference_check<F>(f: F, params: &[Tensor], h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(Error::Contract(format!("step must be positive, got {h}")));
    }
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let root = f(&mut tape, &vars)?;
        let v = tape.value(root).item();
        if !v.is_finite() {
            return Err(Error::Numeric(format!("objective evaluated to {v}")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let root = f(&mut tape, &vars)?;
    tape.backward(root)?;
    let analytic: Vec<Tensor> =
        vars.iter().map(|&v| tape.grad(v).cloned().expect("param gradient")).collect();

    let mut report = GradCheck { max_rel_error: 0.0, worst: None, analytic: 0.0, numeric: 0.0, entries: 0 };
    let mut probe = params.to_vec();
    for (ti, param) in params.iter().enumerate() {
        for ei in 0..param.len() {
            let base = param.data()[ei];
            probe[ti].data_mut()[ei] = base + h;
            let up = eval(&probe)?;
            probe[ti].data_mut()[ei] = base - h;
            let down = eval(&probe)?;
            probe[ti].data_mut()[ei] = base;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[ti].data()[ei];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(ABS_FLOOR);
            report.entries += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((ti, ei));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_to_roundoff() {
        let p = Tensor::vector(vec![0.3, -1.2, 2.0]);
        let r = finite_difference_check(
            |t, v| {
                let sq = t.square(v[0])?;
                let s = t.sum(sq)?;
                t.affine(s, 1.5, 0.25)
            },
            &[p],
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error <= 1e-8, "{r:?}");
    }

    #[test]
    fn constant_objective_has_zero_error() {
        let r = finite_difference_check(
            |t, _| Ok(t.constant(Tensor::scalar(4.0))),
            &[Tensor::vector(vec![1.0, 2.0])],
            1e-5,
        )
        .unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert_eq!(r.entries, 2);
    }

    #[test]
    fn non_finite_objective_is_reported() {
        let err = finite_difference_check(
            |t, v| {
                let s = t.sum(v[0])?;
                let z = t.constant(Tensor::scalar(0.0));
                t.div(s, z)
            },
            &[Tensor::vector(vec![1.0])],
            1e-5,
        );
        assert!(matches!(err, Err(Error::Numeric(_))));
    }
}
