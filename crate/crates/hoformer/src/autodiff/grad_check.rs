//! Central finite-difference verification of reverse-mode gradients.

use super::{backward, AutodiffError, Tape, Var};
use crate::tensor::DenseTensor;

/// Worst relative error for one named parameter tensor.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    /// Worst relative error across all parameters.
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compare the reverse-mode gradient of `build` against central finite
/// differences `(f(p+eps e) - f(p-eps e)) / 2eps`, elementwise per parameter.
///
/// `build` must construct the scalar loss from the given parameter
/// variables; it is re-invoked on fresh tapes for every perturbation, so it
/// has to be deterministic.
pub fn grad_check<F>(
    build: F,
    params: &[(String, DenseTensor)],
    eps: f64,
) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&Tape, &[Var]) -> Var,
{
    // analytic gradients
    let tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|(_, p)| tape.param(p.clone())).collect();
    let loss = build(&tape, &vars);
    if loss.value().data().iter().any(|x| !x.is_finite()) {
        return Err(AutodiffError::NonFinite { context: "grad_check loss" });
    }
    let grads = backward(&loss)?;
    let analytic: Vec<DenseTensor> = vars.iter().map(|v| grads.of(v)).collect();

    let eval = |values: &[DenseTensor]| -> Result<f64, AutodiffError> {
        let tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|p| tape.constant(p.clone())).collect();
        let out = build(&tape, &vars).scalar_value();
        if !out.is_finite() {
            return Err(AutodiffError::NonFinite { context: "grad_check evaluation" });
        }
        Ok(out)
    };

    let mut entries = Vec::with_capacity(params.len());
    let mut work: Vec<DenseTensor> = params.iter().map(|(_, p)| p.clone()).collect();
    for (pi, (name, _)) in params.iter().enumerate() {
        let mut worst = 0.0f64;
        for i in 0..work[pi].len() {
            let orig = work[pi].data()[i];
            work[pi].data_mut()[i] = orig + eps;
            let plus = eval(&work)?;
            work[pi].data_mut()[i] = orig - eps;
            let minus = eval(&work)?;
            work[pi].data_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            let an = analytic[pi].data()[i];
            worst = worst.max(rel_err(an, fd));
        }
        entries.push(GradCheckEntry { name: name.clone(), max_rel_err: worst });
    }
    Ok(GradCheckReport { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn quadratic_is_exact_to_roundoff() {
        let mut rng = Rng::seed_from(1);
        let x = DenseTensor::from_fn(&[5], |_| rng.normal());
        let report = grad_check(
            |_, vars| vars[0].mul(&vars[0]).sum_all(),
            &[("x".into(), x)],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err() < 1e-9, "rel err {}", report.max_rel_err());
    }

    #[test]
    fn softmax_cross_entropy_composite() {
        let mut rng = Rng::seed_from(2);
        let logits = DenseTensor::from_fn(&[3, 4], |_| rng.normal());
        let target = {
            let mut t = DenseTensor::zeros(&[3, 4]);
            t.set(&[0, 1], 1.0);
            t.set(&[1, 3], 1.0);
            t.set(&[2, 0], 1.0);
            t
        };
        let report = grad_check(
            move |tape, vars| {
                let y = tape.constant(target.clone());
                vars[0].softmax_rows().ln().mul(&y).sum_all().scale(-1.0)
            },
            &[("logits".into(), logits)],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err() < 1e-6, "rel err {}", report.max_rel_err());
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let x = DenseTensor::from_vec(&[1], vec![-1.0]).unwrap();
        let result = grad_check(|_, vars| vars[0].ln().sum_all(), &[("x".into(), x)], 1e-5);
        assert!(matches!(result, Err(AutodiffError::NonFinite { .. })));
    }
}
