//! Adam optimizer with bias correction.

use super::AutodiffError;
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// First/second moment accumulators, aligned with the parameter list.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    m: Vec<DenseTensor>,
    v: Vec<DenseTensor>,
}

impl AdamState {
    pub fn new(params: &[DenseTensor]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| DenseTensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| DenseTensor::zeros(p.shape())).collect(),
        }
    }
}

/// One Adam update. Deterministic given inputs; errors on shape mismatch or
/// non-finite gradients.
pub fn adam_step(
    params: &mut [DenseTensor],
    grads: &[DenseTensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), AutodiffError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(AutodiffError::ShapeMismatch { context: "adam parameter count" });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(AutodiffError::ShapeMismatch { context: "adam parameter/gradient" });
        }
        if g.data().iter().any(|x| !x.is_finite()) {
            return Err(AutodiffError::NonFinite { context: "adam gradient" });
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let pd = p.data_mut();
        for i in 0..pd.len() {
            let gi = g.data()[i];
            let mi = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * gi;
            let vi = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            pd[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![DenseTensor::from_vec(&[2], vec![1.5, -0.5]).unwrap()];
        let grads = vec![DenseTensor::zeros(&[2])];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, &AdamConfig::default()).unwrap();
        assert_eq!(params[0].data(), &[1.5, -0.5]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_matches_hand_evaluated_recurrence() {
        // from zero state, the update is -lr * g / (|g| + eps)
        let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
        let g = 0.3;
        let mut params = vec![DenseTensor::scalar(1.0)];
        let grads = vec![DenseTensor::scalar(g)];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
        let m_hat = g; // (1-b1)g / (1-b1)
        let v_hat = g * g;
        let expected = 1.0 - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        assert_eq!(params[0].data()[0], expected);
    }

    #[test]
    fn updates_are_reproducible() {
        let run = || {
            let mut params = vec![DenseTensor::from_vec(&[2], vec![0.2, -0.7]).unwrap()];
            let grads = vec![DenseTensor::from_vec(&[2], vec![0.05, 0.4]).unwrap()];
            let mut state = AdamState::new(&params);
            let cfg = AdamConfig::with_lr(1e-3);
            adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
            adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
            params[0].data().to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_shape_mismatch_and_nonfinite() {
        let mut params = vec![DenseTensor::zeros(&[2])];
        let mut state = AdamState::new(&params);
        let bad_shape = vec![DenseTensor::zeros(&[3])];
        assert!(adam_step(&mut params, &bad_shape, &mut state, &AdamConfig::default()).is_err());
        let bad_val = vec![DenseTensor::from_vec(&[2], vec![f64::NAN, 0.0]).unwrap()];
        assert!(adam_step(&mut params, &bad_val, &mut state, &AdamConfig::default()).is_err());
    }
}
