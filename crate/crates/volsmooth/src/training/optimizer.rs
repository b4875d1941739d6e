//! AdamW with decoupled weight decay.
//!
//! Update: `θ ← θ − lr·wd·θ` (decay applied separately from the adaptive
//! step), then `m ← β₁m + (1−β₁)g`, `u ← β₂u + (1−β₂)g²`, and
//! `θ ← θ − lr·m̂/(√û + ε)` with bias-corrected moments.

use super::TrainError;

#[derive(Debug, Clone)]
pub struct AdamWState {
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamWState {
    pub fn new(param_len: usize) -> Self {
        AdamWState {
            step: 0,
            first_moment: vec![0.0; param_len],
            second_moment: vec![0.0; param_len],
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One optimizer step in place. Aborts (leaving parameters and state
/// untouched) if any gradient entry is non-finite.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamWState,
    lr: f64,
    weight_decay: f64,
) -> Result<(), TrainError> {
    if grads.len() != params.len() || state.first_moment.len() != params.len() {
        return Err(TrainError::ShapeError { got: grads.len(), want: params.len() });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(TrainError::NonFiniteGradient);
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (((p, &g), m), u) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.first_moment)
        .zip(&mut state.second_moment)
    {
        *p -= lr * weight_decay * *p;
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *u = state.beta2 * *u + (1.0 - state.beta2) * g * g;
        *p -= lr * (*m / bc1) / ((*u / bc2).sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_gradient_zero_decay_is_identity() {
        let mut params = vec![0.3, -1.2, 4.0];
        let before = params.clone();
        let mut state = AdamWState::new(3);
        adamw_step(&mut params, &[0.0; 3], &mut state, 0.1, 0.0).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        // With bias correction the first step is lr·g/(|g| + ε') ≈ lr·sign(g).
        let mut params = vec![1.0, 1.0];
        let mut state = AdamWState::new(2);
        adamw_step(&mut params, &[2.5, -0.04], &mut state, 0.05, 0.0).unwrap();
        assert_abs_diff_eq!(params[0], 1.0 - 0.05, epsilon = 1e-6);
        assert_abs_diff_eq!(params[1], 1.0 + 0.05, epsilon = 1e-6);
    }

    #[test]
    fn quadratic_descends_monotonically() {
        let mut theta = vec![1.0_f64];
        let mut state = AdamWState::new(1);
        let mut last = theta[0].abs();
        for _ in 0..50 {
            let g = vec![2.0 * theta[0]];
            adamw_step(&mut theta, &g, &mut state, 0.01, 0.0).unwrap();
            assert!(theta[0].abs() < last);
            last = theta[0].abs();
        }
    }

    #[test]
    fn non_finite_gradient_aborts_without_mutation() {
        let mut params = vec![1.0, 2.0];
        let before = params.clone();
        let mut state = AdamWState::new(2);
        let err = adamw_step(&mut params, &[1.0, f64::NAN], &mut state, 0.1, 0.01);
        assert!(matches!(err, Err(TrainError::NonFiniteGradient)));
        assert_eq!(params, before);
        assert_eq!(state.step, 0);
    }

    #[test]
    fn decoupled_decay_shrinks_parameters() {
        let mut params = vec![10.0];
        let mut state = AdamWState::new(1);
        adamw_step(&mut params, &[0.0], &mut state, 0.1, 0.5).unwrap();
        assert_abs_diff_eq!(params[0], 10.0 * (1.0 - 0.1 * 0.5), epsilon = 1e-12);
    }
}
