//! Decoupled-weight-decay Adam and global-norm gradient clipping.

use crate::scalar::Scalar;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimError {
    #[error("non-finite gradient at parameter index {index}")]
    NonFiniteGrad { index: usize },
    #[error("parameter/gradient length mismatch: {params} vs {grads}")]
    LengthMismatch { params: usize, grads: usize },
}

/// First/second moment buffers and the per-parameter step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub m: Vec<F>,
    pub v: Vec<F>,
    pub step: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(len: usize) -> Self {
        Self { m: vec![F::zero(); len], v: vec![F::zero(); len], step: 0 }
    }
}

/// One AdamW update: `p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)`.
/// Gradients are pre-scaled by `grad_scale` (the clipping factor).
pub fn adamw_step<F: Scalar>(
    params: &mut [F],
    grads: &[F],
    state: &mut AdamState<F>,
    lr: f64,
    weight_decay: f64,
    grad_scale: f64,
) -> Result<(), OptimError> {
    if params.len() != grads.len() {
        return Err(OptimError::LengthMismatch { params: params.len(), grads: grads.len() });
    }
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(OptimError::NonFiniteGrad { index });
    }
    state.step += 1;
    let b1 = F::of(ADAM_BETA1);
    let b2 = F::of(ADAM_BETA2);
    let eps = F::of(ADAM_EPS);
    let scale = F::of(grad_scale);
    let lr_f = F::of(lr);
    let wd = F::of(weight_decay);
    let bias1 = F::one() - F::of(ADAM_BETA1.powi(state.step as i32));
    let bias2 = F::one() - F::of(ADAM_BETA2.powi(state.step as i32));
    for i in 0..params.len() {
        let g = grads[i] * scale;
        state.m[i] = b1 * state.m[i] + (F::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (F::one() - b2) * g * g;
        let m_hat = state.m[i] / bias1;
        let v_hat = state.v[i] / bias2;
        params[i] = params[i] - lr_f * (m_hat / (v_hat.sqrt() + eps) + wd * params[i]);
    }
    Ok(())
}

/// Euclidean norm over a collection of gradient slices.
pub fn global_grad_norm<F: Scalar>(grads: &[&[F]]) -> f64 {
    let mut s = 0.0;
    for slice in grads {
        for g in *slice {
            let x = g.as_f64();
            s += x * x;
        }
    }
    s.sqrt()
}

/// Clip scale for a global norm: 1 when within the threshold, otherwise the
/// shrink factor that brings the norm onto it.
pub fn clip_scale(global_norm: f64, threshold: f64) -> f64 {
    if global_norm <= threshold || global_norm == 0.0 {
        1.0
    } else {
        threshold / global_norm
    }
}

/// Effective clipping threshold: tightened to half for a fixed window of
/// steps after each merge.
pub fn post_merge_threshold(base: f64, steps_since_merge: usize, window: usize) -> f64 {
    if steps_since_merge < window {
        base * 0.5
    } else {
        base
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_zero_decay_keeps_params() {
        let mut p = vec![1.0f64, -2.0, 0.5];
        let g = vec![0.0; 3];
        let mut st = AdamState::new(3);
        adamw_step(&mut p, &g, &mut st, 0.1, 0.0, 1.0).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // With g = 1 the bias-corrected ratio is 1/(1 + eps'), so the first
        // step is within a hair of -lr.
        let mut p = vec![0.0f64];
        let mut st = AdamState::new(1);
        adamw_step(&mut p, &[1.0], &mut st, 0.01, 0.0, 1.0).unwrap();
        assert!((p[0] + 0.01).abs() < 1e-6, "moved to {}", p[0]);
    }

    #[test]
    fn quadratic_converges() {
        // Minimize x^2 / 2 from x = 1: |x| decreases monotonically after a
        // short warm-in.
        let mut x = 1.0f64;
        let mut st = AdamState::new(1);
        let mut prev = x.abs();
        for step in 0..100 {
            let g = x;
            let mut p = [x];
            adamw_step(&mut p, &[g], &mut st, 0.05, 0.0, 1.0).unwrap();
            x = p[0];
            if step >= 5 {
                assert!(x.abs() <= prev + 1e-12, "step {step}: {} > {prev}", x.abs());
            }
            prev = x.abs();
        }
        assert!(x.abs() < 0.2, "final x = {x}");
    }

    #[test]
    fn nan_grad_is_an_error() {
        let mut p = vec![0.0f64];
        let mut st = AdamState::new(1);
        let err = adamw_step(&mut p, &[f64::NAN], &mut st, 0.1, 0.0, 1.0).unwrap_err();
        assert!(matches!(err, OptimError::NonFiniteGrad { index: 0 }));
    }

    #[test]
    fn clip_scale_cases() {
        assert_eq!(clip_scale(0.05, 0.1), 1.0);
        assert!((clip_scale(0.2, 0.1) - 0.5).abs() < 1e-15);
        assert_eq!(clip_scale(0.0, 0.1), 1.0);
    }

    #[test]
    fn post_merge_window_halves_threshold() {
        assert_eq!(post_merge_threshold(0.1, 3, 10), 0.05);
        assert_eq!(post_merge_threshold(0.1, 10, 10), 0.1);
    }
}
