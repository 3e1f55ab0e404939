//! Adam optimizer with bias correction, plus an optional global
//! gradient-norm clip for long backpropagation-through-time runs.

use serde::{Deserialize, Serialize};

use crate::nncore::model::{ModelSpec, ParamSet};
use crate::nncore::tensor::Scalar;

fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamHyper {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<(), OptimError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(OptimError::BadHyper("lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(OptimError::BadHyper("beta1 must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(OptimError::BadHyper("beta2 must be in [0, 1)"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(OptimError::BadHyper("epsilon must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OptimError {
    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(String),
    #[error("invalid optimizer hyperparameter: {0}")]
    BadHyper(&'static str),
}

/// First and second moment estimates, shaped exactly like the parameters.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub m: ParamSet<T>,
    pub v: ParamSet<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(spec: &ModelSpec) -> Self {
        AdamState {
            m: ParamSet::zeros(spec),
            v: ParamSet::zeros(spec),
            t: 0,
        }
    }
}

/// One Adam update, elementwise over every parameter tensor:
/// t ← t+1; m ← β1·m + (1−β1)·g; v ← β2·v + (1−β2)·g²;
/// m̂ = m/(1−β1^t); v̂ = v/(1−β2^t); θ ← θ − lr·m̂/(√v̂ + ε).
///
/// Gradients are validated before any mutation, so a non-finite gradient
/// leaves parameters and state untouched.
pub fn adam_step<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &ParamSet<T>,
    state: &mut AdamState<T>,
    hyper: &AdamHyper,
) -> Result<(), OptimError> {
    for (name, g) in grads.tensors() {
        if !g.is_finite() {
            return Err(OptimError::NonFiniteGradient(name));
        }
    }

    state.t += 1;
    let t = state.t;
    let beta1 = T::of_f64(hyper.beta1);
    let beta2 = T::of_f64(hyper.beta2);
    let one_minus_beta1 = T::of_f64(1.0 - hyper.beta1);
    let one_minus_beta2 = T::of_f64(1.0 - hyper.beta2);
    let corr1 = T::of_f64(1.0 - hyper.beta1.powf(t as f64));
    let corr2 = T::of_f64(1.0 - hyper.beta2.powf(t as f64));
    let lr = T::of_f64(hyper.lr);
    let eps = T::of_f64(hyper.epsilon);

    let mut p_walk = params.tensors_mut();
    let g_walk = grads.tensors();
    let mut m_walk = state.m.tensors_mut();
    let mut v_walk = state.v.tensors_mut();
    for i in 0..p_walk.len() {
        let p = p_walk[i].1.data_mut();
        let g = g_walk[i].1.data();
        let m = m_walk[i].1.data_mut();
        let v = v_walk[i].1.data_mut();
        for k in 0..p.len() {
            m[k] = beta1 * m[k] + one_minus_beta1 * g[k];
            v[k] = beta2 * v[k] + one_minus_beta2 * g[k] * g[k];
            let m_hat = m[k] / corr1;
            let v_hat = v[k] / corr2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Scale gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping. The norm is accumulated at 64-bit
/// in canonical tensor order, so the result is deterministic.
pub fn clip_global_norm<T: Scalar>(grads: &mut ParamSet<T>, max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "clip norm must be positive");
    let mut sum_sq = 0.0f64;
    for (_, t) in grads.tensors() {
        for &g in t.data() {
            let g = g.as_f64();
            sum_sq += g * g;
        }
    }
    let norm = sum_sq.sqrt();
    if norm > max_norm {
        let scale = T::of_f64(max_norm / norm);
        for (_, t) in grads.tensors_mut() {
            for g in t.data_mut() {
                *g *= scale;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::model::Architecture;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_spec() -> ModelSpec {
        ModelSpec {
            architecture: Architecture::Srnn,
            vocab_size: 4,
            embed_dim: 2,
            hidden_dim: 2,
            kernel_width: 1,
            dense_dim: 2,
            num_classes: 2,
            max_len: 3,
        }
    }

    #[test]
    fn defaults_are_the_standard_values() {
        let h = AdamHyper::default();
        assert_eq!(h.lr, 1e-3);
        assert_eq!(h.beta1, 0.9);
        assert_eq!(h.beta2, 0.999);
        assert_eq!(h.epsilon, 1e-8);
        assert!(h.validate().is_ok());
    }

    #[test]
    fn validate_rejects_out_of_range_hypers() {
        let mut h = AdamHyper::default();
        h.beta1 = 1.0;
        assert!(h.validate().is_err());
        h = AdamHyper::default();
        h.lr = 0.0;
        assert!(h.validate().is_err());
        h = AdamHyper::default();
        h.epsilon = -1.0;
        assert!(h.validate().is_err());
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let spec = tiny_spec();
        let mut params = ParamSet::<f64>::init(&spec, 1);
        let before = params.clone();
        let grads = ParamSet::<f64>::zeros(&spec);
        let mut state = AdamState::new(&spec);
        adam_step(&mut params, &grads, &mut state, &AdamHyper::default()).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn first_step_update_is_minus_lr_times_sign() {
        // at t = 1, m̂ = g and v̂ = g², so Δθ = −lr·g/(|g| + ε)
        let spec = tiny_spec();
        let mut params = ParamSet::<f64>::zeros(&spec);
        let mut grads = ParamSet::<f64>::zeros(&spec);
        grads.embedding.data_mut()[0] = 4.0;
        let mut state = AdamState::new(&spec);
        let hyper = AdamHyper {
            lr: 0.1,
            ..AdamHyper::default()
        };
        adam_step(&mut params, &grads, &mut state, &hyper).unwrap();
        let expected = -0.1 * 4.0 / (4.0 + 1e-8);
        assert!((params.embedding.data()[0] - expected).abs() < 1e-12);
        assert!((params.embedding.data()[0] - (-0.1)).abs() < 1e-8);
    }

    #[test]
    fn two_steps_match_a_hand_computed_trace() {
        // scalar recurrence with g1 = 1, g2 = −1, written out longhand
        let lr = 0.1;
        let b1 = 0.9;
        let b2 = 0.999;
        let eps = 1e-8;
        let theta0 = 0.5;

        // step 1
        let m1 = 0.1 * 1.0; // (1−β1)·g = 0.1
        let v1 = 0.001 * 1.0;
        let m1_hat = m1 / (1.0 - 0.9_f64);
        let v1_hat: f64 = v1 / (1.0 - 0.999_f64);
        let theta1 = theta0 - lr * m1_hat / (v1_hat.sqrt() + eps);
        // step 2
        let m2 = b1 * m1 + 0.1 * (-1.0); // = −0.01
        let v2 = b2 * v1 + 0.001 * 1.0; // = 0.001999
        let m2_hat = m2 / (1.0 - b1 * b1); // = −0.01/0.19
        let v2_hat: f64 = v2 / (1.0 - b2 * b2);
        let theta2 = theta1 - lr * m2_hat / (v2_hat.sqrt() + eps);

        let spec = tiny_spec();
        let mut params = ParamSet::<f64>::zeros(&spec);
        params.embedding.data_mut()[0] = theta0;
        let mut state = AdamState::new(&spec);
        let hyper = AdamHyper {
            lr,
            ..AdamHyper::default()
        };
        let mut grads = ParamSet::<f64>::zeros(&spec);

        grads.embedding.data_mut()[0] = 1.0;
        adam_step(&mut params, &grads, &mut state, &hyper).unwrap();
        assert!((params.embedding.data()[0] - theta1).abs() < 1e-15);

        grads.embedding.data_mut()[0] = -1.0;
        adam_step(&mut params, &grads, &mut state, &hyper).unwrap();
        assert!((params.embedding.data()[0] - theta2).abs() < 1e-15);
        // the sign flip must push the parameter back up
        assert!(theta2 > theta1);
    }

    #[test]
    fn coordinates_update_independently() {
        let spec = tiny_spec();
        let hyper = AdamHyper::default();

        let run = |bump: bool| {
            let mut params = ParamSet::<f64>::init(&spec, 5);
            let mut grads = ParamSet::<f64>::zeros(&spec);
            grads.embedding.data_mut()[1] = 0.7;
            if bump {
                grads.embedding.data_mut()[3] = -0.2;
            }
            let mut state = AdamState::new(&spec);
            adam_step(&mut params, &grads, &mut state, &hyper).unwrap();
            params
        };
        let base = run(false);
        let bumped = run(true);
        for (i, (a, b)) in base
            .embedding
            .data()
            .iter()
            .zip(bumped.embedding.data())
            .enumerate()
        {
            if i == 3 {
                assert_ne!(a, b);
            } else {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn update_magnitude_stays_inside_the_sanity_envelope() {
        let spec = tiny_spec();
        let hyper = AdamHyper::default();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut params = ParamSet::<f64>::init(&spec, 2);
        let mut state = AdamState::new(&spec);
        for _ in 0..25 {
            let mut grads = ParamSet::<f64>::zeros(&spec);
            for (_, t) in grads.tensors_mut() {
                for g in t.data_mut() {
                    *g = rng.gen_range(-3.0..3.0);
                }
            }
            let before = params.clone();
            adam_step(&mut params, &grads, &mut state, &hyper).unwrap();
            for ((_, a), (_, b)) in before.tensors().iter().zip(params.tensors()) {
                for (x, y) in a.data().iter().zip(b.data()) {
                    assert!((x - y).abs() <= hyper.lr * 10.0);
                }
            }
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected_by_tensor_name() {
        let spec = tiny_spec();
        let mut params = ParamSet::<f64>::init(&spec, 1);
        let before = params.clone();
        let mut grads = ParamSet::<f64>::zeros(&spec);
        grads.dense.w.data_mut()[0] = f64::NAN;
        let mut state = AdamState::new(&spec);
        let err = adam_step(&mut params, &grads, &mut state, &AdamHyper::default()).unwrap_err();
        assert!(err.to_string().contains("dense.w"), "{err}");
        // nothing was touched
        assert_eq!(params, before);
        assert_eq!(state.t, 0);
    }

    #[test]
    fn clip_scales_only_when_above_the_bound() {
        let spec = tiny_spec();
        let mut grads = ParamSet::<f64>::zeros(&spec);
        grads.embedding.data_mut()[0] = 3.0;
        grads.embedding.data_mut()[1] = 4.0; // norm 5
        let norm = clip_global_norm(&mut grads, 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        assert!((grads.embedding.data()[0] - 0.6).abs() < 1e-12);
        assert!((grads.embedding.data()[1] - 0.8).abs() < 1e-12);

        let mut small = ParamSet::<f64>::zeros(&spec);
        small.embedding.data_mut()[0] = 0.3;
        let norm = clip_global_norm(&mut small, 1.0);
        assert!((norm - 0.3).abs() < 1e-12);
        assert_eq!(small.embedding.data()[0], 0.3);
    }
}
