//! Central finite-difference verification of the analytic gradients.
//!
//! The checker never calls the backward pass to produce its reference:
//! it re-runs the forward pass at perturbed parameter values, so the two
//! gradient routes are independent. Runs at 64-bit precision.

use super::layers::{cross_entropy, softmax_cross_entropy_grad};
use super::model::{model_forward, ModelSpec, ParamSet};

/// Step size for central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative-error floor keeps near-zero gradient pairs from blowing up.
/// Central differences at the default step carry ~1e-11 of f64 roundoff,
/// so entries below the floor are held to an absolute discrepancy of
/// tolerance * floor = 1e-8 instead of a meaningless ratio of noise.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-4);
    (analytic - numeric).abs() / denom
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub params_checked: usize,
}

fn batch_loss(spec: &ModelSpec, params: &ParamSet<f64>, batch: &[(Vec<u32>, usize)]) -> f64 {
    let mut total = 0.0;
    for (ids, target) in batch {
        let cache = model_forward(spec, params, ids);
        let mut one_hot = vec![0.0; spec.num_classes];
        one_hot[*target] = 1.0;
        total += cross_entropy(cache.probs(), &one_hot);
    }
    total
}

fn analytic_gradients(
    spec: &ModelSpec,
    params: &ParamSet<f64>,
    batch: &[(Vec<u32>, usize)],
) -> ParamSet<f64> {
    let mut grads = ParamSet::zeros(spec);
    for (ids, target) in batch {
        let cache = model_forward(spec, params, ids);
        let mut one_hot = vec![0.0; spec.num_classes];
        one_hot[*target] = 1.0;
        let d = softmax_cross_entropy_grad(cache.probs(), &one_hot);
        super::model::model_backward(spec, params, &cache, &d, &mut grads);
    }
    grads
}

/// Compare analytic gradients of the summed batch loss against central
/// finite differences over every parameter.
pub fn grad_check(
    spec: &ModelSpec,
    params: &ParamSet<f64>,
    batch: &[(Vec<u32>, usize)],
    h: f64,
) -> GradCheckReport {
    let analytic = analytic_gradients(spec, params, batch);
    let mut work = params.clone();

    let mut max_rel = 0.0;
    let mut worst = String::new();
    let mut checked = 0usize;

    let tensor_count = params.tensors().len();
    for ti in 0..tensor_count {
        let (name, len) = {
            let ts = work.tensors();
            (ts[ti].0.clone(), ts[ti].1.len())
        };
        for ei in 0..len {
            let original = work.tensors()[ti].1.data()[ei];

            work.tensors_mut()[ti].1.data_mut()[ei] = original + h;
            let loss_plus = batch_loss(spec, &work, batch);
            work.tensors_mut()[ti].1.data_mut()[ei] = original - h;
            let loss_minus = batch_loss(spec, &work, batch);
            work.tensors_mut()[ti].1.data_mut()[ei] = original;

            let numeric = (loss_plus - loss_minus) / (2.0 * h);
            let a = analytic.tensors()[ti].1.data()[ei];
            assert!(a.is_finite(), "non-finite analytic gradient in {name}");
            let rel = relative_error(a, numeric);
            if rel > max_rel {
                max_rel = rel;
                worst = format!("{name}[{ei}]");
            }
            checked += 1;
        }
    }

    GradCheckReport {
        max_rel_error: max_rel,
        worst_tensor: worst,
        params_checked: checked,
    }
}
