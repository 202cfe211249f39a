use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::AttributionMap;
use crate::engine::{self, backward_from, forward};
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::tensor::Tensor;

fn input_gradient(state: &ModelState, x: &Tensor, target: usize) -> Result<(Tensor, Tensor)> {
    engine::check_target(state, target)?;
    let pass = forward(state, x)?;
    let mut seed = vec![0.0; state.graph.num_classes];
    seed[target] = 1.0;
    let grads = backward_from(state, &pass, &seed);
    Ok((grads.input, pass.output().clone()))
}

pub fn saliency(state: &ModelState, x: &Tensor, target: usize) -> Result<AttributionMap> {
    let (g, pred) = input_gradient(state, x, target)?;
    Ok(AttributionMap::new("saliency", state, target, g, &pred))
}

/// Same values as [`saliency`], registered under its own id.
pub fn gradient(state: &ModelState, x: &Tensor, target: usize) -> Result<AttributionMap> {
    let (g, pred) = input_gradient(state, x, target)?;
    Ok(AttributionMap::new("gradient", state, target, g, &pred))
}

pub fn gradient_x_input(state: &ModelState, x: &Tensor, target: usize) -> Result<AttributionMap> {
    let (g, pred) = input_gradient(state, x, target)?;
    let values = g.zip_map(x, |gi, xi| gi * xi);
    Ok(AttributionMap::new("gradient_x_input", state, target, values, &pred))
}

/// Midpoint Riemann sum over `steps` points of the straight path from
/// `baseline` to `x`, multiplied by `x - baseline`.
pub fn integrated_gradients(
    state: &ModelState,
    x: &Tensor,
    target: usize,
    baseline: &Tensor,
    steps: usize,
) -> Result<AttributionMap> {
    if steps == 0 {
        return Err(Error::InvalidParam("integrated gradients needs at least one step".into()));
    }
    engine::check_input(state, baseline)?;
    let pass = forward(state, x)?;
    engine::check_target(state, target)?;
    let diff = x.zip_map(baseline, |a, b| a - b);
    let mut acc = vec![0.0; x.len()];
    let mut seed = vec![0.0; state.graph.num_classes];
    seed[target] = 1.0;
    for k in 0..steps {
        let alpha = (k as f64 + 0.5) / steps as f64;
        let point = baseline.zip_map(&diff, |b, d| b + alpha * d);
        let p = engine::forward_unchecked(state, &point);
        let g = backward_from(state, &p, &seed);
        for (a, gi) in acc.iter_mut().zip(&g.input.data) {
            *a += gi;
        }
    }
    let values = Tensor {
        shape: x.shape.clone(),
        data: acc
            .iter()
            .zip(&diff.data)
            .map(|(a, d)| a / steps as f64 * d)
            .collect(),
    };
    let score_x = pass.logits().data[target];
    let score_b = engine::forward_unchecked(state, baseline).logits().data[target];
    let gap = values.sum() - (score_x - score_b);
    Ok(AttributionMap::new("integrated_gradients", state, target, values, pass.output())
        .with_meta("steps", steps)
        .with_meta("score_delta", score_x - score_b)
        .with_meta("completeness_gap", gap))
}

/// Mean saliency over `samples` copies of `x` with Gaussian noise of
/// standard deviation `sigma_rel * (max(x) - min(x))`.
pub fn smoothgrad(
    state: &ModelState,
    x: &Tensor,
    target: usize,
    samples: usize,
    sigma_rel: f64,
    seed: u64,
) -> Result<AttributionMap> {
    if samples == 0 {
        return Err(Error::InvalidParam("smoothgrad needs at least one sample".into()));
    }
    if sigma_rel < 0.0 {
        return Err(Error::InvalidParam("sigma_rel must be non-negative".into()));
    }
    engine::check_target(state, target)?;
    let pass = forward(state, x)?;
    let sigma = sigma_rel * (x.max() - x.min());
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParam(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seed_grad = vec![0.0; state.graph.num_classes];
    seed_grad[target] = 1.0;
    let mut acc = vec![0.0; x.len()];
    for _ in 0..samples {
        let noisy = if sigma > 0.0 {
            Tensor {
                shape: x.shape.clone(),
                data: x.data.iter().map(|v| v + noise.sample(&mut rng)).collect(),
            }
        } else {
            x.clone()
        };
        let p = engine::forward_unchecked(state, &noisy);
        let g = backward_from(state, &p, &seed_grad);
        for (a, gi) in acc.iter_mut().zip(&g.input.data) {
            *a += gi;
        }
    }
    let values = Tensor {
        shape: x.shape.clone(),
        data: acc.into_iter().map(|a| a / samples as f64).collect(),
    };
    Ok(AttributionMap::new("smoothgrad", state, target, values, pass.output())
        .with_meta("samples", samples)
        .with_meta("sigma", sigma)
        .with_meta("seed", seed))
}
