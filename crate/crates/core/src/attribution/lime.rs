use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::occlusion::spatial_dims;
use super::AttributionMap;
use crate::engine::{self, forward};
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimeParams {
    /// `gridN` (square cells of side N) or `identity` (one segment per
    /// spatial position).
    pub segments: String,
    pub n_samples: usize,
    /// Kernel width relative to the normalised Hamming distance.
    pub kernel_width_rel: f64,
    pub ridge_lambda: f64,
    pub seed: u64,
}

impl Default for LimeParams {
    fn default() -> Self {
        LimeParams {
            segments: "grid2".into(),
            n_samples: 1000,
            kernel_width_rel: 0.25,
            ridge_lambda: 1e-3,
            seed: 0,
        }
    }
}

/// Segment index of every input element. Cells that do not divide the input
/// evenly are merged into the last row/column of cells.
pub fn segment_grid(shape: &[usize], segments: &str) -> Result<(Vec<usize>, usize)> {
    let cell = match segments {
        "identity" => 1,
        s => s
            .strip_prefix("grid")
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::InvalidParam(format!("unknown segmentation {s:?}")))?,
    };
    let (h, w, c) = spatial_dims(shape);
    let cell_rows = if h == 1 { 1 } else { cell };
    let nr = (h / cell_rows).max(1);
    let nc = (w / cell).max(1);
    let mut seg = Vec::with_capacity(h * w * c);
    for r in 0..h {
        for col in 0..w {
            let s = (r / cell_rows).min(nr - 1) * nc + (col / cell).min(nc - 1);
            seg.extend(std::iter::repeat_n(s, c));
        }
    }
    Ok((seg, nr * nc))
}

/// Perturbation data set a LIME surrogate is fitted on.
#[derive(Debug, Clone)]
pub struct LimeProblem {
    pub segment_of: Vec<usize>,
    pub n_segments: usize,
    /// One row per sample; `true` keeps the segment, `false` replaces it.
    pub masks: Vec<Vec<bool>>,
    pub targets: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Draws the perturbed samples: the unperturbed sample first, then segments
/// switched off independently with probability 1/2 and replaced by zero.
/// Targets are pre-softmax scores; weights are `exp(-d^2 / width^2)` with
/// `d` the fraction of switched-off segments.
pub fn lime_problem(state: &ModelState, x: &Tensor, target: usize, params: &LimeParams) -> Result<LimeProblem> {
    engine::check_input(state, x)?;
    engine::check_target(state, target)?;
    if params.kernel_width_rel.is_nan() || params.kernel_width_rel <= 0.0 {
        return Err(Error::InvalidParam("kernel_width_rel must be positive".into()));
    }
    if params.ridge_lambda < 0.0 {
        return Err(Error::InvalidParam("ridge_lambda must be non-negative".into()));
    }
    let (segment_of, n_segments) = segment_grid(&x.shape, &params.segments)?;
    if params.n_samples < n_segments {
        return Err(Error::InvalidParam(format!(
            "n_samples {} is less than the {n_segments} segments",
            params.n_samples
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut masks = Vec::with_capacity(params.n_samples);
    let mut targets = Vec::with_capacity(params.n_samples);
    let mut weights = Vec::with_capacity(params.n_samples);
    let mut perturbed = x.clone();
    for i in 0..params.n_samples {
        let mask: Vec<bool> = if i == 0 {
            vec![true; n_segments]
        } else {
            (0..n_segments).map(|_| rng.random_bool(0.5)).collect()
        };
        for (j, v) in perturbed.data.iter_mut().enumerate() {
            *v = if mask[segment_of[j]] { x.data[j] } else { 0.0 };
        }
        let off = mask.iter().filter(|&&m| !m).count() as f64 / n_segments as f64;
        weights.push((-(off * off) / (params.kernel_width_rel * params.kernel_width_rel)).exp());
        targets.push(engine::forward_unchecked(state, &perturbed).logits().data[target]);
        masks.push(mask);
    }
    Ok(LimeProblem {
        segment_of,
        n_segments,
        masks,
        targets,
        weights,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Weighted coefficient of determination.
    pub r_squared: f64,
}

/// Weighted ridge regression on binary features with an unpenalised
/// intercept.
pub fn fit_weighted_ridge(masks: &[Vec<bool>], targets: &[f64], weights: &[f64], lambda: f64) -> Result<RidgeFit> {
    let n = masks.len();
    let p = masks.first().map_or(0, Vec::len);
    if n == 0 || targets.len() != n || weights.len() != n {
        return Err(Error::InvalidParam("ridge fit needs matching, nonempty samples".into()));
    }
    let design = DMatrix::from_fn(n, p + 1, |i, j| {
        if j == 0 || masks[i][j - 1] {
            1.0
        } else {
            0.0
        }
    });
    let w = DVector::from_column_slice(weights);
    let y = DVector::from_column_slice(targets);
    let weighted = DMatrix::from_fn(n, p + 1, |i, j| design[(i, j)] * w[i]);
    let mut normal = weighted.transpose() * &design;
    for j in 1..=p {
        normal[(j, j)] += lambda;
    }
    let rhs = weighted.transpose() * &y;
    let beta = match normal.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => normal
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidParam("surrogate system is singular".into()))?,
    };
    let fitted = &design * &beta;
    let wsum: f64 = weights.iter().sum();
    let ybar = weights.iter().zip(targets).map(|(w, y)| w * y).sum::<f64>() / wsum;
    let ss_res: f64 = (0..n).map(|i| weights[i] * (targets[i] - fitted[i]).powi(2)).sum();
    let ss_tot: f64 = (0..n).map(|i| weights[i] * (targets[i] - ybar).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(RidgeFit {
        intercept: beta[0],
        coefficients: beta.iter().skip(1).copied().collect(),
        r_squared,
    })
}

pub fn lime(state: &ModelState, x: &Tensor, target: usize, params: &LimeParams) -> Result<AttributionMap> {
    let pass = forward(state, x)?;
    let problem = lime_problem(state, x, target, params)?;
    let fit = fit_weighted_ridge(&problem.masks, &problem.targets, &problem.weights, params.ridge_lambda)?;
    let values = Tensor::vector(fit.coefficients);
    Ok(AttributionMap::new("lime", state, target, values, pass.output())
        .with_meta("segments", params.segments.clone())
        .with_meta("n_samples", params.n_samples)
        .with_meta("kernel_width_rel", params.kernel_width_rel)
        .with_meta("ridge_lambda", params.ridge_lambda)
        .with_meta("seed", params.seed)
        .with_meta("intercept", fit.intercept)
        .with_meta("r_squared", fit.r_squared)
        .with_meta("input_shape", x.shape.clone())
        .with_meta("segment_mask", problem.segment_of))
}
