use super::AttributionMap;
use crate::engine::{self, forward};
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::tensor::Tensor;

/// Spatial extent that windows slide over: `(rows, cols, channels)`. Vectors
/// are treated as a single row.
pub(super) fn spatial_dims(shape: &[usize]) -> (usize, usize, usize) {
    match shape {
        [n] => (1, *n, 1),
        [h, w] => (*h, *w, 1),
        [h, w, c] => (*h, *w, *c),
        _ => (1, shape.iter().product(), 1),
    }
}

fn placements(extent: usize, window: usize, stride: usize) -> Vec<usize> {
    (0..=extent - window).step_by(stride).collect()
}

/// Average score drop over every window placement covering each element.
pub fn occlusion(
    state: &ModelState,
    x: &Tensor,
    target: usize,
    window: usize,
    stride: usize,
    baseline_value: f64,
) -> Result<AttributionMap> {
    engine::check_target(state, target)?;
    let pass = forward(state, x)?;
    if window == 0 || stride == 0 {
        return Err(Error::InvalidParam("window and stride must be positive".into()));
    }
    let (h, w, c) = spatial_dims(&x.shape);
    // Vectors slide along their single axis only.
    let win_rows = if h == 1 { 1 } else { window };
    if win_rows > h || window > w {
        return Err(Error::InvalidParam(format!(
            "occlusion window {window} larger than input {:?}",
            x.shape
        )));
    }
    let base_score = pass.logits().data[target];
    let mut total = vec![0.0; h * w];
    let mut count = vec![0usize; h * w];
    let mut occluded = x.clone();
    for &r0 in &placements(h, win_rows, stride) {
        for &c0 in &placements(w, window, stride) {
            occluded.data.copy_from_slice(&x.data);
            for r in r0..r0 + win_rows {
                for col in c0..c0 + window {
                    for ch in 0..c {
                        occluded.data[(r * w + col) * c + ch] = baseline_value;
                    }
                }
            }
            let drop = base_score - engine::forward_unchecked(state, &occluded).logits().data[target];
            for r in r0..r0 + win_rows {
                for col in c0..c0 + window {
                    total[r * w + col] += drop;
                    count[r * w + col] += 1;
                }
            }
        }
    }
    let mut values = Tensor::zeros(&x.shape);
    for pix in 0..h * w {
        let v = if count[pix] == 0 { 0.0 } else { total[pix] / count[pix] as f64 };
        for ch in 0..c {
            values.data[pix * c + ch] = v;
        }
    }
    Ok(AttributionMap::new("occlusion", state, target, values, pass.output())
        .with_meta("window", window)
        .with_meta("stride", stride)
        .with_meta("baseline_value", baseline_value)
        .with_meta("coverage", count))
}
