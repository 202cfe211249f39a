//! Local, whole-model input attributions for one sample and one class.
//!
//! Every explainer differentiates or perturbs the pre-softmax score of the
//! target class. Values are signed; rendering decides how to show them.

mod gradient;
mod lime;
mod lrp;
mod occlusion;

pub use gradient::{gradient, gradient_x_input, integrated_gradients, saliency, smoothgrad};
pub use lime::{fit_weighted_ridge, lime, lime_problem, segment_grid, LimeParams, LimeProblem, RidgeFit};
pub use lrp::lrp_epsilon;
pub use occlusion::occlusion;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::engine;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    pub explainer_id: String,
    pub state_id: String,
    pub sample: String,
    pub target: usize,
    /// Input shape, or `[segments]` for segment-level explainers.
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    /// Model output (class probabilities when the graph ends in softmax).
    pub prediction: Vec<f64>,
    #[serde(default)]
    pub meta: Map<String, Value>,
}

impl AttributionMap {
    pub(crate) fn new(
        explainer_id: &str,
        state: &ModelState,
        target: usize,
        values: Tensor,
        prediction: &Tensor,
    ) -> Self {
        AttributionMap {
            explainer_id: explainer_id.to_string(),
            state_id: state.state_id.clone(),
            sample: String::new(),
            target,
            shape: values.shape,
            values: values.data,
            prediction: prediction.data.clone(),
            meta: Map::new(),
        }
    }

    pub fn with_sample(mut self, sample: impl Into<String>) -> Self {
        self.sample = sample.into();
        self
    }

    pub(crate) fn with_meta(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Per-input-element values: segment scores are spread onto the pixels
    /// of their segment.
    pub fn pixel_values(&self) -> (Vec<usize>, Vec<f64>) {
        let mask = self.meta.get("segment_mask").and_then(Value::as_array);
        let input_shape = self.meta.get("input_shape").and_then(Value::as_array);
        match (mask, input_shape) {
            (Some(mask), Some(shape)) => {
                let shape: Vec<usize> = shape.iter().filter_map(|v| v.as_u64()).map(|v| v as usize).collect();
                let values = mask
                    .iter()
                    .map(|s| s.as_u64().and_then(|s| self.values.get(s as usize)).copied().unwrap_or(0.0))
                    .collect();
                (shape, values)
            }
            _ => (self.shape.clone(), self.values.clone()),
        }
    }
}

/// Explainer choice plus its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum AttributionMethod {
    Saliency,
    Gradient,
    GradientXInput,
    IntegratedGradients { steps: usize, baseline: f64 },
    SmoothGrad { samples: usize, sigma_rel: f64, seed: u64 },
    Occlusion { window: usize, stride: usize, baseline_value: f64 },
    Lime(LimeParams),
    LrpEpsilon { epsilon: f64 },
}

pub const ATTRIBUTION_IDS: [&str; 8] = [
    "lime",
    "lrp_epsilon",
    "saliency",
    "gradient",
    "gradient_x_input",
    "occlusion",
    "smoothgrad",
    "integrated_gradients",
];

impl AttributionMethod {
    /// Builds a method from an explainer id and a JSON object of optional
    /// parameters; absent parameters take their defaults.
    pub fn from_params(id: &str, params: &Value) -> Result<Self> {
        let empty = Map::new();
        let p = match params {
            Value::Null => &empty,
            Value::Object(m) => m,
            _ => return Err(Error::InvalidParam("params must be a JSON object".into())),
        };
        let uint = |key: &str, default: usize| -> Result<usize> {
            match p.get(key) {
                None => Ok(default),
                Some(v) => v
                    .as_u64()
                    .map(|v| v as usize)
                    .ok_or_else(|| Error::InvalidParam(format!("{key} must be a non-negative integer"))),
            }
        };
        let real = |key: &str, default: f64| -> Result<f64> {
            match p.get(key) {
                None => Ok(default),
                Some(v) => v
                    .as_f64()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::InvalidParam(format!("{key} must be a finite number"))),
            }
        };
        Ok(match id {
            "saliency" => AttributionMethod::Saliency,
            "gradient" => AttributionMethod::Gradient,
            "gradient_x_input" => AttributionMethod::GradientXInput,
            "integrated_gradients" => AttributionMethod::IntegratedGradients {
                steps: uint("m", uint("steps", 64)?)?,
                baseline: real("baseline", 0.0)?,
            },
            "smoothgrad" => AttributionMethod::SmoothGrad {
                samples: uint("n", uint("samples", 25)?)?,
                sigma_rel: real("sigma_rel", 0.15)?,
                seed: uint("seed", 0)? as u64,
            },
            "occlusion" => AttributionMethod::Occlusion {
                window: uint("window", 2)?,
                stride: uint("stride", 1)?,
                baseline_value: real("baseline_value", 0.0)?,
            },
            "lime" => {
                let d = LimeParams::default();
                AttributionMethod::Lime(LimeParams {
                    segments: match p.get("segments") {
                        None => d.segments,
                        Some(Value::String(s)) => s.clone(),
                        Some(_) => return Err(Error::InvalidParam("segments must be a string".into())),
                    },
                    n_samples: uint("n_samples", d.n_samples)?,
                    kernel_width_rel: real("kernel_width_rel", d.kernel_width_rel)?,
                    ridge_lambda: real("ridge_lambda", d.ridge_lambda)?,
                    seed: uint("seed", d.seed as usize)? as u64,
                })
            }
            "lrp_epsilon" => AttributionMethod::LrpEpsilon {
                epsilon: real("epsilon", 0.01)?,
            },
            other => return Err(Error::NotFound(format!("attribution explainer {other:?}"))),
        })
    }

    pub fn id(&self) -> &'static str {
        match self {
            AttributionMethod::Saliency => "saliency",
            AttributionMethod::Gradient => "gradient",
            AttributionMethod::GradientXInput => "gradient_x_input",
            AttributionMethod::IntegratedGradients { .. } => "integrated_gradients",
            AttributionMethod::SmoothGrad { .. } => "smoothgrad",
            AttributionMethod::Occlusion { .. } => "occlusion",
            AttributionMethod::Lime(_) => "lime",
            AttributionMethod::LrpEpsilon { .. } => "lrp_epsilon",
        }
    }
}

/// Runs `method` on `(state, x, target)`.
pub fn explain(state: &ModelState, x: &Tensor, target: usize, method: &AttributionMethod) -> Result<AttributionMap> {
    engine::check_target(state, target)?;
    match method {
        AttributionMethod::Saliency => saliency(state, x, target),
        AttributionMethod::Gradient => gradient(state, x, target),
        AttributionMethod::GradientXInput => gradient_x_input(state, x, target),
        AttributionMethod::IntegratedGradients { steps, baseline } => {
            let b = Tensor::filled(&x.shape, *baseline);
            integrated_gradients(state, x, target, &b, *steps)
        }
        AttributionMethod::SmoothGrad {
            samples,
            sigma_rel,
            seed,
        } => smoothgrad(state, x, target, *samples, *sigma_rel, *seed),
        AttributionMethod::Occlusion {
            window,
            stride,
            baseline_value,
        } => occlusion(state, x, target, *window, *stride, *baseline_value),
        AttributionMethod::Lime(params) => lime(state, x, target, params),
        AttributionMethod::LrpEpsilon { epsilon } => lrp_epsilon(state, x, target, *epsilon),
    }
}
