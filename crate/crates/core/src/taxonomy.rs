//! Explainer registry: every implemented explainer with its taxonomy
//! (level, abstraction, dependencies) and where it can be applied.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Global,
    Local,
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Abstraction {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dependency {
    Data,
    Model,
    Domain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Per-sample input attributions over the whole model.
    Attribution,
    /// Scans over logged runs and checkpoints of single tensors.
    Introspection,
    /// Documentation overlay for node kinds and explainers.
    Lookup,
}

/// Where an explainer can be applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Applicability {
    WholeModel,
    TrainableNodes,
    AnyNode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainerDescriptor {
    pub id: &'static str,
    pub name: &'static str,
    pub family: Family,
    pub level: Level,
    pub abstraction: Abstraction,
    pub dependencies: Vec<Dependency>,
    pub applicability: Applicability,
    pub doc: &'static str,
    pub citation: &'static str,
}

const GRADIENT_DEPS: [Dependency; 3] = [Dependency::Data, Dependency::Model, Dependency::Domain];

fn attribution(
    id: &'static str,
    name: &'static str,
    dependencies: &[Dependency],
    doc: &'static str,
    citation: &'static str,
) -> ExplainerDescriptor {
    ExplainerDescriptor {
        id,
        name,
        family: Family::Attribution,
        level: Level::Local,
        abstraction: Abstraction::High,
        dependencies: dependencies.to_vec(),
        applicability: Applicability::WholeModel,
        doc,
        citation,
    }
}

fn introspection(
    id: &'static str,
    name: &'static str,
    level: Level,
    doc: &'static str,
) -> ExplainerDescriptor {
    ExplainerDescriptor {
        id,
        name,
        family: Family::Introspection,
        level,
        abstraction: Abstraction::Low,
        dependencies: vec![Dependency::Model],
        applicability: Applicability::TrainableNodes,
        doc,
        citation: "workbench built-in",
    }
}

/// All registered explainers, highest abstraction first.
pub fn registry() -> Vec<ExplainerDescriptor> {
    vec![
        attribution(
            "lime",
            "LIME",
            &[Dependency::Data],
            "Fits a weighted linear surrogate on perturbed copies of the sample; coefficients rank input segments.",
            "Ribeiro, Singh, Guestrin. \"Why Should I Trust You?\": Explaining the Predictions of Any Classifier. KDD 2016.",
        ),
        attribution(
            "lrp_epsilon",
            "e-LRP",
            &GRADIENT_DEPS,
            "Propagates the class score backwards layer by layer with the epsilon-stabilised z-rule.",
            "Bach et al. On Pixel-Wise Explanations for Non-Linear Classifier Decisions by Layer-Wise Relevance Propagation. PLoS ONE 2015.",
        ),
        attribution(
            "saliency",
            "Saliency",
            &GRADIENT_DEPS,
            "Signed gradient of the class score with respect to each input element.",
            "Simonyan, Vedaldi, Zisserman. Deep Inside Convolutional Networks: Visualising Image Classification Models and Saliency Maps. 2013.",
        ),
        attribution(
            "gradient",
            "Gradient",
            &GRADIENT_DEPS,
            "Plain input gradient of the class score (same computation as saliency).",
            "Alber et al. iNNvestigate neural networks! 2018.",
        ),
        attribution(
            "gradient_x_input",
            "grad*input",
            &GRADIENT_DEPS,
            "Input gradient multiplied element-wise by the input.",
            "Shrikumar et al. Not Just a Black Box: Learning Important Features Through Propagating Activation Differences. 2016.",
        ),
        attribution(
            "occlusion",
            "Occlusion",
            &GRADIENT_DEPS,
            "Score drop when a sliding window of the input is replaced by a baseline value.",
            "Zeiler, Fergus. Visualizing and Understanding Convolutional Networks. ECCV 2014.",
        ),
        attribution(
            "smoothgrad",
            "SmoothGrad",
            &GRADIENT_DEPS,
            "Mean saliency over Gaussian-noised copies of the sample.",
            "Smilkov et al. SmoothGrad: removing noise by adding noise. 2017.",
        ),
        attribution(
            "integrated_gradients",
            "Integrated Gradients",
            &GRADIENT_DEPS,
            "Path integral of gradients from a baseline to the sample, times the input difference.",
            "Sundararajan, Taly, Yan. Axiomatic Attribution for Deep Networks. ICML 2017.",
        ),
        introspection(
            "minmax",
            "MinMax",
            Level::NotApplicable,
            "Minimum and maximum of a tensor at every logged step.",
        ),
        introspection(
            "histo_trend",
            "HistoTrend",
            Level::NotApplicable,
            "Tensor value histograms of every logged step re-binned onto a common range.",
        ),
        introspection(
            "dead_weight",
            "Dead Weight",
            Level::Global,
            "Weights that stay near zero and stop changing across recent checkpoints.",
        ),
        introspection(
            "saturated_weight",
            "Saturated Weight",
            Level::Global,
            "Weights stuck at large magnitude with negligible updates across recent checkpoints.",
        ),
        ExplainerDescriptor {
            id: "lookup",
            name: "Look-up",
            family: Family::Lookup,
            level: Level::NotApplicable,
            abstraction: Abstraction::Low,
            dependencies: vec![],
            applicability: Applicability::AnyNode,
            doc: "Documentation entries for node kinds and explainers, with external references.",
            citation: "workbench built-in",
        },
    ]
}

pub fn descriptor(id: &str) -> Result<ExplainerDescriptor> {
    registry()
        .into_iter()
        .find(|d| d.id == id)
        .ok_or_else(|| Error::NotFound(format!("explainer {id:?}")))
}
