//! Engine behind the explainable-ML workbench.
//!
//! Small feed-forward models ([`graph`], [`model`], [`engine`]) are trained
//! with [`train`] and logged by [`runlog`]. [`attribution`] and
//! [`introspection`] explain them, [`advisor`] proposes transitions that
//! [`states`] keeps in a lineage forest, and [`provenance`] plus [`report`]
//! turn findings into exportable reports. [`workspace`] ties everything to
//! one directory on disk.

pub mod engine;
pub mod error;
pub mod graph;
pub mod model;
pub mod modelfile;
pub mod tensor;
pub mod runlog;
pub mod attribution;
pub mod taxonomy;
pub mod heatmap;
pub mod introspection;
pub mod docs;
pub mod dataset;
pub mod metrics;
pub mod transition;
pub mod train;
pub mod compare;
pub mod states;
pub mod advisor;
pub mod provenance;
pub mod report;
pub mod workspace;
