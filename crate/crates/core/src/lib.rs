//! Annotation orchestration for crowdsourced relation re-labeling.

pub mod analytics;
pub mod campaign;
pub mod model;
pub mod orchestrator;
pub mod quality;
pub mod scalar;
pub mod scorer;
pub mod simulator;
pub mod taxonomy;

pub use model::{Dataset, Instance, Label, TypePair};
pub use scalar::Scalar;
pub use taxonomy::{AnnotationPlan, ClusterName, SuperCluster, Taxonomy};

/// Exact rational scalar used by the oracle checks.
pub type Exact = num_rational::BigRational;

pub type Prf = scorer::Prf<f64>;
pub type ExactPrf = scorer::Prf<Exact>;
pub type ScoreReport = scorer::ScoreReport<f64>;
pub type DiffReport = analytics::DiffReport<f64>;
pub type ErrorTaxonomy = scorer::ErrorTaxonomy<f64>;
