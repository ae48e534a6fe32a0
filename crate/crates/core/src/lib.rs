//! Weighted subsampling estimators for recursive (GARCH-type) likelihoods.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod figures;
pub mod inference;
pub mod model;
pub mod protocol;
pub mod scheme;
pub mod tuning;

pub use error::{Error, Result};
pub use estimators::{ControlVariateCache, EstimateResult};
pub use inference::{ChainOutput, PriorSpec, VariationalState};
pub use model::{ErrorLaw, Family, LikelihoodModel, ModelSpec, ParamVector, PreSample, Space};
pub use scheme::{SamplingScheme, SchemeKind, SchemeSpec, Subsample};
pub use tuning::{Binding, TuningResult};
