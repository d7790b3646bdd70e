//! Joint distribution for mixed continuous/binary random vectors and the
//! factor-analysis model built on it.
//!
//! * [`gg`]: the Gaussian × Grassmann mixed distribution (`GGParams`), with
//!   exact enumeration of the `2^q` binary states.
//! * [`factor`]: factor analysis for mixed data with norm-constrained
//!   loadings, factor scores and rotation fixing.
//! * [`estimation`]: maximum-likelihood fitting, gradients and BIC model
//!   selection.
//! * [`data`]: CSV ingestion, binarization and deduplication.

pub mod error;
pub mod numerics;

pub use error::{Error, Result};
pub mod data;
pub mod factor;
pub mod estimation;
pub mod gg;
#[doc(hidden)]
pub mod testing;

pub use data::{BinarizeRule, ColumnKind, ColumnSpec, MixedDataset, Schema};
pub use factor::{FactorModel, LoadingSummary, Posterior};
pub use estimation::{fit, fit_gg, nll, nll_gradient, select_dim, Chart, FitOptions, FitReport, FittedModel, ParamVector, Termination};
pub use gg::{GGParams, IndexPartition, MixtureComponentTable, Moments, Role};
pub use numerics::{BitMask, SymMatrix};
