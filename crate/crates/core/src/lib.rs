//! Structural vector autoregression with Gaussian-mixture shocks, observed
//! through subsampling or mixed-frequency schemes, and estimated by exact EM.

pub mod em;
pub mod error;
pub mod eval;
pub mod kalman;
pub mod linalg;
pub mod model;
pub mod sampling;
pub mod selection;

pub use em::{Constraint, EmConfig, FitResult, Theta};
pub use error::{Result, SvarError};
pub use model::{MixtureSpec, SvarModel, Trajectory};
pub use sampling::{ObservationSet, SamplingScheme};
