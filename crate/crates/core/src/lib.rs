//! Zero-inflated negative binomial regression with crossed random intercepts.
//!
//! The crate covers the full analysis pipeline: count distributions
//! ([`dist`]), data ingestion and screening ([`prep`]), model frames
//! ([`frame`]), Laplace-approximated maximum likelihood ([`estimator`]),
//! model selection ([`select`]), and simulation oracles ([`sim`]).

pub mod data;
pub mod dist;
pub mod error;
pub mod estimator;
pub mod frame;
pub mod io;
pub mod prep;
pub mod select;
pub mod sim;
pub mod stats;

pub use data::{Covariate, Dataset, Factor};
pub use error::{Error, ErrorKind, Result};
pub use estimator::{fit, FitOptions, FitResult};
pub use frame::{build_frame, Family, ModelFrame, ModelSpec, Part};
