//! Average treatment effects under sample selection.
//!
//! Outcomes are observed only for a selected subsample (`s = 1`), and both
//! treatment and selection may depend on covariates. The crate provides
//!
//! * a local-moment random forest ([`forest`]) that learns the Riesz
//!   representer of the treatment-effect functional together with the
//!   outcome regression,
//! * doubly robust, efficient-score and selection-blind estimators
//!   ([`estimators`]),
//! * an omitted-variable-bias toolkit for latent selection confounding
//!   ([`sensitivity`], [`benchmark`]),
//! * simulation designs with exactly enumerable ground truth ([`dgp`]) and a
//!   Monte-Carlo harness ([`mc`]).
//!
//! ```no_run
//! use riesz_selection::{dgp, data, estimators};
//!
//! let sample = dgp::gen_mar(&dgp::MarDgpConfig::new(2000, 7)).unwrap();
//! let folds = data::make_folds(&sample, 3, 7).unwrap();
//! let est = estimators::estimate_fr(&sample, &folds, &estimators::FrConfig::default()).unwrap();
//! println!("{:.3} ± {:.3}", est.theta, est.se);
//! ```

pub mod benchmark;
pub mod data;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod forest;
pub mod learners;
pub mod linalg;
pub mod mc;
pub mod normal;
pub mod rng;
pub mod sensitivity;

pub use data::{CsvSchema, Dataset, FoldPlan};
pub use error::{Error, Result};
pub use estimators::{AteEstimate, Method};
