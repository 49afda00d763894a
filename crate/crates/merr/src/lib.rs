//! Ridge regression on bags of samples via kernel mean embeddings.
//!
//! Inputs are *bags*: finite point sets drawn from unobserved distributions.
//! Each bag is embedded as the empirical mean of base-kernel sections, an
//! outer kernel compares embeddings, and a regularized least-squares dual
//! system maps bags to scalar or vector labels in closed form.
//!
//! The crate is organized around that pipeline:
//!
//! * [`kernel`] — base kernels on the point space (gaussian, laplacian, cauchy).
//! * [`embedding`] — empirical mean-embedding geometry: inner products,
//!   distances, Gram matrices, concentration radii, bandwidth selection.
//! * [`outer`] — kernels on embedded distributions (the linear set kernel and
//!   five nonlinear families) with their Hölder smoothness exponents.
//! * [`regressor`] — fitting, prediction, risk estimation, and bag-level
//!   cross-validation.
//! * [`theory`] — closed-form evaluators for finite-sample excess-risk
//!   bounds, rate exponents, bag-size schedules, and effective dimension.
//! * [`synthetic`] — two-stage generators with known Bayes regression values.
//! * [`experiment`] — sweep runner, concentration experiment, log-log slope
//!   fits, and reproducible CSV reports.

pub mod bag;
pub mod embedding;
pub mod error;
pub mod experiment;
pub mod io;
pub mod kernel;
pub mod outer;
pub mod regressor;
pub mod rng;
pub mod solver;
pub mod synthetic;
pub mod theory;

pub use bag::PointBag;
pub use error::{Error, Result};
pub use kernel::BaseKernel;
pub use outer::OuterKernel;
pub use regressor::{LabeledDataset, TrainedModel};
