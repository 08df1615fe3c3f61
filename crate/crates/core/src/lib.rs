//! Federated expectation-maximization in the expectation space.
//!
//! The crate simulates FedEM (compressed updates, per-worker memories and
//! Bernoulli partial participation), its variance-reduced variant VR-FedEM,
//! and FedMissEM for low-rank matrix imputation. Models plug in through
//! [`LatentModel`]; a Gaussian mixture is provided in [`gmm`].
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compression;
pub mod error;
pub mod fedem;
pub mod gmm;
pub mod harness;
pub mod linalg;
pub mod missem;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod stat;
pub mod vrfedem;

pub use compression::{CompressedDelta, QuantizerSpec};
pub use error::{Error, Result};
pub use fedem::{FedEmConfig, ServerState, WorkerState};
pub use model::LatentModel;
pub use scalar::Scalar;
pub use stat::SufficientStatistic;
pub use vrfedem::{VrConfig, VrWorkerState};

/// Expectation-space vector in double precision.
pub type Statistic = SufficientStatistic<f64>;
/// Gaussian mixture model in double precision.
pub type Gmm = gmm::GaussianMixture<f64>;
/// Gaussian mixture parameter in double precision.
pub type GmmParams = gmm::GmmTheta<f64>;
/// FedEM configuration in double precision.
pub type FedEmConfig64 = FedEmConfig<f64>;
/// VR-FedEM configuration in double precision.
pub type VrConfig64 = VrConfig<f64>;
/// Dense matrix in double precision.
pub type Mat = linalg::Matrix<f64>;
