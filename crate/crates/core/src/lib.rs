//! Feature learning versus noise memorization under GD, Adam and sign descent.
//!
//! The crate bundles everything needed to study a two-layer CNN with a
//! truncated polynomial activation on a synthetic two-patch distribution:
//!
//! * [`data`]: the sparse feature/noise data model and its file format.
//! * [`model`]: the network, its weight-decayed cross-entropy objective and
//!   analytic gradients.
//! * [`optim`]: full-batch GD, Adam and sign descent plus the training loop.
//! * [`probes`]: feature-learning and noise-memorization statistics.
//! * [`convex`]: a logistic-regression counterpart where Adam and GD agree.
//! * [`oracles`]: independent checks (finite differences, support overlap
//!   Monte Carlo, Adam/sign closeness audit, tensor-power recursions).
//! * [`config`], [`io`], [`runner`]: configuration, persistence and
//!   experiment orchestration.

pub mod config;
pub mod convex;
pub mod data;
mod error;
pub mod io;
pub mod model;
pub mod optim;
pub mod oracles;
pub mod probes;
pub mod rng;
pub mod runner;

pub use config::RunConfig;
pub use convex::{ConvexLabConfig, ConvexModel, EquivalenceReport};
pub use data::{DataConfig, Dataset, Example, Label, PatchOrder};
pub use error::{Error, Result};
pub use model::{Gradient, ModelConfig, Weights};
pub use optim::{Algorithm, OptState, OptimConfig, TrainOptions, TrainOutcome, Trainer};
pub use probes::TrajectoryRecord;
pub use runner::{RunOutput, RunSummary};
