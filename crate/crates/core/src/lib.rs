//! Tabular preference optimization: synthetic bandit tasks, Bradley-Terry and
//! Plackett-Luce preference models, the closed-form KL-regularized optimum,
//! direct preference losses with analytic gradients, and the training loops
//! that tie them together.

pub mod error;
pub mod exact;
pub mod numeric;
pub mod objectives;
pub mod prefmodel;
pub mod rng;
pub mod table;
pub mod taskgen;
pub mod train;

pub use error::{Error, Result};
pub use exact::FrontierPoint;
pub use objectives::{LossKind, LossReport, ParametricPolicy, ParametricReward};
pub use rng::Rng;
pub use table::{PolicyTable, RewardShift, RewardTable, Shape};
pub use taskgen::{DatasetKind, Instance, PreferenceDataset, PreferencePair, Ranking, Records, SoftPairRecord};
pub use train::{DataMode, EvalRecord, LrScale, Method, Optimizer, RunTrace, TrainConfig};
