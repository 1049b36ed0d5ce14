pub mod cli;
pub mod config;
pub mod dm_compress;
pub mod error;
pub mod flow;
pub mod integrator;
pub mod jump_ops;
pub mod linalg;
pub mod models;
pub mod mpo;
pub mod observables;
pub mod oracle;
pub mod rand_round;
pub mod tt;

pub use dm_compress::{CompressOptions, FactorMatrix, LinCombMethod};
pub use error::{Error, Result};
pub use integrator::{ButcherTableau, Integrator, StepOptions, StepStats, TolPolicy};
pub use linalg::{CMat, C64};
pub use mpo::{ApplyMethod, Mpo};
pub use rand_round::SketchPolicy;
pub use tt::{Core, DenseTensor, SweepTolerance, TensorTrain, TruncationReport};
