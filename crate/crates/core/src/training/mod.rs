//! Training loop, checkpoints and the ablation harness.

mod ablation;
pub mod checkpoint;
mod config;
mod history;
mod run;

pub use ablation::{run_ablation, AblationReport, AblationRow};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{Prototype, TrainConfig};
pub use history::{convergence_verdict, ConvergenceVerdict, RunHistory, Snapshot};
pub use run::{eval_seed, train, Evaluator, LastLosses, SnapshotMetrics, TrainState};
