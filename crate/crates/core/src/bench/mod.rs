//! Experiment protocol: run configuration, training loop, multistart and
//! grid search, performance profiles, and result files.

pub mod config;
pub mod findings;
pub mod output;
pub mod profile;
pub mod protocol;
pub mod train;

pub use config::{ArchitectureConfig, BaseArchitecture, DataSource, DatasetSpec, OptimizerSpec, ProblemSpec, RunConfig};
pub use findings::{qualitative_findings_check, FindingsReport, Verdict};
pub use output::{default_out_dir, read_records, ReportWriter};
pub use profile::{default_tau_grid, success_rate_profile, Outcome, ProfileCurve};
pub use protocol::{grid_search, multistart, preset_grid, run_all, GridAxis, GridResult, MultistartSummary};
pub use train::{run_on, run_training, EpochLog, ExperimentRecord, Problem, RunStatus};
