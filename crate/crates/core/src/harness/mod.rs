//! Configuration-driven experiment runs and their reports.

pub mod config;
pub mod report;
pub mod run;

pub use config::{parse_config, parse_seed_list, DataConfig, DataSource, FilterMode, Overrides, RunConfig};
pub use report::{build_report, emit_report, Curve, Mode, Report, ReportFormat};
pub use run::{
    build_stream, build_stream_with_filter, filter_path, run, snapshot_path, RunManifest, RunOutcome, SeedRun,
};
