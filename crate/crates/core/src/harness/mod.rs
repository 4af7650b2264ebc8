//! Experiment configuration, single runs with persisted artifacts, the
//! ε × family × seed grid and the aggregate report.

mod config;
mod frechet;
mod grid;
mod report;
mod run;

pub use config::*;
pub use frechet::frechet_gaussian_proxy;
pub use grid::{run_grid, GridCell, GridSpec};
pub use report::{
    emit_report, report_csv, report_rows, report_table, summarize, ReportFiles, ReportRow,
    REPORT_CSV_HEADER,
};
pub use run::{
    execute, run_experiment, Experiment, Outcome, RunManifest, SeedRecord, MANIFEST_FORMAT,
};
