//! Experiment grids: configuration, training, persistence, aggregation,
//! statistics, plots and reports.

pub mod aggregate;
pub mod config;
pub mod plots;
pub mod report;
pub mod stats;
pub mod store;
pub mod train;

pub use aggregate::{aggregate, mean_std, AggregateRow, GroupField, MeanStd, Metric, Pivot};
pub use config::{Cell, RunConfig, SynthConfig};
pub use plots::emit_plots;
pub use report::{render_report, ttest_rows, TTestRow};
pub use stats::{paired_ttest, student_t_cdf, student_t_two_sided, TTestResult};
pub use store::{load_records, load_timings, resolve_out, run_grid, GridSummary};
pub use train::{pipeline_hash, DataHandle, EpochMetrics, RunRecord, ShrinkStats, Timing, Trainer};
