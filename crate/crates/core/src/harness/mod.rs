//! Trace replay, workload generation and reporting.

pub mod corpus;
pub mod experiment;
pub mod report;
pub mod trace;
pub mod workload;

pub use experiment::{
    run_experiment, run_many, AppWindow, BaselineRef, ExperimentOptions, ExperimentResult,
    WindowSample,
};
pub use report::{summary_rows, write_report, write_summary, write_timeseries, SummaryRow};
pub use trace::{parse_trace, parse_trace_str, write_trace, Op, TraceReader, TraceRecord};
pub use workload::{generate, AppWorkload, Burst, Popularity, SizeDist, WorkloadSpec};
