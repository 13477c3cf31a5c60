//! Experiment configuration, orchestration, and reporting.

mod config;
mod report;
mod run;

pub use config::{
    load_config, parse_config, BaselineSection, ChannelSection, ExperimentConfig, FisherSection,
    FrontEndKind, GridSection, OutputSection, PriorKind, SchemeKind, TailSection, TailSource,
    TrainSection, WeightKind,
};
pub use report::{write_report, ExperimentReport, ReportRow, Summary, CSV_HEADER};
pub use run::{run_estimate, run_fisher_curve, run_kde_baseline, run_validate, RunOptions};
