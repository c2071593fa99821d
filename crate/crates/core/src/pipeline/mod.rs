//! Batch orchestration over a dataset directory.

mod config;
mod dataset;
mod diag;
mod run;
pub mod synth;

pub use config::{BackendKind, ExtractorKind, RunConfig, VOC_CLASSES};
pub use dataset::{read_label_dir, DatasetLayout, Sample};
pub use diag::{dump_diagnostics, Arrow, ClassArrows, DEFAULT_DIAG_POINTS};
pub use run::{
    run_refinement, sweep_csv, timestep_sweep, ClassOutcome, Engine, RunReport, RunResult, SampleOutput,
    SampleStatus, SweepRow,
};
