//! Batch evaluation of lesion segmentations: the library behind the
//! `lesionbench` command.

pub mod compare;
pub mod evaluate;
pub mod manifest;
pub mod preprocess;
pub mod views;

pub use compare::{compare_tables, read_metric_column, Comparison};
pub use evaluate::{cohort_rows, run_evaluation, CaseError, CohortRow, RunOutcome};
pub use manifest::{CaseEntry, RunManifest};
pub use preprocess::{preprocess_image, run_preprocess, PreprocessRequest};
pub use views::{ensemble_views, ViewSpec};

/// Worker count when neither `--jobs` nor `LESIONBENCH_JOBS` is set.
pub fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}
