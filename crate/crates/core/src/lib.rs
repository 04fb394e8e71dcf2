//! Evaluation toolkit for brain lesion segmentation.
//!
//! Reads and writes NIfTI-1 volumes, extracts connected lesions, scores
//! predictions with Dice and lesion-wise detection F1, fuses rater and model
//! outputs, compares methods with the Wilcoxon signed-rank test, and builds
//! synthetic phantoms for testing the whole pipeline.

pub mod detection;
pub mod error;
pub mod fusion;
pub mod lesion;
pub mod nifti;
pub mod overlap;
pub mod phantom;
pub mod report;
pub mod stats;
pub mod volume;

pub use detection::{
    detect_one, detection_rate, discrepancies_from_sets, discrepancy_report, discrepancy_report_with,
    harmonic_f1, lesion_f1, lesion_f1_labels, lesion_f1_sets, DetectionOutcome, DetectionParams,
    Discrepancies, FailureMode, FilterStage, LesionF1Report,
};
pub use error::{Error, Result};
pub use fusion::{argmax_labels, ensemble_logits, ensemble_with, majority_vote, ClassMap, EnsembleMode, LogitStack};
pub use lesion::{
    extract_lesions, extract_lesions_with, label_components, BoundingBox, Connectivity, Lesion, LesionSet,
    LesionSummary,
};
pub use nifti::{
    decode_volume, encode_volume, read_label_volume, read_mask, read_scalar_volume, read_volume,
    write_label_volume, write_scalar_volume, write_volume, write_volume_with, DatumKind, Endian, NiftiVolume,
    Samples, VolumeHeader,
};
pub use overlap::{dice, dice_table, DiceScore, DiceTable, DiceUnit, OverlapCounts};
pub use phantom::{generate_phantom, perturb, CounterRng, LesionBlob, PerturbSpec, PhantomSpec, RandomLesions, Region};
pub use report::{score_case, CaseReport, DiceRow, ScoreOptions, ScoreRow, SCHEMA_VERSION};
pub use stats::{
    aggregate_reports, pairwise_dice_matrix, wilcoxon_signed_rank, wilcoxon_with, CohortSummary, MetricSummary,
    PairedSample, TestMethod, WilcoxonConfig, WilcoxonResult,
};
pub use volume::{
    apply_mask, flip_sagittal, permute_axes, resample_labels, resample_scalars, resample_to_isovoxel,
    standardize_intensities, Affine, BrainMask, Grid, Label, LabelMap, LabelVolume, Reorient, Resample, ScalarVolume,
    Volume,
};
