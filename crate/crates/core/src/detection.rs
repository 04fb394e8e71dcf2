//! Lesion-wise detection: whether each lesion of one segmentation is found
//! by another, the resulting sensitivity/precision/F1, and false
//! positive/negative audit lists.
//!
//! A lesion `g` of X is detected by Y when
//!
//! 1. the lesions of Y overlap `g` by at least α% of `|g|`, and
//! 2. the Y lesions contributing most of that overlap (the shortest prefix,
//!    by descending overlap, reaching γ% of it) lie no more than β% outside `g`.
//!
//! Failing (1) is undersegmentation, failing (2) oversegmentation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lesion::{extract_lesions_with, Connectivity, Lesion, LesionSet, DEFAULT_MIN_VOLUME_MM3};
use crate::volume::{Label, LabelVolume};

pub const DEFAULT_ALPHA_PCT: f64 = 10.0;
pub const DEFAULT_BETA_PCT: f64 = 70.0;
pub const DEFAULT_GAMMA_PCT: f64 = 65.0;

/// When the minimum-volume filter is applied to the segmentation a lesion is
/// matched against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterStage {
    /// Small components are removed from both sides before matching.
    #[default]
    BeforeMatching,
    /// Lesions are still filtered, but matched against every component of
    /// the other segmentation.
    AfterMatching,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionParams {
    pub alpha_pct: f64,
    pub beta_pct: f64,
    pub gamma_pct: f64,
    pub min_volume_mm3: f64,
    pub connectivity: Connectivity,
    pub filter_stage: FilterStage,
}

impl Default for DetectionParams {
    fn default() -> Self {
        DetectionParams {
            alpha_pct: DEFAULT_ALPHA_PCT,
            beta_pct: DEFAULT_BETA_PCT,
            gamma_pct: DEFAULT_GAMMA_PCT,
            min_volume_mm3: DEFAULT_MIN_VOLUME_MM3,
            connectivity: Connectivity::Eighteen,
            filter_stage: FilterStage::BeforeMatching,
        }
    }
}

impl DetectionParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidParameter(format!("{what} = {v}")));
        if !(self.alpha_pct > 0.0 && self.alpha_pct <= 100.0) {
            return bad("alpha_pct", self.alpha_pct);
        }
        if !(self.beta_pct >= 0.0 && self.beta_pct <= 100.0) {
            return bad("beta_pct", self.beta_pct);
        }
        if !(self.gamma_pct > 0.0 && self.gamma_pct <= 100.0) {
            return bad("gamma_pct", self.gamma_pct);
        }
        if !(self.min_volume_mm3 >= 0.0) || !self.min_volume_mm3.is_finite() {
            return bad("min_volume_mm3", self.min_volume_mm3);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureMode {
    None,
    Undersegmented,
    Oversegmented,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub ground_lesion_id: u32,
    pub detected: bool,
    pub failure_mode: FailureMode,
    /// Ids of the γ-prefix lesions, in prefix order. Empty when undersegmented.
    pub contributing_pred_ids: Vec<u32>,
    /// Voxels of the lesion covered by any lesion of the other segmentation.
    pub overlap_voxels: usize,
}

/// Applies the detection rule to one lesion.
pub fn detect_one(ground: &Lesion, predictions: &LesionSet, params: &DetectionParams) -> DetectionOutcome {
    let mut overlaps: HashMap<u32, usize> = HashMap::new();
    for &v in &ground.voxels {
        let id = predictions.id_at(v);
        if id != 0 {
            *overlaps.entry(id).or_insert(0) += 1;
        }
    }
    let total: usize = overlaps.values().sum();
    let size = ground.voxels.len();

    if (total as f64) * 100.0 < params.alpha_pct * size as f64 {
        return DetectionOutcome {
            ground_lesion_id: ground.id,
            detected: false,
            failure_mode: FailureMode::Undersegmented,
            contributing_pred_ids: Vec::new(),
            overlap_voxels: total,
        };
    }

    let mut ranked: Vec<(u32, usize)> = overlaps.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let needed = params.gamma_pct * total as f64;
    let mut acc = 0usize;
    let mut prefix = Vec::new();
    for &(id, o) in &ranked {
        prefix.push(id);
        acc += o;
        if acc as f64 * 100.0 >= needed {
            break;
        }
    }

    let mut union = 0usize;
    let mut outside = 0usize;
    for &(id, o) in ranked.iter().take(prefix.len()) {
        let n = predictions.get(id).map_or(0, |l| l.voxels.len());
        union += n;
        outside += n - o;
    }
    let detected = !(outside as f64 * 100.0 > params.beta_pct * union as f64);
    DetectionOutcome {
        ground_lesion_id: ground.id,
        detected,
        failure_mode: if detected {
            FailureMode::None
        } else {
            FailureMode::Oversegmented
        },
        contributing_pred_ids: prefix,
        overlap_voxels: total,
    }
}

/// Fraction of `lesions` detected by `other`, with per-lesion outcomes.
pub fn detection_rate(
    lesions: &LesionSet,
    other: &LesionSet,
    params: &DetectionParams,
) -> (Option<f64>, Vec<DetectionOutcome>) {
    let outcomes: Vec<DetectionOutcome> = lesions.iter().map(|l| detect_one(l, other, params)).collect();
    if outcomes.is_empty() {
        return (None, outcomes);
    }
    let hits = outcomes.iter().filter(|o| o.detected).count();
    (Some(hits as f64 / outcomes.len() as f64), outcomes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionF1Report {
    /// Share of ground lesions detected by the prediction.
    pub sensitivity: f64,
    /// Share of predicted lesions detected by the ground truth.
    pub precision: f64,
    pub f1: f64,
    pub n_ground: usize,
    pub n_pred: usize,
    /// Both segmentations are lesion-free; the 1.0 scores are a convention.
    pub vacuous: bool,
    pub outcomes_gt: Vec<DetectionOutcome>,
    pub outcomes_pred: Vec<DetectionOutcome>,
}

impl LesionF1Report {
    pub fn detected_ground(&self) -> usize {
        self.outcomes_gt.iter().filter(|o| o.detected).count()
    }
}

/// Harmonic mean, 0 when both rates are 0.
pub fn harmonic_f1(sensitivity: f64, precision: f64) -> f64 {
    if sensitivity + precision == 0.0 {
        0.0
    } else {
        2.0 * sensitivity * precision / (sensitivity + precision)
    }
}

/// Lesion-wise sensitivity, precision and F1 of `pred_vol` against `ground_vol`.
pub fn lesion_f1(
    ground_vol: &LabelVolume,
    pred_vol: &LabelVolume,
    label_id: Label,
    params: &DetectionParams,
) -> Result<LesionF1Report> {
    lesion_f1_labels(ground_vol, pred_vol, &[label_id], params)
}

/// [`lesion_f1`] over the union of several labels.
pub fn lesion_f1_labels(
    ground_vol: &LabelVolume,
    pred_vol: &LabelVolume,
    label_ids: &[Label],
    params: &DetectionParams,
) -> Result<LesionF1Report> {
    params.validate()?;
    ground_vol.grid().ensure_same_dims(pred_vol.grid())?;
    let extract = |v: &LabelVolume, min| extract_lesions_with(v, label_ids, min, params.connectivity);
    let ground = extract(ground_vol, params.min_volume_mm3);
    let pred = extract(pred_vol, params.min_volume_mm3);
    Ok(match params.filter_stage {
        FilterStage::BeforeMatching => lesion_f1_sets(&ground, &pred, &ground, &pred, params),
        FilterStage::AfterMatching => {
            let ground_all = extract(ground_vol, 0.0);
            let pred_all = extract(pred_vol, 0.0);
            lesion_f1_sets(&ground, &pred, &ground_all, &pred_all, params)
        }
    })
}

/// Scores already-extracted lesion sets. Ground lesions are matched against
/// `pred_targets` and predicted lesions against `ground_targets`.
pub fn lesion_f1_sets(
    ground: &LesionSet,
    pred: &LesionSet,
    ground_targets: &LesionSet,
    pred_targets: &LesionSet,
    params: &DetectionParams,
) -> LesionF1Report {
    let (sens, outcomes_gt) = detection_rate(ground, pred_targets, params);
    let (prec, outcomes_pred) = detection_rate(pred, ground_targets, params);
    let (sensitivity, precision, f1, vacuous) = match (sens, prec) {
        (None, None) => (1.0, 1.0, 1.0, true),
        (Some(s), Some(p)) => (s, p, harmonic_f1(s, p), false),
        // one side lesion-free
        (s, p) => (s.unwrap_or(0.0), p.unwrap_or(0.0), 0.0, false),
    };
    LesionF1Report {
        sensitivity,
        precision,
        f1,
        n_ground: ground.len(),
        n_pred: pred.len(),
        vacuous,
        outcomes_gt,
        outcomes_pred,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discrepancies {
    /// Predicted lesions overlapping the ground foreground by at most the threshold.
    pub fp_lesions: Vec<Lesion>,
    /// Ground lesions overlapping the predicted foreground by at most the threshold.
    pub fn_lesions: Vec<Lesion>,
}

/// False positive and false negative lesions for manual review. A lesion is
/// listed unless more than `overlap_pct` percent of it overlaps the other
/// segmentation's foreground.
pub fn discrepancy_report(
    ground_vol: &LabelVolume,
    pred_vol: &LabelVolume,
    label_id: Label,
    overlap_pct: f64,
) -> Result<Discrepancies> {
    discrepancy_report_with(ground_vol, pred_vol, label_id, overlap_pct, &DetectionParams::default())
}

pub fn discrepancy_report_with(
    ground_vol: &LabelVolume,
    pred_vol: &LabelVolume,
    label_id: Label,
    overlap_pct: f64,
    params: &DetectionParams,
) -> Result<Discrepancies> {
    ground_vol.grid().ensure_same_dims(pred_vol.grid())?;
    if !(0.0..=100.0).contains(&overlap_pct) {
        return Err(Error::InvalidParameter(format!("overlap_pct = {overlap_pct}")));
    }
    let ground = extract_lesions_with(ground_vol, &[label_id], params.min_volume_mm3, params.connectivity);
    let pred = extract_lesions_with(pred_vol, &[label_id], params.min_volume_mm3, params.connectivity);
    let (g, p) = (ground_vol.labels(), pred_vol.labels());
    Ok(discrepancies_from_sets(
        &ground,
        &pred,
        |i| g[i] == label_id,
        |i| p[i] == label_id,
        overlap_pct,
    ))
}

/// [`discrepancy_report`] over already-extracted lesions; `ground_fg` and
/// `pred_fg` test raw foreground membership of a voxel.
pub fn discrepancies_from_sets(
    ground: &LesionSet,
    pred: &LesionSet,
    ground_fg: impl Fn(usize) -> bool,
    pred_fg: impl Fn(usize) -> bool,
    overlap_pct: f64,
) -> Discrepancies {
    let unmatched = |set: &LesionSet, other: &dyn Fn(usize) -> bool| -> Vec<Lesion> {
        set.iter()
            .filter(|l| {
                let hit = l.voxels.iter().filter(|&&v| other(v)).count();
                hit as f64 * 100.0 <= overlap_pct * l.voxels.len() as f64
            })
            .cloned()
            .collect()
    };
    Discrepancies {
        fp_lesions: unmatched(pred, &ground_fg),
        fn_lesions: unmatched(ground, &pred_fg),
    }
}
