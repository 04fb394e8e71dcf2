//! Per-case evaluation reports and their tabular forms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::detection::{
    discrepancies_from_sets, lesion_f1_sets, DetectionParams, FilterStage, LesionF1Report,
};
use crate::error::Result;
use crate::lesion::{extract_lesions_with, LesionSummary};
use crate::overlap::{dice_table, DiceScore, OverlapCounts};
use crate::volume::{Label, LabelVolume};

/// Version stamped into every JSON report and CSV index.
pub const SCHEMA_VERSION: u32 = 1;

/// Default overlap threshold (percent) for the FP/FN audit lists.
pub const DEFAULT_AUDIT_OVERLAP_PCT: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionScores {
    pub sensitivity: f64,
    pub precision: f64,
    pub f1: f64,
    pub n_gt: usize,
    pub n_pred: usize,
    pub detected_gt: usize,
    pub vacuous: bool,
}

impl From<&LesionF1Report> for LesionScores {
    fn from(r: &LesionF1Report) -> Self {
        LesionScores {
            sensitivity: r.sensitivity,
            precision: r.precision,
            f1: r.f1,
            n_gt: r.n_ground,
            n_pred: r.n_pred,
            detected_gt: r.detected_ground(),
            vacuous: r.vacuous,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceEntry {
    pub label_id: Label,
    pub label_name: String,
    pub dice: DiceScore,
    pub counts: OverlapCounts,
}

/// Everything computed for one (case, method) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub schema_version: u32,
    pub case_id: String,
    pub method: String,
    pub label_id: Label,
    /// Dice of `label_id`.
    pub dice: DiceScore,
    /// Dice of every requested structure, `label_id` included.
    pub dice_table: Vec<DiceEntry>,
    pub lesion: LesionScores,
    pub fp_lesions: Vec<LesionSummary>,
    pub fn_lesions: Vec<LesionSummary>,
    pub params: DetectionParams,
    pub audit_overlap_pct: f64,
}

impl CaseReport {
    /// Named metric values; `None` marks an undefined (flagged) entry.
    ///
    /// Keys: `dice`, `sensitivity`, `precision`, `f1`, and `dice:<label_id>`
    /// for each table entry.
    pub fn metric_values(&self) -> Vec<(String, Option<f64>)> {
        let defined = |v: f64, flagged: bool| (!flagged).then_some(v);
        let mut out = vec![
            ("dice".to_string(), defined(self.dice.percent, self.dice.absent)),
            ("sensitivity".to_string(), defined(self.lesion.sensitivity, self.lesion.vacuous)),
            ("precision".to_string(), defined(self.lesion.precision, self.lesion.vacuous)),
            ("f1".to_string(), defined(self.lesion.f1, self.lesion.vacuous)),
        ];
        for e in &self.dice_table {
            out.push((format!("dice:{}", e.label_id), defined(e.dice.percent, e.dice.absent)));
        }
        out
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metric_values()
            .into_iter()
            .find(|(k, _)| k == name)
            .and_then(|(_, v)| v)
    }

    pub fn score_row(&self) -> ScoreRow {
        ScoreRow {
            case_id: self.case_id.clone(),
            method: self.method.clone(),
            dice: self.dice.percent,
            sensitivity: self.lesion.sensitivity,
            precision: self.lesion.precision,
            f1: self.lesion.f1,
            n_gt: self.lesion.n_gt,
            n_pred: self.lesion.n_pred,
            fp_count: self.fp_lesions.len(),
            fn_count: self.fn_lesions.len(),
            flags: self.flags(),
        }
    }

    pub fn dice_rows(&self) -> Vec<DiceRow> {
        self.dice_table
            .iter()
            .map(|e| DiceRow {
                case_id: self.case_id.clone(),
                label_id: e.label_id,
                label_name: e.label_name.clone(),
                dice: e.dice.percent,
                n_gt: e.counts.n_ground,
                n_pred: e.counts.n_pred,
                n_intersect: e.counts.n_intersect,
                flags: if e.dice.absent { "absent".into() } else { String::new() },
            })
            .collect()
    }

    fn flags(&self) -> String {
        let mut f = Vec::new();
        if self.dice.absent {
            f.push("dice_absent");
        }
        if self.lesion.vacuous {
            f.push("lesion_vacuous");
        }
        f.join(";")
    }
}

/// One CSV row of the lesion score table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub case_id: String,
    pub method: String,
    pub dice: f64,
    pub sensitivity: f64,
    pub precision: f64,
    pub f1: f64,
    pub n_gt: usize,
    pub n_pred: usize,
    pub fp_count: usize,
    pub fn_count: usize,
    pub flags: String,
}

/// One CSV row of the per-structure Dice table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceRow {
    pub case_id: String,
    pub label_id: Label,
    pub label_name: String,
    pub dice: f64,
    pub n_gt: u64,
    pub n_pred: u64,
    pub n_intersect: u64,
    pub flags: String,
}

/// What to compute for a case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreOptions {
    /// Label whose components are the lesions.
    pub lesion_label: Label,
    /// Structures for the Dice table; the lesion label is always added.
    pub dice_labels: Vec<Label>,
    pub params: DetectionParams,
    pub audit_overlap_pct: f64,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            lesion_label: 1,
            dice_labels: Vec::new(),
            params: DetectionParams::default(),
            audit_overlap_pct: DEFAULT_AUDIT_OVERLAP_PCT,
        }
    }
}

/// Scores one prediction against its ground truth.
pub fn score_case(
    case_id: &str,
    method: &str,
    ground: &LabelVolume,
    pred: &LabelVolume,
    options: &ScoreOptions,
) -> Result<CaseReport> {
    let params = &options.params;
    params.validate()?;
    ground.grid().ensure_same_dims(pred.grid())?;
    let label = options.lesion_label;

    let mut labels = options.dice_labels.clone();
    labels.push(label);
    let table = dice_table(ground, pred, &labels)?;
    let name_of = |l: Label| {
        ground
            .label_map()
            .name(l)
            .or_else(|| pred.label_map().name(l))
            .map(str::to_string)
            .unwrap_or_else(|| format!("label_{l}"))
    };
    let dice_entries: Vec<DiceEntry> = table
        .per_label
        .iter()
        .map(|(&l, &d)| DiceEntry {
            label_id: l,
            label_name: name_of(l),
            dice: d,
            counts: table.voxel_counts[&l],
        })
        .collect();

    let extract = |v: &LabelVolume, min| extract_lesions_with(v, &[label], min, params.connectivity);
    let gt_set = extract(ground, params.min_volume_mm3);
    let pred_set = extract(pred, params.min_volume_mm3);
    let f1 = match params.filter_stage {
        FilterStage::BeforeMatching => lesion_f1_sets(&gt_set, &pred_set, &gt_set, &pred_set, params),
        FilterStage::AfterMatching => {
            let (ga, pa) = (extract(ground, 0.0), extract(pred, 0.0));
            lesion_f1_sets(&gt_set, &pred_set, &ga, &pa, params)
        }
    };
    let disc = discrepancies_from_sets(
        &gt_set,
        &pred_set,
        |i| ground.labels()[i] == label,
        |i| pred.labels()[i] == label,
        options.audit_overlap_pct,
    );

    Ok(CaseReport {
        schema_version: SCHEMA_VERSION,
        case_id: case_id.to_string(),
        method: method.to_string(),
        label_id: label,
        dice: table.per_label[&label],
        dice_table: dice_entries,
        lesion: LesionScores::from(&f1),
        fp_lesions: disc.fp_lesions.iter().map(|l| l.summary()).collect(),
        fn_lesions: disc.fn_lesions.iter().map(|l| l.summary()).collect(),
        params: *params,
        audit_overlap_pct: options.audit_overlap_pct,
    })
}

/// Mean Dice of each method against each rater, the layout of a
/// rater × method comparison table. Rows are raters, columns methods.
pub fn rater_method_means(
    entries: &[(String, String, f64)],
) -> (Vec<String>, Vec<String>, BTreeMap<(String, String), f64>) {
    let mut raters: Vec<String> = Vec::new();
    let mut methods: Vec<String> = Vec::new();
    let mut sums: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
    for (rater, method, d) in entries {
        if !raters.contains(rater) {
            raters.push(rater.clone());
        }
        if !methods.contains(method) {
            methods.push(method.clone());
        }
        let e = sums.entry((rater.clone(), method.clone())).or_insert((0.0, 0));
        e.0 += d;
        e.1 += 1;
    }
    let means = sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect();
    (raters, methods, means)
}
