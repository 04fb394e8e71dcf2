//! Cohort evaluation: score every case of a manifest and write the reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lesionbench_core::report::rater_method_means;
use lesionbench_core::stats::MetricSummary;
use lesionbench_core::{
    aggregate_reports, dice, read_label_volume, read_mask, score_case, BrainMask, CaseReport, ClassMap,
    EnsembleMode, Label, LabelMap, LabelVolume, SCHEMA_VERSION,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::manifest::{CaseEntry, RunManifest};
use crate::views::{ensemble_views, load_class_map, ViewSpec};

/// Method name given to predictions built from `logit_paths`.
pub const ENSEMBLE_METHOD: &str = "ensemble";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseError {
    pub case_id: String,
    pub message: String,
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub n_cases: usize,
    pub reports: Vec<CaseReport>,
    pub errors: Vec<CaseError>,
}

impl RunOutcome {
    /// 0 on full success, 2 when some cases failed, 1 when all did.
    pub fn exit_code(&self) -> i32 {
        match self.errors.len() {
            0 => 0,
            n if n == self.n_cases => 1,
            _ => 2,
        }
    }
}

struct CaseResult {
    reports: Vec<CaseReport>,
    rater_dice: Vec<(String, String, f64)>,
}

struct Shared {
    label_map: Option<LabelMap>,
    class_map: Option<ClassMap>,
}

fn load_labels(path: &Path, shared: &Shared) -> Result<LabelVolume> {
    read_label_volume(path, shared.label_map.as_ref()).with_context(|| format!("reading {}", path.display()))
}

fn clear_outside(volume: &LabelVolume, mask: &BrainMask) -> Result<LabelVolume> {
    volume.grid().ensure_same_dims(mask.grid())?;
    let labels = volume
        .labels()
        .iter()
        .zip(mask.inside())
        .map(|(&l, &m)| if m { l } else { 0 })
        .collect();
    Ok(volume.with_labels(labels)?)
}

fn score_entry(case: &CaseEntry, manifest: &RunManifest, shared: &Shared) -> Result<CaseResult> {
    let mask = case
        .mask_path
        .as_ref()
        .map(|p| read_mask(p).with_context(|| format!("reading mask {}", p.display())))
        .transpose()?;
    let restrict = |v: LabelVolume| match &mask {
        Some(m) => clear_outside(&v, m),
        None => Ok(v),
    };
    let ground = restrict(load_labels(&case.gt_path, shared)?)?;

    let mut preds: Vec<(String, LabelVolume)> = Vec::new();
    for (method, path) in case.predictions() {
        preds.push((method, restrict(load_labels(&path, shared)?)?));
    }
    if !case.logit_paths.is_empty() {
        let views: Vec<ViewSpec> = case.logit_paths.iter().map(ViewSpec::plain).collect();
        let (_, labels) = ensemble_views(&views, shared.class_map.as_ref(), EnsembleMode::Logits)?;
        preds.push((ENSEMBLE_METHOD.to_string(), restrict(labels)?));
    }

    let options = manifest.score_options();
    let mut reports = Vec::with_capacity(preds.len());
    for (method, pred) in &preds {
        reports.push(score_case(&case.case_id, method, &ground, pred, &options)?);
    }

    let mut rater_dice = Vec::new();
    for (rater, path) in &case.rater_paths {
        let r = restrict(load_labels(path, shared)?)?;
        for (method, pred) in &preds {
            let d = dice(&r, pred, manifest.lesion_label)?;
            rater_dice.push((rater.clone(), method.clone(), d.percent));
        }
    }
    Ok(CaseResult { reports, rater_dice })
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

/// One row of the cohort table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortRow {
    pub method: String,
    pub n_cases: usize,
    pub mean_dice: Option<f64>,
    pub median_dice: Option<f64>,
    pub std_dice: Option<f64>,
    pub mean_sensitivity: Option<f64>,
    pub mean_precision: Option<f64>,
    pub mean_f1: Option<f64>,
    pub median_f1: Option<f64>,
    pub dice_excluded: usize,
    pub f1_excluded: usize,
}

#[derive(Debug, Serialize)]
struct MethodDiceRow<'a> {
    case_id: &'a str,
    method: &'a str,
    label_id: Label,
    label_name: &'a str,
    dice: f64,
    n_gt: u64,
    n_pred: u64,
    n_intersect: u64,
    flags: &'a str,
}

#[derive(Debug, Serialize)]
struct RunIndex<'a> {
    schema_version: u32,
    tool: &'static str,
    version: &'static str,
    n_cases: usize,
    n_failed: usize,
    methods: Vec<&'a str>,
    params: lesionbench_core::DetectionParams,
    lesion_label: Label,
    files: Vec<String>,
}

/// Cohort rows per method, in method order.
pub fn cohort_rows(reports: &[CaseReport]) -> Result<Vec<CohortRow>> {
    let mut by_method: BTreeMap<&str, Vec<CaseReport>> = BTreeMap::new();
    for r in reports {
        by_method.entry(r.method.as_str()).or_default().push(r.clone());
    }
    let mut rows = Vec::new();
    for (method, rs) in by_method {
        let cohort = aggregate_reports(&rs)?;
        let get = |k: &str| cohort.metrics.get(k).copied().unwrap_or(MetricSummary::from_values(&[]));
        let (d, f1) = (get("dice"), get("f1"));
        rows.push(CohortRow {
            method: method.to_string(),
            n_cases: cohort.n_cases,
            mean_dice: d.mean,
            median_dice: d.median,
            std_dice: d.stddev,
            mean_sensitivity: get("sensitivity").mean,
            mean_precision: get("precision").mean,
            mean_f1: f1.mean,
            median_f1: f1.median,
            dice_excluded: d.excluded,
            f1_excluded: f1.excluded,
        });
    }
    Ok(rows)
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Rater × method Dice table with a trailing `Mean` row.
fn write_rater_table(path: &Path, entries: &[(String, String, f64)]) -> Result<()> {
    let (raters, methods, means) = rater_method_means(entries);
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec!["rater".to_string()];
    header.extend(methods.iter().cloned());
    w.write_record(&header)?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for rater in &raters {
        let mut rec = vec![rater.clone()];
        rec.extend(methods.iter().map(|m| cell(means.get(&(rater.clone(), m.clone())).copied())));
        w.write_record(&rec)?;
    }
    let mut rec = vec!["Mean".to_string()];
    for m in &methods {
        let col: Vec<f64> = raters.iter().filter_map(|r| means.get(&(r.clone(), m.clone())).copied()).collect();
        rec.push(cell((!col.is_empty()).then(|| col.iter().sum::<f64>() / col.len() as f64)));
    }
    w.write_record(&rec)?;
    w.flush()?;
    Ok(())
}

/// Scores every case with up to `jobs` cases in flight, then writes
///
/// - `cases/<case>__<method>.json`: one report per prediction
/// - `cases.csv`, `dice.csv`: per-case lesion scores and Dice tables
/// - `cohort.csv`: per-method means
/// - `raters.csv`: rater × method mean Dice, when raters are listed
/// - `errors.log`: one line per failed case
/// - `index.json`: schema version and the list of files
///
/// A failing case is logged and skipped; the outcome carries the errors.
pub fn run_evaluation(manifest: &RunManifest, jobs: usize) -> Result<RunOutcome> {
    manifest.validate()?;
    let shared = Shared {
        label_map: manifest
            .label_map
            .as_ref()
            .map(|p| LabelMap::from_json_file(p).with_context(|| format!("reading label map {}", p.display())))
            .transpose()?,
        class_map: load_class_map(manifest.class_map.as_deref())?,
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    let results: Vec<Result<CaseResult>> = pool.install(|| {
        manifest
            .cases
            .par_iter()
            .map(|c| score_entry(c, manifest, &shared))
            .collect()
    });

    let out = &manifest.output_dir;
    let case_dir = out.join("cases");
    fs::create_dir_all(&case_dir).with_context(|| format!("creating {}", case_dir.display()))?;

    let mut reports = Vec::new();
    let mut rater_dice = Vec::new();
    let mut errors = Vec::new();
    for (case, res) in manifest.cases.iter().zip(results) {
        match res {
            Ok(r) => {
                reports.extend(r.reports);
                rater_dice.extend(r.rater_dice);
            }
            Err(e) => {
                log::error!("case {}: {e:#}", case.case_id);
                errors.push(CaseError {
                    case_id: case.case_id.clone(),
                    message: format!("{e:#}"),
                });
            }
        }
    }

    let mut files = Vec::new();
    for r in &reports {
        let name = format!("cases/{}__{}.json", file_safe(&r.case_id), file_safe(&r.method));
        fs::write(out.join(&name), serde_json::to_string_pretty(r)? + "\n")?;
        files.push(name);
    }
    write_csv(&out.join("cases.csv"), reports.iter().map(CaseReport::score_row))?;
    let dice_rows: Vec<_> = reports.iter().map(|r| (r, r.dice_rows())).collect();
    write_csv(
        &out.join("dice.csv"),
        dice_rows.iter().flat_map(|(r, rows)| {
            rows.iter().map(move |d| MethodDiceRow {
                case_id: &d.case_id,
                method: &r.method,
                label_id: d.label_id,
                label_name: &d.label_name,
                dice: d.dice,
                n_gt: d.n_gt,
                n_pred: d.n_pred,
                n_intersect: d.n_intersect,
                flags: &d.flags,
            })
        }),
    )?;
    files.extend(["cases.csv".to_string(), "dice.csv".to_string()]);
    if !reports.is_empty() {
        write_csv(&out.join("cohort.csv"), cohort_rows(&reports)?)?;
        files.push("cohort.csv".into());
    }
    if !rater_dice.is_empty() {
        write_rater_table(&out.join("raters.csv"), &rater_dice)?;
        files.push("raters.csv".into());
    }
    let log: String = errors.iter().map(|e| format!("{}\t{}\n", e.case_id, e.message)).collect();
    fs::write(out.join("errors.log"), log)?;
    files.push("errors.log".into());

    let mut methods: Vec<&str> = reports.iter().map(|r| r.method.as_str()).collect();
    methods.sort_unstable();
    methods.dedup();
    let index = RunIndex {
        schema_version: SCHEMA_VERSION,
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        n_cases: manifest.cases.len(),
        n_failed: errors.len(),
        methods,
        params: manifest.params,
        lesion_label: manifest.lesion_label,
        files,
    };
    fs::write(out.join("index.json"), serde_json::to_string_pretty(&index)? + "\n")?;

    Ok(RunOutcome {
        output_dir: out.clone(),
        n_cases: manifest.cases.len(),
        reports,
        errors,
    })
}
