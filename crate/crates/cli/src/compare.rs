//! Paired comparison of two methods from their per-case score tables.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use lesionbench_core::{wilcoxon_signed_rank, PairedSample, TestMethod};
use serde::Serialize;

/// Reads `case_id → metric` from a CSV with a header row, optionally keeping
/// only rows whose `method` column equals `method`. Empty cells are skipped.
pub fn read_metric_column(path: &Path, metric: &str, method: Option<&str>) -> Result<BTreeMap<String, f64>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let Some(case_col) = col("case_id") else {
        bail!("{}: no case_id column", path.display());
    };
    let Some(metric_col) = col(metric) else {
        bail!("{}: no {metric:?} column", path.display());
    };
    let method_col = col("method");
    if method.is_some() && method_col.is_none() {
        bail!("{}: no method column to filter on", path.display());
    }
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        if let (Some(want), Some(c)) = (method, method_col) {
            if &rec[c] != want {
                continue;
            }
        }
        let cell = rec[metric_col].trim();
        if cell.is_empty() {
            continue;
        }
        let v: f64 = cell
            .parse()
            .with_context(|| format!("{}: bad {metric} value {cell:?}", path.display()))?;
        if out.insert(rec[case_col].to_string(), v).is_some() {
            bail!("{}: case {:?} appears twice; filter by method", path.display(), &rec[case_col]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub metric: String,
    pub w: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    pub n: usize,
    pub n_effective: usize,
    pub p: f64,
    pub method: TestMethod,
    pub mean_a: f64,
    pub mean_b: f64,
}

/// Wilcoxon signed-rank test over the cases present in both tables.
pub fn compare_tables(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>, metric: &str) -> Result<Comparison> {
    let shared: Vec<&String> = a.keys().filter(|k| b.contains_key(*k)).collect();
    let dropped = a.len() + b.len() - 2 * shared.len();
    if dropped > 0 {
        log::warn!("{dropped} cases present in only one table were left out");
    }
    if shared.is_empty() {
        bail!("the tables share no case ids");
    }
    let sample = PairedSample::new(
        shared.iter().map(|k| k.to_string()).collect(),
        shared.iter().map(|k| a[*k]).collect(),
        shared.iter().map(|k| b[*k]).collect(),
    )?;
    let r = wilcoxon_signed_rank(&sample)?;
    let n = shared.len();
    Ok(Comparison {
        metric: metric.to_string(),
        w: r.w_statistic,
        w_plus: r.w_plus,
        w_minus: r.w_minus,
        n,
        n_effective: r.n_effective,
        p: r.p_two_sided,
        method: r.method,
        mean_a: sample.values_a.iter().sum::<f64>() / n as f64,
        mean_b: sample.values_b.iter().sum::<f64>() / n as f64,
    })
}
