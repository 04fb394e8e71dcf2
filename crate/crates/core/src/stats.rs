//! Paired significance testing and cohort aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::overlap::dice;
use crate::report::CaseReport;
use crate::volume::{Label, LabelVolume};

/// Per-case values of one metric for two methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    pub case_ids: Vec<String>,
    pub values_a: Vec<f64>,
    pub values_b: Vec<f64>,
}

impl PairedSample {
    pub fn new(case_ids: Vec<String>, values_a: Vec<f64>, values_b: Vec<f64>) -> Result<Self> {
        let s = PairedSample {
            case_ids,
            values_a,
            values_b,
        };
        s.validate()?;
        Ok(s)
    }

    /// Unnamed cases, numbered from 0.
    pub fn from_values(values_a: Vec<f64>, values_b: Vec<f64>) -> Result<Self> {
        let ids = (0..values_a.len()).map(|i| i.to_string()).collect();
        Self::new(ids, values_a, values_b)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.values_a.len();
        if n == 0 {
            return Err(Error::EmptyInput("paired sample"));
        }
        if self.values_b.len() != n || self.case_ids.len() != n {
            return Err(Error::InvalidParameter(format!(
                "paired sample lengths differ: {} ids, {} a, {} b",
                self.case_ids.len(),
                n,
                self.values_b.len()
            )));
        }
        if let Some(i) = self
            .values_a
            .iter()
            .chain(&self.values_b)
            .position(|v| !v.is_finite())
        {
            return Err(Error::NonFinite(i % n));
        }
        Ok(())
    }

    pub fn swapped(&self) -> Self {
        PairedSample {
            case_ids: self.case_ids.clone(),
            values_a: self.values_b.clone(),
            values_b: self.values_a.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// min(W+, W−).
    pub w_statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Pairs with a nonzero difference.
    pub n_effective: usize,
    pub p_two_sided: f64,
    pub method: TestMethod,
    /// Every difference was zero; `p_two_sided` is 1 by convention.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WilcoxonConfig {
    /// Largest effective sample size that uses the exact null distribution.
    pub exact_max_n: usize,
}

impl Default for WilcoxonConfig {
    fn default() -> Self {
        WilcoxonConfig { exact_max_n: 25 }
    }
}

/// Two-sided Wilcoxon signed-rank test of `values_a − values_b`.
pub fn wilcoxon_signed_rank(sample: &PairedSample) -> Result<WilcoxonResult> {
    wilcoxon_with(sample, &WilcoxonConfig::default())
}

pub fn wilcoxon_with(sample: &PairedSample, config: &WilcoxonConfig) -> Result<WilcoxonResult> {
    sample.validate()?;
    let diffs: Vec<f64> = sample
        .values_a
        .iter()
        .zip(&sample.values_b)
        .map(|(a, b)| a - b)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            w_statistic: 0.0,
            w_plus: 0.0,
            w_minus: 0.0,
            n_effective: 0,
            p_two_sided: 1.0,
            method: TestMethod::Exact,
            degenerate: true,
        });
    }

    let (ranks, tie_sizes) = midranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let w = w_plus.min(w_minus);
    let has_ties = tie_sizes.iter().any(|&t| t > 1);

    let (p, method) = if n <= config.exact_max_n && !has_ties {
        (exact_p(n, w), TestMethod::Exact)
    } else {
        (normal_p(n, w, &tie_sizes), TestMethod::NormalApprox)
    };
    Ok(WilcoxonResult {
        w_statistic: w,
        w_plus,
        w_minus,
        n_effective: n,
        p_two_sided: p,
        method,
        degenerate: false,
    })
}

/// Ranks of `values` (1-based, ties get the mean rank) and the size of each tie group.
fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut groups = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        groups.push(j - i);
        i = j;
    }
    (ranks, groups)
}

/// Two-sided exact p for integer ranks 1..n: `2·P(T ≤ w)` under the null,
/// counted by dynamic programming over subset sums.
fn exact_p(n: usize, w: f64) -> f64 {
    let max_sum = n * (n + 1) / 2;
    let mut counts = vec![0.0f64; max_sum + 1];
    counts[0] = 1.0;
    for r in 1..=n {
        for s in (r..=max_sum).rev() {
            counts[s] += counts[s - r];
        }
    }
    let w = w.floor() as usize;
    let tail: f64 = counts[..=w.min(max_sum)].iter().sum();
    (2.0 * tail / 2f64.powi(n as i32)).min(1.0)
}

/// Normal approximation with tie-corrected variance and continuity correction.
fn normal_p(n: usize, w: f64, tie_sizes: &[usize]) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = tie_sizes
        .iter()
        .map(|&t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum::<f64>()
        / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
    libm::erfc(z / std::f64::consts::SQRT_2).clamp(f64::MIN_POSITIVE, 1.0)
}

/// Symmetric matrix of Dice (percent) between every pair of raters.
pub fn pairwise_dice_matrix(raters: &[LabelVolume], label_id: Label) -> Result<Vec<Vec<f64>>> {
    if raters.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 raters, got {}",
            raters.len()
        )));
    }
    for r in &raters[1..] {
        raters[0].grid().ensure_same_dims(r.grid())?;
    }
    let k = raters.len();
    let mut m = vec![vec![100.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let d = dice(&raters[i], &raters[j], label_id)?.percent;
            m[i][j] = d;
            m[j][i] = d;
        }
    }
    Ok(m)
}

/// Mean, median and population standard deviation of the defined values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub count: usize,
    /// Undefined (flagged) entries left out of the statistics.
    pub excluded: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub stddev: Option<f64>,
}

impl MetricSummary {
    pub fn from_values(values: &[Option<f64>]) -> Self {
        let mut defined: Vec<f64> = values.iter().flatten().copied().collect();
        let excluded = values.len() - defined.len();
        if defined.is_empty() {
            return MetricSummary {
                count: 0,
                excluded,
                mean: None,
                median: None,
                stddev: None,
            };
        }
        let n = defined.len() as f64;
        let mean = defined.iter().sum::<f64>() / n;
        let var = defined.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        defined.sort_by(f64::total_cmp);
        let mid = defined.len() / 2;
        let median = if defined.len() % 2 == 1 {
            defined[mid]
        } else {
            (defined[mid - 1] + defined[mid]) / 2.0
        };
        MetricSummary {
            count: defined.len(),
            excluded,
            mean: Some(mean),
            median: Some(median),
            stddev: Some(var.sqrt()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub n_cases: usize,
    pub metrics: BTreeMap<String, MetricSummary>,
}

impl CohortSummary {
    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.metrics.get(metric).and_then(|m| m.mean)
    }
}

/// Per-metric summary over case reports. Metrics are keyed as in
/// [`CaseReport::metric_values`].
pub fn aggregate_reports(reports: &[CaseReport]) -> Result<CohortSummary> {
    if reports.is_empty() {
        return Err(Error::EmptyInput("case reports"));
    }
    let mut columns: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
    for (i, r) in reports.iter().enumerate() {
        for (name, value) in r.metric_values() {
            let col = columns.entry(name).or_insert_with(|| vec![None; i]);
            col.resize(i, None);
            col.push(value);
        }
    }
    let metrics = columns
        .into_iter()
        .map(|(k, mut v)| {
            v.resize(reports.len(), None);
            (k, MetricSummary::from_values(&v))
        })
        .collect();
    Ok(CohortSummary {
        n_cases: reports.len(),
        metrics,
    })
}
