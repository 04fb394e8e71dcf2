//! Run manifests: the cases of a cohort and how to score them.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lesionbench_core::{DetectionParams, Label, ScoreOptions};
use serde::{Deserialize, Serialize};

/// One subject of the cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseEntry {
    pub case_id: String,
    /// Reference segmentation.
    pub gt_path: PathBuf,
    /// Method name → predicted segmentation.
    #[serde(default)]
    pub pred_paths: BTreeMap<String, PathBuf>,
    /// Shorthand for a single prediction scored as method `default`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_path: Option<PathBuf>,
    /// Voxels outside the mask are cleared in both segmentations before scoring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
    /// Multi-channel logit volumes, averaged and scored as method `ensemble`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub logit_paths: Vec<PathBuf>,
    /// Rater name → that rater's segmentation, for the per-rater table.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub rater_paths: BTreeMap<String, PathBuf>,
}

impl CaseEntry {
    /// All predictions by method name, `pred_path` included.
    pub fn predictions(&self) -> BTreeMap<String, PathBuf> {
        let mut out = self.pred_paths.clone();
        if let Some(p) = &self.pred_path {
            out.entry("default".to_string()).or_insert_with(|| p.clone());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub cases: Vec<CaseEntry>,
    #[serde(default)]
    pub params: DetectionParams,
    #[serde(default = "default_lesion_label")]
    pub lesion_label: Label,
    /// Extra structures for the Dice table.
    #[serde(default)]
    pub dice_labels: Vec<Label>,
    #[serde(default = "default_audit")]
    pub audit_overlap_pct: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_map: Option<PathBuf>,
    /// JSON class map for `logit_paths`; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_map: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_lesion_label() -> Label {
    1
}

fn default_audit() -> f64 {
    lesionbench_core::report::DEFAULT_AUDIT_OVERLAP_PCT
}

fn default_output() -> PathBuf {
    PathBuf::from("lesionbench-out")
}

impl RunManifest {
    /// Reads a manifest and resolves relative paths against its directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let mut m: RunManifest =
            serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        m.resolve_relative_to(base);
        m.validate()?;
        Ok(m)
    }

    pub fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(p) = self.label_map.as_mut() {
            fix(p);
        }
        if let Some(p) = self.class_map.as_mut() {
            fix(p);
        }
        for c in &mut self.cases {
            fix(&mut c.gt_path);
            c.pred_paths.values_mut().for_each(fix);
            if let Some(p) = c.pred_path.as_mut() {
                fix(p);
            }
            if let Some(p) = c.mask_path.as_mut() {
                fix(p);
            }
            c.logit_paths.iter_mut().for_each(fix);
            c.rater_paths.values_mut().for_each(fix);
        }
    }

    /// Structural checks. Missing files are reported per case at run time.
    pub fn validate(&self) -> Result<()> {
        if self.cases.is_empty() {
            bail!("manifest lists no cases");
        }
        let mut seen = HashSet::new();
        for c in &self.cases {
            if !seen.insert(c.case_id.as_str()) {
                bail!("duplicate case_id {:?}", c.case_id);
            }
            if c.predictions().is_empty() && c.logit_paths.is_empty() && c.rater_paths.is_empty() {
                bail!("case {:?} has nothing to score", c.case_id);
            }
        }
        self.params.validate()?;
        Ok(())
    }

    pub fn score_options(&self) -> ScoreOptions {
        ScoreOptions {
            lesion_label: self.lesion_label,
            dice_labels: self.dice_labels.clone(),
            params: self.params,
            audit_overlap_pct: self.audit_overlap_pct,
        }
    }
}
