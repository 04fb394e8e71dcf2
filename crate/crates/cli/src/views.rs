//! Logit files produced under reoriented views of the input, and their
//! return to the reference orientation before averaging.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use lesionbench_core::volume::invert_order;
use lesionbench_core::{
    argmax_labels, ensemble_with, read_scalar_volume, ClassMap, EnsembleMode, LabelVolume, LogitStack, Reorient,
    ScalarVolume,
};

/// A logit file and the view it was computed in.
///
/// The view of an input `V` is `flip(permute(V, order))` when `mirrored`,
/// else `permute(V, order)`; the flip acts on the first axis of the permuted
/// volume.
///
/// Text form: `path[@xyz|@yzx|...][@flip]`, e.g. `view3.nii.gz@zxy@flip`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewSpec {
    pub path: PathBuf,
    pub order: [usize; 3],
    pub mirrored: bool,
}

impl ViewSpec {
    pub fn plain(path: impl Into<PathBuf>) -> Self {
        ViewSpec {
            path: path.into(),
            order: [0, 1, 2],
            mirrored: false,
        }
    }

    /// Maps a logit volume from this view back to the reference orientation.
    pub fn restore(&self, logits: ScalarVolume) -> Result<ScalarVolume> {
        let v = if self.mirrored { logits.flip_sagittal() } else { logits };
        Ok(v.permute_axes(invert_order(self.order))?)
    }

    pub fn load(&self) -> Result<LogitStack> {
        let raw = read_scalar_volume(&self.path).with_context(|| format!("reading logits {}", self.path.display()))?;
        Ok(LogitStack::new(self.restore(raw)?)?)
    }
}

fn parse_order(s: &str) -> Option<[usize; 3]> {
    let mut order = [0; 3];
    let mut seen = [false; 3];
    if s.len() != 3 {
        return None;
    }
    for (k, ch) in s.chars().enumerate() {
        let a = match ch {
            'x' => 0,
            'y' => 1,
            'z' => 2,
            _ => return None,
        };
        if seen[a] {
            return None;
        }
        seen[a] = true;
        order[k] = a;
    }
    Some(order)
}

impl FromStr for ViewSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split('@');
        let path = parts.next().filter(|p| !p.is_empty()).ok_or_else(|| anyhow!("empty view path"))?;
        let mut spec = ViewSpec::plain(path);
        for tag in parts {
            if tag == "flip" {
                spec.mirrored = true;
            } else if let Some(order) = parse_order(tag) {
                spec.order = order;
            } else {
                bail!("unknown view tag {tag:?} in {s:?}; expected an axis order like zxy or `flip`");
            }
        }
        Ok(spec)
    }
}

/// Averages the restored logits of every view and takes the argmax.
pub fn ensemble_views(
    views: &[ViewSpec],
    class_map: Option<&ClassMap>,
    mode: EnsembleMode,
) -> Result<(LogitStack, LabelVolume)> {
    if views.is_empty() {
        bail!("no logit files given");
    }
    let stacks = views.iter().map(ViewSpec::load).collect::<Result<Vec<_>>>()?;
    let mean = ensemble_with(&stacks, mode)?;
    let identity;
    let map = match class_map {
        Some(m) => m,
        None => {
            identity = ClassMap::identity(mean.channels());
            &identity
        }
    };
    let labels = argmax_labels(&mean, map)?;
    Ok((mean, labels))
}

pub fn load_class_map(path: Option<&Path>) -> Result<Option<ClassMap>> {
    path.map(|p| ClassMap::from_json_file(p).with_context(|| format!("reading class map {}", p.display())))
        .transpose()
}
