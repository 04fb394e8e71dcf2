//! Test-time ensembling of classifier logits and majority-vote fusion of
//! rater segmentations.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Label, LabelMap, LabelVolume, ScalarVolume, Volume};

/// Per-class scores, one channel per class with channel 0 the background.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitStack(ScalarVolume);

impl LogitStack {
    pub fn new(volume: ScalarVolume) -> Result<Self> {
        if volume.channels() < 2 {
            return Err(Error::InvalidParameter(format!(
                "logit stack needs at least 2 channels, got {}",
                volume.channels()
            )));
        }
        Ok(LogitStack(volume))
    }

    pub fn channels(&self) -> usize {
        self.0.channels()
    }

    pub fn volume(&self) -> &ScalarVolume {
        &self.0
    }

    pub fn into_volume(self) -> ScalarVolume {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    /// Arithmetic mean of the raw logits.
    #[default]
    Logits,
    /// Mean of per-stack softmax probabilities, returned as log-probabilities.
    Probabilities,
}

/// Channel-wise mean of the raw logits of every stack.
pub fn ensemble_logits(stacks: &[LogitStack]) -> Result<LogitStack> {
    ensemble_with(stacks, EnsembleMode::Logits)
}

pub fn ensemble_with(stacks: &[LogitStack], mode: EnsembleMode) -> Result<LogitStack> {
    let first = stacks.first().ok_or(Error::EmptyInput("logit stacks"))?;
    for s in &stacks[1..] {
        first.0.grid().ensure_same_dims(s.0.grid())?;
        if s.channels() != first.channels() {
            return Err(Error::ChannelMismatch(first.channels(), s.channels()));
        }
    }
    let k = stacks.len() as f64;
    let mut acc = vec![0.0; first.0.values().len()];
    match mode {
        EnsembleMode::Logits => {
            for s in stacks {
                acc.iter_mut().zip(s.0.values()).for_each(|(a, v)| *a += v);
            }
            acc.iter_mut().for_each(|a| *a /= k);
        }
        EnsembleMode::Probabilities => {
            let n = first.0.grid().n_voxels();
            let c = first.channels();
            for s in stacks {
                let v = s.0.values();
                for i in 0..n {
                    let max = (0..c).map(|ch| v[ch * n + i]).fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = (0..c).map(|ch| (v[ch * n + i] - max).exp()).sum();
                    for ch in 0..c {
                        acc[ch * n + i] += (v[ch * n + i] - max).exp() / z;
                    }
                }
            }
            // probabilities are positive, so the log is finite
            acc.iter_mut().for_each(|a| *a = (*a / k).ln());
        }
    }
    Ok(LogitStack(ScalarVolume::from_volume(Volume::from_parts_unchecked(
        first.0.grid().clone(),
        first.channels(),
        acc,
    ))))
}

/// Channel index → label id.
///
/// JSON form: `{"0": 0, "1": 1, "2": 10}`, keys covering every channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<usize, Label>", into = "BTreeMap<usize, Label>")]
pub struct ClassMap(Vec<Label>);

impl ClassMap {
    pub fn new(labels: Vec<Label>) -> Self {
        ClassMap(labels)
    }

    /// Channel `c` → label `c`.
    pub fn identity(channels: usize) -> Self {
        ClassMap((0..channels as Label).collect())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn label(&self, channel: usize) -> Label {
        self.0[channel]
    }
}

impl TryFrom<BTreeMap<usize, Label>> for ClassMap {
    type Error = String;

    fn try_from(map: BTreeMap<usize, Label>) -> std::result::Result<Self, String> {
        if map.keys().copied().ne(0..map.len()) {
            return Err("class map keys must be the channels 0..C-1".into());
        }
        Ok(ClassMap(map.into_values().collect()))
    }
}

impl From<ClassMap> for BTreeMap<usize, Label> {
    fn from(map: ClassMap) -> Self {
        map.0.into_iter().enumerate().collect()
    }
}

/// Label of the maximal channel per voxel; ties go to the lower channel.
pub fn argmax_labels(stack: &LogitStack, class_map: &ClassMap) -> Result<LabelVolume> {
    let c = stack.channels();
    if class_map.len() != c {
        return Err(Error::ChannelMismatch(c, class_map.len()));
    }
    let n = stack.0.grid().n_voxels();
    let v = stack.0.values();
    let mut best = vec![0usize; n];
    let mut best_val = v[..n].to_vec();
    for ch in 1..c {
        let chan = &v[ch * n..(ch + 1) * n];
        for i in 0..n {
            if chan[i] > best_val[i] {
                best_val[i] = chan[i];
                best[i] = ch;
            }
        }
    }
    let labels = best.into_iter().map(|ch| class_map.label(ch)).collect();
    LabelVolume::from_labels(stack.0.grid().clone(), labels)
}

/// Most frequent label per voxel across raters. Any tie for the top count
/// resolves to background.
pub fn majority_vote(raters: &[LabelVolume]) -> Result<LabelVolume> {
    if raters.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "majority vote needs at least 2 raters, got {}",
            raters.len()
        )));
    }
    let first = &raters[0];
    let mut names = LabelMap::new();
    for r in raters {
        first.grid().ensure_same_dims(r.grid())?;
        for (id, name) in r.label_map().iter() {
            match names.name(id) {
                Some(existing) if existing != name => return Err(Error::LabelMapMismatch),
                Some(_) => {}
                None => names.insert(id, name),
            }
        }
    }
    let n = first.grid().n_voxels();
    let mut votes: Vec<Label> = Vec::with_capacity(raters.len());
    let labels = (0..n)
        .map(|i| {
            votes.clear();
            votes.extend(raters.iter().map(|r| r.labels()[i]));
            votes.sort_unstable();
            let mut winner = votes[0];
            let mut best = 0;
            let mut tied = false;
            let mut run_start = 0;
            for j in 1..=votes.len() {
                if j == votes.len() || votes[j] != votes[run_start] {
                    let run = j - run_start;
                    if run > best {
                        best = run;
                        winner = votes[run_start];
                        tied = false;
                    } else if run == best {
                        tied = true;
                    }
                    run_start = j;
                }
            }
            if tied {
                0
            } else {
                winner
            }
        })
        .collect();
    Ok(LabelVolume::from_volume(
        Volume::from_parts_unchecked(first.grid().clone(), 1, labels),
        names,
    ))
}
