//! Voxel-level agreement between two label volumes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Label, LabelVolume};

/// Voxel counts behind one Dice value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapCounts {
    pub n_ground: u64,
    pub n_pred: u64,
    pub n_intersect: u64,
}

impl OverlapCounts {
    pub fn dice(&self) -> DiceScore {
        let denom = self.n_ground + self.n_pred;
        if denom == 0 {
            DiceScore {
                percent: 100.0,
                absent: true,
            }
        } else {
            DiceScore {
                percent: 200.0 * self.n_intersect as f64 / denom as f64,
                absent: false,
            }
        }
    }
}

/// Dice coefficient as a percentage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiceScore {
    pub percent: f64,
    /// The label is absent from both volumes; `percent` is 100 by convention.
    pub absent: bool,
}

impl DiceScore {
    pub fn fraction(&self) -> f64 {
        self.percent / 100.0
    }

    pub fn in_unit(&self, unit: DiceUnit) -> f64 {
        match unit {
            DiceUnit::Percent => self.percent,
            DiceUnit::Fraction => self.fraction(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiceUnit {
    #[default]
    Percent,
    Fraction,
}

/// Dice of `label_id` between two volumes, in percent.
pub fn dice(ground: &LabelVolume, pred: &LabelVolume, label_id: Label) -> Result<DiceScore> {
    ground.grid().ensure_same_dims(pred.grid())?;
    let mut c = OverlapCounts::default();
    for (&g, &p) in ground.labels().iter().zip(pred.labels()) {
        let (g, p) = (g == label_id, p == label_id);
        c.n_ground += g as u64;
        c.n_pred += p as u64;
        c.n_intersect += (g && p) as u64;
    }
    Ok(c.dice())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceTable {
    pub per_label: BTreeMap<Label, DiceScore>,
    pub voxel_counts: BTreeMap<Label, OverlapCounts>,
}

impl DiceTable {
    pub fn get(&self, label: Label) -> Option<DiceScore> {
        self.per_label.get(&label).copied()
    }
}

/// Dice for every label in `labels`, from a single pass over both grids.
pub fn dice_table(ground: &LabelVolume, pred: &LabelVolume, labels: &[Label]) -> Result<DiceTable> {
    ground.grid().ensure_same_dims(pred.grid())?;
    if labels.is_empty() {
        return Err(Error::EmptyInput("label list"));
    }
    // slot per label value; 0 = not requested
    let mut slot = vec![0u16; Label::MAX as usize + 1];
    let mut wanted: Vec<Label> = labels.to_vec();
    wanted.sort_unstable();
    wanted.dedup();
    for (i, &l) in wanted.iter().enumerate() {
        slot[l as usize] = i as u16 + 1;
    }
    let k = wanted.len() + 1;
    let mut n_ground = vec![0u64; k];
    let mut n_pred = vec![0u64; k];
    let mut n_both = vec![0u64; k];
    for (&g, &p) in ground.labels().iter().zip(pred.labels()) {
        let sg = slot[g as usize] as usize;
        let sp = slot[p as usize] as usize;
        n_ground[sg] += 1;
        n_pred[sp] += 1;
        if g == p {
            n_both[sg] += 1;
        }
    }
    let mut per_label = BTreeMap::new();
    let mut voxel_counts = BTreeMap::new();
    for (i, &l) in wanted.iter().enumerate() {
        let c = OverlapCounts {
            n_ground: n_ground[i + 1],
            n_pred: n_pred[i + 1],
            n_intersect: n_both[i + 1],
        };
        per_label.insert(l, c.dice());
        voxel_counts.insert(l, c);
    }
    Ok(DiceTable {
        per_label,
        voxel_counts,
    })
}
