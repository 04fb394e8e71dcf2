//! Lesions: connected components of one or more labels, filtered by a
//! physical minimum volume.
//!
//! Labeling is a two-pass union-find over the grid in storage order. Lesion
//! ids are 1-based and ordered by the (z, y, x) minimum corner of each
//! bounding box, with the first voxel in storage order as tie-break.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Grid, Label, LabelVolume};

/// Default minimum lesion volume in mm³.
pub const DEFAULT_MIN_VOLUME_MM3: f64 = 3.0;

const VOLUME_REL_TOLERANCE: f64 = 1e-9;

/// Voxel adjacency used to join foreground voxels into components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Connectivity {
    /// Face neighbours only.
    #[serde(rename = "6")]
    Six,
    /// Face and edge neighbours (Manhattan distance ≤ 2).
    #[default]
    #[serde(rename = "18")]
    Eighteen,
    /// Face, edge and corner neighbours.
    #[serde(rename = "26")]
    TwentySix,
}

impl Connectivity {
    pub fn count(self) -> usize {
        match self {
            Connectivity::Six => 6,
            Connectivity::Eighteen => 18,
            Connectivity::TwentySix => 26,
        }
    }

    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            6 => Ok(Connectivity::Six),
            18 => Ok(Connectivity::Eighteen),
            26 => Ok(Connectivity::TwentySix),
            other => Err(Error::InvalidParameter(format!("connectivity {other}"))),
        }
    }

    fn max_manhattan(self) -> i32 {
        match self {
            Connectivity::Six => 1,
            Connectivity::Eighteen => 2,
            Connectivity::TwentySix => 3,
        }
    }

    /// All neighbour offsets `(dx, dy, dz)`.
    pub fn offsets(self) -> Vec<[i32; 3]> {
        let mut out = Vec::with_capacity(self.count());
        for dz in -1i32..=1 {
            for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    let m = dx.abs() + dy.abs() + dz.abs();
                    if m > 0 && m <= self.max_manhattan() {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }

    /// Offsets that precede a voxel in storage order.
    fn backward_offsets(self) -> Vec<[i32; 3]> {
        self.offsets()
            .into_iter()
            .filter(|&[dx, dy, dz]| dz < 0 || (dz == 0 && (dy < 0 || (dy == 0 && dx < 0))))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    /// Inclusive lower corner (x, y, z).
    pub min: [usize; 3],
    /// Inclusive upper corner (x, y, z).
    pub max: [usize; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lesion {
    pub id: u32,
    /// Linear voxel indices, ascending.
    pub voxels: Vec<usize>,
    pub volume_mm3: f64,
    pub bbox: BoundingBox,
    /// Mean voxel coordinate (x, y, z).
    pub centroid: [f64; 3],
}

impl Lesion {
    pub fn voxel_count(&self) -> usize {
        self.voxels.len()
    }

    /// Voxel coordinates in storage order.
    pub fn coords<'a>(&'a self, grid: &'a Grid) -> impl Iterator<Item = [usize; 3]> + 'a {
        self.voxels.iter().map(move |&i| grid.coords(i))
    }

    pub fn summary(&self) -> LesionSummary {
        LesionSummary {
            id: self.id,
            voxel_count: self.voxels.len(),
            volume_mm3: self.volume_mm3,
            bbox: self.bbox,
            centroid: self.centroid,
        }
    }
}

/// Row of a lesion table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionSummary {
    pub id: u32,
    pub voxel_count: usize,
    pub volume_mm3: f64,
    pub bbox: BoundingBox,
    pub centroid: [f64; 3],
}

/// Every lesion of one segmentation, plus a voxel → lesion id lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionSet {
    lesions: Vec<Lesion>,
    source_dims: [usize; 3],
    label_ids: Vec<Label>,
    connectivity: Connectivity,
    min_volume_mm3: f64,
    /// Lesion id per voxel, 0 for background and filtered components.
    id_map: Vec<u32>,
}

impl LesionSet {
    pub fn lesions(&self) -> &[Lesion] {
        &self.lesions
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Lesion> {
        self.lesions.iter()
    }

    pub fn len(&self) -> usize {
        self.lesions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lesions.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&Lesion> {
        id.checked_sub(1).and_then(|i| self.lesions.get(i as usize))
    }

    pub fn source_dims(&self) -> [usize; 3] {
        self.source_dims
    }

    pub fn label_ids(&self) -> &[Label] {
        &self.label_ids
    }

    pub fn connectivity(&self) -> Connectivity {
        self.connectivity
    }

    pub fn min_volume_mm3(&self) -> f64 {
        self.min_volume_mm3
    }

    /// Lesion id at a linear voxel index, 0 when none.
    #[inline]
    pub fn id_at(&self, idx: usize) -> u32 {
        self.id_map[idx]
    }

    pub fn id_map(&self) -> &[u32] {
        &self.id_map
    }

    pub fn summaries(&self) -> Vec<LesionSummary> {
        self.lesions.iter().map(Lesion::summary).collect()
    }

    pub fn into_lesions(self) -> Vec<Lesion> {
        self.lesions
    }
}

/// Physical volume of one voxel of `volume` in mm³.
pub fn voxel_volume(volume: &LabelVolume) -> f64 {
    volume.grid().voxel_volume()
}

/// Lesions of `label_id` under 18-connectivity, dropping components smaller
/// than `min_volume_mm3`.
pub fn extract_lesions(volume: &LabelVolume, label_id: Label, min_volume_mm3: f64) -> LesionSet {
    extract_lesions_with(volume, &[label_id], min_volume_mm3, Connectivity::Eighteen)
}

/// Lesions of the union of `label_ids` under the given connectivity.
pub fn extract_lesions_with(
    volume: &LabelVolume,
    label_ids: &[Label],
    min_volume_mm3: f64,
    connectivity: Connectivity,
) -> LesionSet {
    let labels = volume.labels();
    let mut set = match label_ids {
        [single] => {
            let l = *single;
            label_components(volume.grid(), |i| labels[i] == l, min_volume_mm3, connectivity)
        }
        many => {
            let mut wanted = vec![false; Label::MAX as usize + 1];
            for &l in many {
                wanted[l as usize] = true;
            }
            wanted[0] = false;
            label_components(volume.grid(), |i| wanted[labels[i] as usize], min_volume_mm3, connectivity)
        }
    };
    set.label_ids = label_ids.to_vec();
    set
}

/// Connected components of the voxels where `foreground` holds.
pub fn label_components(
    grid: &Grid,
    foreground: impl Fn(usize) -> bool,
    min_volume_mm3: f64,
    connectivity: Connectivity,
) -> LesionSet {
    let [nx, ny, nz] = grid.dims();
    let n = grid.n_voxels();
    let (sx, sy) = (1isize, nx as isize);
    let sz = (nx * ny) as isize;
    let backward: Vec<([i32; 3], isize)> = connectivity
        .backward_offsets()
        .into_iter()
        .map(|o| (o, o[0] as isize * sx + o[1] as isize * sy + o[2] as isize * sz))
        .collect();

    // pass 1: provisional labels and equivalences
    let mut labels = vec![0u32; n];
    let mut parent: Vec<u32> = vec![0];
    let mut idx = 0usize;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if foreground(idx) {
                    let mut current = 0u32;
                    for &([dx, dy, dz], delta) in &backward {
                        if (dx < 0 && x == 0)
                            || (dx > 0 && x + 1 == nx)
                            || (dy < 0 && y == 0)
                            || (dy > 0 && y + 1 == ny)
                            || (dz < 0 && z == 0)
                        {
                            continue;
                        }
                        let nl = labels[(idx as isize + delta) as usize];
                        if nl == 0 {
                            continue;
                        }
                        if current == 0 {
                            current = nl;
                        } else if nl != current {
                            union(&mut parent, current, nl);
                        }
                    }
                    if current == 0 {
                        current = parent.len() as u32;
                        parent.push(current);
                    }
                    labels[idx] = current;
                }
                idx += 1;
            }
        }
    }

    // resolve provisional labels to dense component indices
    let mut component = vec![u32::MAX; parent.len()];
    let mut n_components = 0u32;
    for l in 1..parent.len() as u32 {
        let r = find(&mut parent, l);
        if component[r as usize] == u32::MAX {
            component[r as usize] = n_components;
            n_components += 1;
        }
        component[l as usize] = component[r as usize];
    }

    #[derive(Clone)]
    struct Acc {
        count: usize,
        first: usize,
        min: [usize; 3],
        max: [usize; 3],
        sum: [f64; 3],
    }
    let mut acc = vec![
        Acc {
            count: 0,
            first: usize::MAX,
            min: [usize::MAX; 3],
            max: [0; 3],
            sum: [0.0; 3],
        };
        n_components as usize
    ];
    for (i, l) in labels.iter_mut().enumerate() {
        if *l == 0 {
            continue;
        }
        let c = component[*l as usize];
        *l = c + 1;
        let a = &mut acc[c as usize];
        let p = grid.coords(i);
        if a.count == 0 {
            a.first = i;
        }
        a.count += 1;
        for k in 0..3 {
            a.min[k] = a.min[k].min(p[k]);
            a.max[k] = a.max[k].max(p[k]);
            a.sum[k] += p[k] as f64;
        }
    }

    let voxel_volume = grid.voxel_volume();
    let threshold = min_volume_mm3 * (1.0 - VOLUME_REL_TOLERANCE);
    let mut kept: Vec<u32> = (0..n_components)
        .filter(|&c| acc[c as usize].count as f64 * voxel_volume >= threshold)
        .collect();
    kept.sort_by_key(|&c| {
        let a = &acc[c as usize];
        (a.min[2], a.min[1], a.min[0], a.first)
    });
    let mut final_id = vec![0u32; n_components as usize];
    let mut lesions: Vec<Lesion> = Vec::with_capacity(kept.len());
    for (rank, &c) in kept.iter().enumerate() {
        final_id[c as usize] = rank as u32 + 1;
        let a = &acc[c as usize];
        lesions.push(Lesion {
            id: rank as u32 + 1,
            voxels: Vec::with_capacity(a.count),
            volume_mm3: a.count as f64 * voxel_volume,
            bbox: BoundingBox {
                min: a.min,
                max: a.max,
            },
            centroid: a.sum.map(|s| s / a.count as f64),
        });
    }

    // pass 2: final ids and voxel lists
    for (i, l) in labels.iter_mut().enumerate() {
        if *l == 0 {
            continue;
        }
        let id = final_id[(*l - 1) as usize];
        *l = id;
        if id != 0 {
            lesions[(id - 1) as usize].voxels.push(i);
        }
    }

    LesionSet {
        lesions,
        source_dims: grid.dims(),
        label_ids: Vec::new(),
        connectivity,
        min_volume_mm3,
        id_map: labels,
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let ra = find(parent, a);
    let rb = find(parent, b);
    if ra < rb {
        parent[rb as usize] = ra;
    } else if rb < ra {
        parent[ra as usize] = rb;
    }
}
