//! In-memory volumes: a voxel grid with its world geometry, plus the label,
//! scalar and mask flavours the rest of the crate operates on.
//!
//! Storage order is NIfTI order: the first axis varies fastest, then the
//! second, then the third, then (for multi-channel volumes) the channel.

mod ops;
mod resample;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ops::{
    apply_mask, flip_sagittal, invert_order, permute_axes, standardize_intensities, MaskStats,
    Reorient,
};
pub use resample::{resample_labels, resample_scalars, resample_to_isovoxel, target_grid, Resample};

/// Integer label stored in a [`LabelVolume`]. Zero is background.
pub type Label = u16;

/// Relative tolerance between declared spacing and affine column norms.
pub const SPACING_TOLERANCE: f64 = 1e-3;

/// Homogeneous 4×4 voxel-index → world (mm) transform, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine(pub [[f64; 4]; 4]);

impl Affine {
    pub fn from_spacing(spacing: [f64; 3]) -> Self {
        let mut m = [[0.0; 4]; 4];
        for (i, s) in spacing.iter().enumerate() {
            m[i][i] = *s;
        }
        m[3][3] = 1.0;
        Affine(m)
    }

    pub fn identity() -> Self {
        Self::from_spacing([1.0; 3])
    }

    /// Maps a (possibly fractional) voxel index to world coordinates.
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        let mut out = [0.0; 3];
        for (r, o) in out.iter_mut().enumerate() {
            *o = m[r][0] * p[0] + m[r][1] * p[1] + m[r][2] * p[2] + m[r][3];
        }
        out
    }

    pub fn column(&self, c: usize) -> [f64; 3] {
        [self.0[0][c], self.0[1][c], self.0[2][c]]
    }

    pub fn translation(&self) -> [f64; 3] {
        self.column(3)
    }

    /// Euclidean norms of the three linear columns, i.e. the voxel spacing.
    pub fn column_norms(&self) -> [f64; 3] {
        let mut n = [0.0; 3];
        for (c, v) in n.iter_mut().enumerate() {
            let col = self.column(c);
            *v = (col[0] * col[0] + col[1] * col[1] + col[2] * col[2]).sqrt();
        }
        n
    }

    pub fn det3(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Inverse transform (world → voxel index), `None` when the linear part
    /// is singular relative to its scale.
    pub fn inverse(&self) -> Option<Affine> {
        let m = &self.0;
        let det = self.det3();
        let scale = self.column_norms().iter().product::<f64>();
        if !det.is_finite() || scale == 0.0 || det.abs() <= 1e-12 * scale {
            return None;
        }
        let inv_det = 1.0 / det;
        let mut r = [[0.0; 4]; 4];
        r[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det;
        r[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det;
        r[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det;
        r[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det;
        r[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det;
        r[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det;
        r[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det;
        r[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det;
        r[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det;
        for row in 0..3 {
            r[row][3] = -(r[row][0] * m[0][3] + r[row][1] * m[1][3] + r[row][2] * m[2][3]);
        }
        r[3][3] = 1.0;
        Some(Affine(r))
    }
}

/// Voxel grid geometry: dimensions plus the voxel → world transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dims: [usize; 3],
    affine: Affine,
    spacing: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], affine: Affine) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::UnsupportedDims(format!("zero-length axis in {dims:?}")));
        }
        if affine.inverse().is_none() {
            return Err(Error::DegenerateAffine);
        }
        let spacing = affine.column_norms();
        for (axis, &value) in spacing.iter().enumerate() {
            if !(value > 0.0) {
                return Err(Error::NonPositiveSpacing { axis, value });
            }
        }
        Ok(Grid {
            dims,
            affine,
            spacing,
        })
    }

    /// Axis-aligned grid with the origin at voxel (0,0,0).
    pub fn with_spacing(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        for (axis, &value) in spacing.iter().enumerate() {
            if !(value > 0.0) {
                return Err(Error::NonPositiveSpacing { axis, value });
            }
        }
        Self::new(dims, Affine::from_spacing(spacing))
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn affine(&self) -> &Affine {
        &self.affine
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn n_voxels(&self) -> usize {
        self.dims.iter().product()
    }

    /// Physical volume of one voxel in mm³.
    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.dims[0];
        let r = idx / self.dims[0];
        [x, r % self.dims[1], r / self.dims[1]]
    }

    pub fn voxel_to_world(&self, p: [f64; 3]) -> [f64; 3] {
        self.affine.apply(p)
    }

    pub fn ensure_same_dims(&self, other: &Grid) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimsMismatch(self.dims, other.dims));
        }
        Ok(())
    }
}

/// A grid of samples with an optional channel axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    grid: Grid,
    channels: usize,
    data: Vec<T>,
}

impl<T: Copy> Volume<T> {
    pub fn new(grid: Grid, channels: usize, data: Vec<T>) -> Result<Self> {
        let channels = channels.max(1);
        let expected = grid.n_voxels() * channels;
        if data.len() != expected {
            return Err(Error::SampleCountMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Volume {
            grid,
            channels,
            data,
        })
    }

    pub fn filled(grid: Grid, channels: usize, value: T) -> Self {
        let channels = channels.max(1);
        let data = vec![value; grid.n_voxels() * channels];
        Volume {
            grid,
            channels,
            data,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Samples of one channel.
    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.grid.n_voxels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.grid.index(x, y, z)]
    }

    pub(crate) fn from_parts_unchecked(grid: Grid, channels: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), grid.n_voxels() * channels);
        Volume {
            grid,
            channels,
            data,
        }
    }
}

/// Integer id → structure name, e.g. `1 → "lesion"`.
///
/// Serialized as a JSON object with stringified integer keys:
/// `{"1": "lesion", "2": "thalamus"}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelMap(BTreeMap<Label, String>);

impl LabelMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn insert(&mut self, id: Label, name: impl Into<String>) {
        self.0.insert(id, name.into());
    }

    pub fn name(&self, id: Label) -> Option<&str> {
        self.0.get(&id).map(String::as_str)
    }

    pub fn contains(&self, id: Label) -> bool {
        self.0.contains_key(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = Label> + '_ {
        self.0.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Label, &str)> + '_ {
        self.0.iter().map(|(k, v)| (*k, v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<(Label, String)> for LabelMap {
    fn from_iter<I: IntoIterator<Item = (Label, String)>>(iter: I) -> Self {
        LabelMap(iter.into_iter().collect())
    }
}

/// Discrete segmentation: one label per voxel plus the names of the labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    inner: Volume<Label>,
    label_map: LabelMap,
}

impl LabelVolume {
    /// Builds a label volume, rejecting grid values missing from `label_map`.
    pub fn new(grid: Grid, labels: Vec<Label>, label_map: LabelMap) -> Result<Self> {
        let inner = Volume::new(grid, 1, labels)?;
        let mut seen = vec![false; Label::MAX as usize + 1];
        for &l in inner.data() {
            seen[l as usize] = true;
        }
        if let Some(missing) = (1..seen.len())
            .filter(|&l| seen[l])
            .find(|&l| !label_map.contains(l as Label))
        {
            return Err(Error::UnknownLabel(missing as Label));
        }
        Ok(LabelVolume { inner, label_map })
    }

    /// Builds a label volume whose map names each present label `label_<id>`.
    pub fn from_labels(grid: Grid, labels: Vec<Label>) -> Result<Self> {
        let inner = Volume::new(grid, 1, labels)?;
        let label_map = default_label_map(inner.data());
        Ok(LabelVolume { inner, label_map })
    }

    /// Like [`LabelVolume::from_labels`] but keeps names from `names` where present.
    pub fn with_names(grid: Grid, labels: Vec<Label>, names: &LabelMap) -> Result<Self> {
        let inner = Volume::new(grid, 1, labels)?;
        let mut label_map = default_label_map(inner.data());
        for (id, name) in names.iter() {
            label_map.insert(id, name);
        }
        Ok(LabelVolume { inner, label_map })
    }

    pub fn empty(grid: Grid) -> Self {
        LabelVolume {
            inner: Volume::filled(grid, 1, 0),
            label_map: LabelMap::new(),
        }
    }

    pub fn grid(&self) -> &Grid {
        self.inner.grid()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.inner.dims()
    }

    pub fn labels(&self) -> &[Label] {
        self.inner.data()
    }

    pub fn label_map(&self) -> &LabelMap {
        &self.label_map
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> Label {
        self.inner.get(x, y, z)
    }

    pub fn as_volume(&self) -> &Volume<Label> {
        &self.inner
    }

    pub fn into_labels(self) -> Vec<Label> {
        self.inner.into_data()
    }

    /// Physical volume of one voxel in mm³.
    pub fn voxel_volume(&self) -> f64 {
        self.grid().voxel_volume()
    }

    /// Replaces the samples, keeping geometry and extending the label map
    /// with default names for any new ids.
    pub fn with_labels(&self, labels: Vec<Label>) -> Result<Self> {
        Self::with_names(self.grid().clone(), labels, &self.label_map)
    }

    pub(crate) fn from_volume(inner: Volume<Label>, label_map: LabelMap) -> Self {
        LabelVolume { inner, label_map }
    }

    /// Distinct nonzero labels present in the grid, ascending.
    pub fn present_labels(&self) -> Vec<Label> {
        let mut seen = vec![false; Label::MAX as usize + 1];
        for &l in self.labels() {
            seen[l as usize] = true;
        }
        (1..seen.len())
            .filter(|&l| seen[l])
            .map(|l| l as Label)
            .collect()
    }
}

fn default_label_map(labels: &[Label]) -> LabelMap {
    let mut seen = vec![false; Label::MAX as usize + 1];
    for &l in labels {
        seen[l as usize] = true;
    }
    (1..seen.len())
        .filter(|&l| seen[l])
        .map(|l| (l as Label, format!("label_{l}")))
        .collect()
}

/// Real-valued volume: intensities (one channel) or logits (one channel per class).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    inner: Volume<f64>,
}

impl ScalarVolume {
    pub fn new(grid: Grid, channels: usize, values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(ScalarVolume {
            inner: Volume::new(grid, channels, values)?,
        })
    }

    pub fn grid(&self) -> &Grid {
        self.inner.grid()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.inner.dims()
    }

    pub fn channels(&self) -> usize {
        self.inner.channels()
    }

    pub fn values(&self) -> &[f64] {
        self.inner.data()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        self.inner.channel(c)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.inner.get(x, y, z)
    }

    pub fn as_volume(&self) -> &Volume<f64> {
        &self.inner
    }

    pub fn into_values(self) -> Vec<f64> {
        self.inner.into_data()
    }

    pub(crate) fn from_volume(inner: Volume<f64>) -> Self {
        ScalarVolume { inner }
    }
}

/// Binary brain mask.
#[derive(Debug, Clone, PartialEq)]
pub struct BrainMask {
    inner: Volume<bool>,
}

impl BrainMask {
    pub fn new(grid: Grid, inside: Vec<bool>) -> Result<Self> {
        Ok(BrainMask {
            inner: Volume::new(grid, 1, inside)?,
        })
    }

    pub fn full(grid: Grid) -> Self {
        BrainMask {
            inner: Volume::filled(grid, 1, true),
        }
    }

    /// Nonzero voxels of a label volume count as inside.
    pub fn from_labels(volume: &LabelVolume) -> Self {
        let inside = volume.labels().iter().map(|&l| l != 0).collect();
        BrainMask {
            inner: Volume::from_parts_unchecked(volume.grid().clone(), 1, inside),
        }
    }

    /// Nonzero voxels of the first channel count as inside.
    pub fn from_scalars(volume: &ScalarVolume) -> Self {
        let inside = volume.channel(0).iter().map(|&v| v != 0.0).collect();
        BrainMask {
            inner: Volume::from_parts_unchecked(volume.grid().clone(), 1, inside),
        }
    }

    pub fn grid(&self) -> &Grid {
        self.inner.grid()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.inner.dims()
    }

    pub fn inside(&self) -> &[bool] {
        self.inner.data()
    }

    pub fn count(&self) -> usize {
        self.inside().iter().filter(|&&b| b).count()
    }

    pub fn as_volume(&self) -> &Volume<bool> {
        &self.inner
    }

    pub(crate) fn from_volume(inner: Volume<bool>) -> Self {
        BrainMask { inner }
    }
}
