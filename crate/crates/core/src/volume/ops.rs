use super::{Affine, BrainMask, Grid, LabelVolume, ScalarVolume, Volume};
use crate::error::{Error, Result};

/// Population mean and standard deviation of one channel inside a mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

impl MaskStats {
    pub fn compute(values: &[f64], inside: &[bool]) -> Result<Self> {
        let mut count = 0usize;
        let mut sum = 0.0;
        for (&v, _) in values.iter().zip(inside).filter(|(_, &m)| m) {
            sum += v;
            count += 1;
        }
        if count == 0 {
            return Err(Error::EmptyMask);
        }
        let mean = sum / count as f64;
        let mut ss = 0.0;
        let mut peak = 0.0f64;
        for (&v, _) in values.iter().zip(inside).filter(|(_, &m)| m) {
            let d = v - mean;
            ss += d * d;
            peak = peak.max(v.abs());
        }
        let std = (ss / count as f64).sqrt();
        // A constant image leaves only rounding noise in the deviations.
        if !(std > 64.0 * f64::EPSILON * peak.max(f64::MIN_POSITIVE)) {
            return Err(Error::ZeroVariance);
        }
        Ok(MaskStats { count, mean, std })
    }
}

/// Z-scores every voxel with the mean and population standard deviation of
/// the voxels inside `mask`. Voxels outside the mask are transformed too.
pub fn standardize_intensities(image: &ScalarVolume, mask: &BrainMask) -> Result<ScalarVolume> {
    image.grid().ensure_same_dims(mask.grid())?;
    let n = image.grid().n_voxels();
    let mut out = Vec::with_capacity(image.values().len());
    for c in 0..image.channels() {
        let values = image.channel(c);
        let stats = MaskStats::compute(values, mask.inside())?;
        out.extend(values.iter().map(|v| (v - stats.mean) / stats.std));
    }
    debug_assert_eq!(out.len(), n * image.channels());
    Ok(ScalarVolume::from_volume(Volume::from_parts_unchecked(
        image.grid().clone(),
        image.channels(),
        out,
    )))
}

/// Replaces every sample outside the mask with `fill`.
pub fn apply_mask(image: &ScalarVolume, mask: &BrainMask, fill: f64) -> Result<ScalarVolume> {
    image.grid().ensure_same_dims(mask.grid())?;
    if !fill.is_finite() {
        return Err(Error::InvalidParameter(format!("mask fill value {fill}")));
    }
    let n = image.grid().n_voxels();
    let inside = mask.inside();
    let out = image
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| if inside[i % n] { v } else { fill })
        .collect();
    Ok(ScalarVolume::from_volume(Volume::from_parts_unchecked(
        image.grid().clone(),
        image.channels(),
        out,
    )))
}

/// Volumes whose voxel axes can be reordered without moving samples in world space.
pub trait Reorient: Sized {
    /// Reverses the first (left–right) axis.
    fn flip_sagittal(&self) -> Self;
    /// New axis `k` is old axis `order[k]`.
    fn permute_axes(&self, order: [usize; 3]) -> Result<Self>;
}

/// Mirrors a volume along its first axis, adjusting the affine so every
/// sample keeps its world position.
pub fn flip_sagittal<V: Reorient>(volume: &V) -> V {
    volume.flip_sagittal()
}

pub fn permute_axes<V: Reorient>(volume: &V, order: [usize; 3]) -> Result<V> {
    volume.permute_axes(order)
}

impl<T: Copy> Reorient for Volume<T> {
    fn flip_sagittal(&self) -> Self {
        let [nx, ny, nz] = self.dims();
        let mut data = Vec::with_capacity(self.data().len());
        for c in 0..self.channels() {
            let src = self.channel(c);
            for row in 0..ny * nz {
                data.extend(src[row * nx..(row + 1) * nx].iter().rev());
            }
        }
        let mut m = self.grid().affine().0;
        for r in 0..3 {
            m[r][3] += m[r][0] * (nx as f64 - 1.0);
            m[r][0] = -m[r][0];
        }
        let grid = Grid::new(self.dims(), Affine(m)).expect("flip preserves invertibility");
        Volume::from_parts_unchecked(grid, self.channels(), data)
    }

    fn permute_axes(&self, order: [usize; 3]) -> Result<Self> {
        let mut sorted = order;
        sorted.sort_unstable();
        if sorted != [0, 1, 2] {
            return Err(Error::InvalidParameter(format!("axis order {order:?} is not a permutation")));
        }
        let old = self.dims();
        let dims = [old[order[0]], old[order[1]], old[order[2]]];
        let m = self.grid().affine().0;
        let mut pm = m;
        for r in 0..3 {
            for (k, &o) in order.iter().enumerate() {
                pm[r][k] = m[r][o];
            }
        }
        let grid = Grid::new(dims, Affine(pm))?;
        // stride of each new axis in the old layout
        let old_stride = [1, old[0], old[0] * old[1]];
        let stride = [old_stride[order[0]], old_stride[order[1]], old_stride[order[2]]];
        let mut data = Vec::with_capacity(self.data().len());
        for c in 0..self.channels() {
            let src = self.channel(c);
            for k in 0..dims[2] {
                for j in 0..dims[1] {
                    let base = j * stride[1] + k * stride[2];
                    data.extend((0..dims[0]).map(|i| src[base + i * stride[0]]));
                }
            }
        }
        Ok(Volume::from_parts_unchecked(grid, self.channels(), data))
    }
}

impl Reorient for LabelVolume {
    fn flip_sagittal(&self) -> Self {
        LabelVolume::from_volume(self.as_volume().flip_sagittal(), self.label_map().clone())
    }

    fn permute_axes(&self, order: [usize; 3]) -> Result<Self> {
        Ok(LabelVolume::from_volume(
            self.as_volume().permute_axes(order)?,
            self.label_map().clone(),
        ))
    }
}

impl Reorient for ScalarVolume {
    fn flip_sagittal(&self) -> Self {
        ScalarVolume::from_volume(self.as_volume().flip_sagittal())
    }

    fn permute_axes(&self, order: [usize; 3]) -> Result<Self> {
        Ok(ScalarVolume::from_volume(self.as_volume().permute_axes(order)?))
    }
}

impl Reorient for BrainMask {
    fn flip_sagittal(&self) -> Self {
        BrainMask::from_volume(self.as_volume().flip_sagittal())
    }

    fn permute_axes(&self, order: [usize; 3]) -> Result<Self> {
        Ok(BrainMask::from_volume(self.as_volume().permute_axes(order)?))
    }
}

/// Inverse of an axis permutation.
pub fn invert_order(order: [usize; 3]) -> [usize; 3] {
    let mut inv = [0; 3];
    for (k, &o) in order.iter().enumerate() {
        inv[o] = k;
    }
    inv
}
