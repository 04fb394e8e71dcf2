//! Resampling onto an axis-aligned grid of a chosen spacing.
//!
//! The output grid covers the world-space bounding box of the input voxel
//! corners. Output axis `j` runs along world axis `j`, keeping the direction
//! sign of the input axis that dominates that world axis, so an input that is
//! already axis-aligned at the target spacing comes back unchanged.

use super::{Affine, Grid, LabelVolume, ScalarVolume, Volume};
use crate::error::{Error, Result};

const EDGE_EPS: f64 = 1e-6;

pub trait Resample: Sized {
    fn resample(&self, target_spacing: [f64; 3]) -> Result<Self>;
}

impl Resample for LabelVolume {
    fn resample(&self, target_spacing: [f64; 3]) -> Result<Self> {
        resample_labels(self, target_spacing)
    }
}

impl Resample for ScalarVolume {
    fn resample(&self, target_spacing: [f64; 3]) -> Result<Self> {
        resample_scalars(self, target_spacing)
    }
}

/// Resamples labels by nearest neighbour and scalars trilinearly; the usual
/// call passes `[1.0; 3]`.
pub fn resample_to_isovoxel<V: Resample>(volume: &V, target_spacing: [f64; 3]) -> Result<V> {
    volume.resample(target_spacing)
}

/// Target grid for `grid` at `spacing`.
pub fn target_grid(grid: &Grid, spacing: [f64; 3]) -> Result<Grid> {
    for (axis, &value) in spacing.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::NonPositiveSpacing { axis, value });
        }
    }
    let a = grid.affine();
    a.inverse().ok_or(Error::DegenerateAffine)?;
    let dims = grid.dims();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for corner in 0..8 {
        let p = [0, 1, 2].map(|ax| {
            if corner >> ax & 1 == 0 {
                -0.5
            } else {
                dims[ax] as f64 - 0.5
            }
        });
        let w = a.apply(p);
        for j in 0..3 {
            lo[j] = lo[j].min(w[j]);
            hi[j] = hi[j].max(w[j]);
        }
    }
    let mut m = [[0.0; 4]; 4];
    m[3][3] = 1.0;
    let mut out_dims = [1usize; 3];
    for j in 0..3 {
        let row = a.0[j];
        let dominant = (0..3)
            .max_by(|&p, &q| row[p].abs().total_cmp(&row[q].abs()))
            .unwrap();
        let extent = hi[j] - lo[j];
        out_dims[j] = ((extent / spacing[j] - EDGE_EPS).ceil() as usize).max(1);
        if row[dominant] >= 0.0 {
            m[j][j] = spacing[j];
            m[j][3] = lo[j] + spacing[j] / 2.0;
        } else {
            m[j][j] = -spacing[j];
            m[j][3] = hi[j] - spacing[j] / 2.0;
        }
    }
    Grid::new(out_dims, Affine(m))
}

/// Output-voxel → input continuous index transform.
fn index_map(input: &Grid, output: &Grid) -> Result<Affine> {
    let inv = input.affine().inverse().ok_or(Error::DegenerateAffine)?;
    let a = &inv.0;
    let b = &output.affine().0;
    let mut m = [[0.0; 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            m[r][c] = (0..4).map(|k| a[r][k] * b[k][c]).sum();
        }
    }
    Ok(Affine(m))
}

/// Visits every output voxel in storage order with its continuous input index.
fn for_each_source(map: &Affine, dims: [usize; 3], mut f: impl FnMut(usize, [f64; 3])) {
    let c0 = map.column(0);
    let c1 = map.column(1);
    let c2 = map.column(2);
    let t = map.translation();
    let mut idx = 0;
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            let base = [0, 1, 2].map(|r| t[r] + j as f64 * c1[r] + k as f64 * c2[r]);
            for i in 0..dims[0] {
                let p = [0, 1, 2].map(|r| base[r] + i as f64 * c0[r]);
                f(idx, p);
                idx += 1;
            }
        }
    }
}

#[inline]
fn inside_box(c: f64, n: usize) -> bool {
    c >= -0.5 - EDGE_EPS && c <= n as f64 - 0.5 + EDGE_EPS
}

pub fn resample_labels(volume: &LabelVolume, target_spacing: [f64; 3]) -> Result<LabelVolume> {
    let out_grid = target_grid(volume.grid(), target_spacing)?;
    let map = index_map(volume.grid(), &out_grid)?;
    let [nx, ny, nz] = volume.dims();
    let src = volume.labels();
    let mut out = vec![0; out_grid.n_voxels()];
    for_each_source(&map, out_grid.dims(), |o, p| {
        if inside_box(p[0], nx) && inside_box(p[1], ny) && inside_box(p[2], nz) {
            let near = |c: f64, n: usize| ((c + 0.5).floor().max(0.0) as usize).min(n - 1);
            let i = near(p[0], nx) + nx * (near(p[1], ny) + ny * near(p[2], nz));
            out[o] = src[i];
        }
    });
    Ok(LabelVolume::from_volume(
        Volume::from_parts_unchecked(out_grid, 1, out),
        volume.label_map().clone(),
    ))
}

/// Base index and fractional weight along one axis. Within the outer half
/// voxel the nearest cell is extrapolated linearly.
#[inline]
fn axis_weights(c: f64, n: usize) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let i0 = (c.floor().max(0.0) as usize).min(n - 2);
    (i0, i0 + 1, c - i0 as f64)
}

pub fn resample_scalars(volume: &ScalarVolume, target_spacing: [f64; 3]) -> Result<ScalarVolume> {
    let out_grid = target_grid(volume.grid(), target_spacing)?;
    let map = index_map(volume.grid(), &out_grid)?;
    let [nx, ny, nz] = volume.dims();
    let n_out = out_grid.n_voxels();
    let channels = volume.channels();
    let mut out = vec![0.0; n_out * channels];
    for_each_source(&map, out_grid.dims(), |o, p| {
        if !(inside_box(p[0], nx) && inside_box(p[1], ny) && inside_box(p[2], nz)) {
            return;
        }
        let (x0, x1, fx) = axis_weights(p[0], nx);
        let (y0, y1, fy) = axis_weights(p[1], ny);
        let (z0, z1, fz) = axis_weights(p[2], nz);
        let at = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);
        let corners = [
            (at(x0, y0, z0), (1.0 - fx) * (1.0 - fy) * (1.0 - fz)),
            (at(x1, y0, z0), fx * (1.0 - fy) * (1.0 - fz)),
            (at(x0, y1, z0), (1.0 - fx) * fy * (1.0 - fz)),
            (at(x1, y1, z0), fx * fy * (1.0 - fz)),
            (at(x0, y0, z1), (1.0 - fx) * (1.0 - fy) * fz),
            (at(x1, y0, z1), fx * (1.0 - fy) * fz),
            (at(x0, y1, z1), (1.0 - fx) * fy * fz),
            (at(x1, y1, z1), fx * fy * fz),
        ];
        for c in 0..channels {
            let src = volume.channel(c);
            out[c * n_out + o] = corners.iter().map(|&(i, w)| w * src[i]).sum();
        }
    });
    Ok(ScalarVolume::from_volume(Volume::from_parts_unchecked(
        out_grid, channels, out,
    )))
}
