//! Deterministic synthetic label volumes and simulated rater/method errors.
//!
//! Randomness comes from [`CounterRng`], a SplitMix64 stream: draw `i` of a
//! stream keyed `k` is `mix(k + (i + 1) · 0x9E3779B97F4A7C15)` with the
//! SplitMix64 finalizer
//!
//! ```text
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! z =  z ^ (z >> 31)
//! ```
//!
//! (all arithmetic wrapping mod 2⁶⁴). Uniform reals take the top 53 bits.
//! Independent streams are derived with [`CounterRng::stream`], so results do
//! not depend on how many draws other lesions consumed.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lesion::{extract_lesions_with, Connectivity};
use crate::volume::{Grid, Label, LabelMap, LabelVolume};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based SplitMix64 generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        CounterRng { key: seed, counter: 0 }
    }

    /// Independent generator for sub-stream `id`.
    pub fn stream(&self, id: u64) -> Self {
        CounterRng {
            key: mix64(self.key ^ mix64(id.wrapping_add(GOLDEN))),
            counter: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `lo..=hi`.
    pub fn range_i64(&mut self, lo: i64, hi: i64) -> i64 {
        debug_assert!(lo <= hi);
        let span = (hi - lo) as u64 + 1;
        lo + (self.next_u64() % span) as i64
    }

    /// Uniform real in [lo, hi).
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn chance(&mut self, p: f64) -> bool {
        p > 0.0 && self.next_f64() < p
    }
}

/// An ellipsoid given by its centre (voxel coordinates) and radii (mm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionBlob {
    pub center: [f64; 3],
    /// Per-axis radii in mm; a single `radius_mm` in JSON means a sphere.
    #[serde(alias = "radius_mm", deserialize_with = "radii_from_json")]
    pub radii_mm: [f64; 3],
    #[serde(default = "default_lesion_label")]
    pub label: Label,
}

fn default_lesion_label() -> Label {
    1
}

fn radii_from_json<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<[f64; 3], D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum R {
        One(f64),
        Three([f64; 3]),
    }
    Ok(match R::deserialize(d)? {
        R::One(r) => [r; 3],
        R::Three(r) => r,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Region {
    /// Inclusive voxel box.
    Box { min: [usize; 3], max: [usize; 3], label: Label },
    Ellipsoid { center: [f64; 3], radii_mm: [f64; 3], label: Label },
}

/// Random lesion population appended to the explicit lesion list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomLesions {
    pub count: usize,
    /// Radius range in mm, sampled uniformly.
    pub radius_mm: [f64; 2],
    #[serde(default = "default_lesion_label")]
    pub label: Label,
    /// Minimum gap in voxels between lesion surfaces.
    #[serde(default = "default_gap")]
    pub min_gap_vox: usize,
}

fn default_gap() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    #[serde(default = "unit_spacing")]
    pub spacing: [f64; 3],
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub lesions: Vec<LesionBlob>,
    #[serde(default)]
    pub anatomy: Vec<Region>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_lesions: Option<RandomLesions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_map: Option<LabelMap>,
}

fn unit_spacing() -> [f64; 3] {
    [1.0; 3]
}

impl PhantomSpec {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], seed: u64) -> Self {
        PhantomSpec {
            dims,
            spacing,
            seed,
            lesions: Vec::new(),
            anatomy: Vec::new(),
            random_lesions: None,
            label_map: None,
        }
    }

    /// Explicit lesions plus the sampled random population.
    pub fn resolved_lesions(&self) -> Result<Vec<LesionBlob>> {
        let mut out = self.lesions.clone();
        if let Some(r) = &self.random_lesions {
            out.extend(sample_population(self.dims, self.spacing, self.seed, r)?);
        }
        Ok(out)
    }
}

/// Places `spec.count` non-touching spheres by rejection sampling.
fn sample_population(dims: [usize; 3], spacing: [f64; 3], seed: u64, spec: &RandomLesions) -> Result<Vec<LesionBlob>> {
    let [rmin, rmax] = spec.radius_mm;
    if !(rmin > 0.0 && rmax >= rmin) {
        return Err(Error::InvalidParameter(format!("radius range {:?}", spec.radius_mm)));
    }
    let mut rng = CounterRng::new(seed).stream(0x6c65_7369_6f6e);
    let mut placed: Vec<LesionBlob> = Vec::with_capacity(spec.count);
    let max_attempts = 200 * spec.count.max(1);
    let mut attempts = 0;
    while placed.len() < spec.count {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::InvalidParameter(format!(
                "could only place {} of {} lesions in {:?}",
                placed.len(),
                spec.count,
                dims
            )));
        }
        let r = rng.range_f64(rmin, rmax);
        let half = [0, 1, 2].map(|a| (r / spacing[a]).ceil() as i64);
        if (0..3).any(|a| 2 * half[a] + 1 > dims[a] as i64) {
            continue;
        }
        let center = [0, 1, 2].map(|a| rng.range_i64(half[a], dims[a] as i64 - 1 - half[a]) as f64);
        let clear = placed.iter().all(|p| {
            // conservative: physical centre distance vs radii plus the gap
            let d2: f64 = (0..3)
                .map(|a| ((center[a] - p.center[a]) * spacing[a]).powi(2))
                .sum();
            let gap = spec.min_gap_vox as f64 * spacing.iter().cloned().fold(0.0, f64::max);
            d2.sqrt() > r + p.radii_mm[0] + gap + spacing.iter().cloned().fold(0.0, f64::max)
        });
        if clear {
            placed.push(LesionBlob {
                center,
                radii_mm: [r; 3],
                label: spec.label,
            });
        }
    }
    Ok(placed)
}

/// Voxels inside an ellipsoid, or an error when it leaves the grid.
fn ellipsoid_voxels(grid: &Grid, center: [f64; 3], radii_mm: [f64; 3]) -> Result<Vec<usize>> {
    let dims = grid.dims();
    let spacing = grid.spacing();
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for a in 0..3 {
        if !(radii_mm[a] > 0.0) {
            return Err(Error::InvalidParameter(format!("radius {}", radii_mm[a])));
        }
        let ext = radii_mm[a] / spacing[a];
        let (l, h) = ((center[a] - ext).ceil(), (center[a] + ext).floor());
        if l < 0.0 || h > dims[a] as f64 - 1.0 {
            return Err(Error::OutOfBounds(format!(
                "ellipsoid at {center:?} radius {radii_mm:?} leaves grid {dims:?}"
            )));
        }
        lo[a] = l.max(0.0) as usize;
        hi[a] = h.max(0.0) as usize;
    }
    let mut out = Vec::new();
    for z in lo[2]..=hi[2] {
        for y in lo[1]..=hi[1] {
            for x in lo[0]..=hi[0] {
                let p = [x as f64, y as f64, z as f64];
                let q: f64 = (0..3)
                    .map(|a| ((p[a] - center[a]) * spacing[a] / radii_mm[a]).powi(2))
                    .sum();
                if q <= 1.0 + 1e-12 {
                    out.push(grid.index(x, y, z));
                }
            }
        }
    }
    Ok(out)
}

/// Renders a phantom: anatomy regions first, then lesions, later entries
/// overwriting earlier ones.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<LabelVolume> {
    let grid = Grid::with_spacing(spec.dims, spec.spacing)?;
    let mut labels = vec![0 as Label; grid.n_voxels()];
    for region in &spec.anatomy {
        match region {
            Region::Box { min, max, label } => {
                for a in 0..3 {
                    if min[a] > max[a] || max[a] >= spec.dims[a] {
                        return Err(Error::OutOfBounds(format!("box {min:?}..{max:?} in {:?}", spec.dims)));
                    }
                }
                for z in min[2]..=max[2] {
                    for y in min[1]..=max[1] {
                        for x in min[0]..=max[0] {
                            labels[grid.index(x, y, z)] = *label;
                        }
                    }
                }
            }
            Region::Ellipsoid { center, radii_mm, label } => {
                for i in ellipsoid_voxels(&grid, *center, *radii_mm)? {
                    labels[i] = *label;
                }
            }
        }
    }
    for blob in spec.resolved_lesions()? {
        for i in ellipsoid_voxels(&grid, blob.center, blob.radii_mm)? {
            labels[i] = blob.label;
        }
    }
    match &spec.label_map {
        Some(names) => LabelVolume::with_names(grid, labels, names),
        None => LabelVolume::from_labels(grid, labels),
    }
}

/// Simulated segmentation errors applied lesion by lesion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbSpec {
    pub seed: u64,
    pub dilate_prob: f64,
    pub erode_prob: f64,
    /// Probability of deleting a whole lesion.
    pub drop_prob: f64,
    /// Spurious lesions to inject into background.
    pub add_fp: usize,
    /// Maximum random shift per axis, in voxels.
    pub jitter_vox: usize,
    /// Label whose components are perturbed.
    pub label: Label,
    /// Radius (mm) of injected lesions.
    pub fp_radius_mm: f64,
}

impl Default for PerturbSpec {
    fn default() -> Self {
        PerturbSpec {
            seed: 0,
            dilate_prob: 0.0,
            erode_prob: 0.0,
            drop_prob: 0.0,
            add_fp: 0,
            jitter_vox: 0,
            label: 1,
            fp_radius_mm: 1.5,
        }
    }
}

impl PerturbSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("dilate_prob", self.dilate_prob),
            ("erode_prob", self.erode_prob),
            ("drop_prob", self.drop_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("{name} = {p}")));
            }
        }
        if !(self.fp_radius_mm > 0.0) {
            return Err(Error::InvalidParameter(format!("fp_radius_mm = {}", self.fp_radius_mm)));
        }
        Ok(())
    }
}

const FACE: [[i64; 3]; 6] = [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]];

fn neighbour(grid: &Grid, idx: usize, d: [i64; 3]) -> Option<usize> {
    let p = grid.coords(idx);
    let dims = grid.dims();
    let mut q = [0usize; 3];
    for a in 0..3 {
        let v = p[a] as i64 + d[a];
        if v < 0 || v >= dims[a] as i64 {
            return None;
        }
        q[a] = v as usize;
    }
    Some(grid.index(q[0], q[1], q[2]))
}

/// Applies drop, jitter, dilation and erosion to every component of
/// `spec.label` (each with its own random stream), then injects spurious
/// lesions into background far from any foreground.
pub fn perturb(volume: &LabelVolume, spec: &PerturbSpec) -> Result<LabelVolume> {
    spec.validate()?;
    let grid = volume.grid();
    let src = volume.labels();
    let label = spec.label;
    let set = extract_lesions_with(volume, &[label], 0.0, Connectivity::Eighteen);
    let mut out: Vec<Label> = src.iter().map(|&l| if l == label { 0 } else { l }).collect();
    let root = CounterRng::new(spec.seed);

    for lesion in set.iter() {
        let mut rng = root.stream(lesion.id as u64);
        // fixed draw order per lesion
        let drop = rng.chance(spec.drop_prob);
        let dilate = rng.chance(spec.dilate_prob);
        let erode = rng.chance(spec.erode_prob);
        let j = spec.jitter_vox as i64;
        let shift = [0; 3].map(|_: i64| if j > 0 { rng.range_i64(-j, j) } else { 0 });
        if drop {
            continue;
        }
        let mut voxels: Vec<usize> = if shift == [0; 3] {
            lesion.voxels.clone()
        } else {
            lesion.voxels.iter().filter_map(|&v| neighbour(grid, v, shift)).collect()
        };
        if dilate {
            let member: HashSet<usize> = voxels.iter().copied().collect();
            let mut grown = voxels.clone();
            for &v in &voxels {
                for d in FACE {
                    if let Some(n) = neighbour(grid, v, d) {
                        if src[n] == 0 && !member.contains(&n) {
                            grown.push(n);
                        }
                    }
                }
            }
            grown.sort_unstable();
            grown.dedup();
            voxels = grown;
        }
        if erode {
            let member: HashSet<usize> = voxels.iter().copied().collect();
            let interior: Vec<usize> = voxels
                .iter()
                .copied()
                .filter(|&v| FACE.iter().all(|&d| neighbour(grid, v, d).is_some_and(|n| member.contains(&n))))
                .collect();
            if !interior.is_empty() {
                voxels = interior;
            }
        }
        for v in voxels {
            if out[v] == 0 {
                out[v] = label;
            }
        }
    }

    if spec.add_fp > 0 {
        inject_false_positives(grid, &mut out, spec, &root)?;
    }
    volume.with_labels(out)
}

fn inject_false_positives(grid: &Grid, out: &mut [Label], spec: &PerturbSpec, root: &CounterRng) -> Result<()> {
    let mut rng = root.stream(u64::MAX);
    let dims = grid.dims();
    let spacing = grid.spacing();
    let half = [0, 1, 2].map(|a| (spec.fp_radius_mm / spacing[a]).floor() as i64);
    // clearance around an injected ball, in voxels
    let margin = 2i64;
    let mut placed = 0;
    let max_attempts = 1000 * spec.add_fp;
    for _ in 0..max_attempts {
        if placed == spec.add_fp {
            break;
        }
        let reach = [0, 1, 2].map(|a| half[a] + margin);
        if (0..3).any(|a| 2 * half[a] + 1 > dims[a] as i64) {
            break;
        }
        let center = [0, 1, 2].map(|a| {
            let lo = half[a];
            let hi = dims[a] as i64 - 1 - half[a];
            rng.range_i64(lo, hi)
        });
        let mut clear = true;
        'scan: for dz in -reach[2]..=reach[2] {
            for dy in -reach[1]..=reach[1] {
                for dx in -reach[0]..=reach[0] {
                    let p = [center[0] + dx, center[1] + dy, center[2] + dz];
                    if (0..3).any(|a| p[a] < 0 || p[a] >= dims[a] as i64) {
                        continue;
                    }
                    if out[grid.index(p[0] as usize, p[1] as usize, p[2] as usize)] != 0 {
                        clear = false;
                        break 'scan;
                    }
                }
            }
        }
        if !clear {
            continue;
        }
        let c = center.map(|v| v as f64);
        for i in ellipsoid_voxels(grid, c, [spec.fp_radius_mm; 3])? {
            out[i] = spec.label;
        }
        placed += 1;
    }
    if placed < spec.add_fp {
        log::warn!("placed {placed} of {} spurious lesions; no free background left", spec.add_fp);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lesion::extract_lesions;

    #[test]
    fn rng_matches_reference_splitmix() {
        // SplitMix64 reference outputs for seed 0 (state advanced by the
        // golden gamma before each output).
        let mut r = CounterRng::new(0);
        assert_eq!(r.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(r.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(r.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn rng_ranges() {
        let mut r = CounterRng::new(7);
        for _ in 0..1000 {
            let v = r.range_i64(-2, 2);
            assert!((-2..=2).contains(&v));
            let f = r.next_f64();
            assert!((0.0..1.0).contains(&f));
        }
        assert!(!r.chance(0.0));
        assert!(r.chance(1.0));
    }

    #[test]
    fn empty_spec_is_background() {
        let v = generate_phantom(&PhantomSpec::new([4, 4, 4], [1.0; 3], 1)).unwrap();
        assert!(v.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn radius_two_sphere() {
        let mut spec = PhantomSpec::new([9, 9, 9], [1.0; 3], 0);
        spec.lesions.push(LesionBlob {
            center: [4.0, 4.0, 4.0],
            radii_mm: [2.0; 3],
            label: 1,
        });
        let v = generate_phantom(&spec).unwrap();
        // lattice points within distance 2: 1 + 6 + 12 + 8 + 6
        let oracle = (-2i32..=2)
            .flat_map(|x| (-2i32..=2).flat_map(move |y| (-2i32..=2).map(move |z| x * x + y * y + z * z)))
            .filter(|&d| d <= 4)
            .count();
        let count = v.labels().iter().filter(|&&l| l == 1).count();
        assert_eq!(count, oracle);
        assert!((27..=33).contains(&count));
        assert_eq!(extract_lesions(&v, 1, 0.0).len(), 1);
    }

    #[test]
    fn out_of_bounds_rejected() {
        let mut spec = PhantomSpec::new([5, 5, 5], [1.0; 3], 0);
        spec.lesions.push(LesionBlob {
            center: [1.0, 2.0, 2.0],
            radii_mm: [2.0; 3],
            label: 1,
        });
        assert!(matches!(generate_phantom(&spec), Err(Error::OutOfBounds(_))));
    }

    #[test]
    fn later_entries_overwrite() {
        let mut spec = PhantomSpec::new([6, 6, 6], [1.0; 3], 0);
        spec.anatomy.push(Region::Box {
            min: [0, 0, 0],
            max: [5, 5, 5],
            label: 2,
        });
        spec.lesions.push(LesionBlob {
            center: [3.0, 3.0, 3.0],
            radii_mm: [1.0; 3],
            label: 1,
        });
        let v = generate_phantom(&spec).unwrap();
        assert_eq!(v.get(3, 3, 3), 1);
        assert_eq!(v.get(0, 0, 0), 2);
        assert_eq!(v.labels().iter().filter(|&&l| l == 1).count(), 7);
    }

    #[test]
    fn spec_json_accepts_scalar_radius() {
        let spec: PhantomSpec = serde_json::from_str(
            r#"{"dims":[20,20,20],"seed":3,"lesions":[{"center":[4,4,4],"radius_mm":1.5}],
                "anatomy":[{"shape":"box","min":[0,0,0],"max":[1,1,1],"label":5}],
                "random_lesions":{"count":2,"radius_mm":[1.0,1.2]}}"#,
        )
        .unwrap();
        assert_eq!(spec.lesions[0].radii_mm, [1.5; 3]);
        assert_eq!(spec.lesions[0].label, 1);
        assert_eq!(spec.spacing, [1.0; 3]);
        assert_eq!(spec.resolved_lesions().unwrap().len(), 3);
    }

    #[test]
    fn random_population_is_separated_and_deterministic() {
        let mut spec = PhantomSpec::new([40, 40, 40], [1.0; 3], 11);
        spec.random_lesions = Some(RandomLesions {
            count: 12,
            radius_mm: [1.5, 3.0],
            label: 1,
            min_gap_vox: 2,
        });
        let a = generate_phantom(&spec).unwrap();
        assert_eq!(a, generate_phantom(&spec).unwrap());
        assert_eq!(extract_lesions(&a, 1, 0.0).len(), 12);
    }

    fn population(seed: u64) -> LabelVolume {
        let mut spec = PhantomSpec::new([32, 32, 32], [1.0; 3], seed);
        spec.random_lesions = Some(RandomLesions {
            count: 8,
            radius_mm: [1.5, 2.5],
            label: 1,
            min_gap_vox: 3,
        });
        generate_phantom(&spec).unwrap()
    }

    #[test]
    fn perturb_identity_and_drop_all() {
        let v = population(5);
        assert_eq!(perturb(&v, &PerturbSpec::default()).unwrap(), v);
        let gone = perturb(&v, &PerturbSpec { drop_prob: 1.0, ..Default::default() }).unwrap();
        assert!(gone.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn add_fp_on_empty_volume() {
        let empty = LabelVolume::empty(Grid::with_spacing([24, 24, 24], [1.0; 3]).unwrap());
        let out = perturb(&empty, &PerturbSpec { add_fp: 3, seed: 9, ..Default::default() }).unwrap();
        assert_eq!(extract_lesions(&out, 1, 3.0).len(), 3);
    }

    #[test]
    fn dilation_only_is_superset() {
        let v = population(6);
        let d = perturb(&v, &PerturbSpec { dilate_prob: 1.0, ..Default::default() }).unwrap();
        for (a, b) in v.labels().iter().zip(d.labels()) {
            if *a == 1 {
                assert_eq!(*b, 1);
            }
        }
        assert!(d.labels().iter().filter(|&&l| l == 1).count() > v.labels().iter().filter(|&&l| l == 1).count());
    }

    #[test]
    fn erosion_and_jitter_change_shapes() {
        let v = population(7);
        let e = perturb(&v, &PerturbSpec { erode_prob: 1.0, ..Default::default() }).unwrap();
        assert!(e.labels().iter().filter(|&&l| l == 1).count() < v.labels().iter().filter(|&&l| l == 1).count());
        let j = perturb(&v, &PerturbSpec { jitter_vox: 2, seed: 1, ..Default::default() }).unwrap();
        assert_ne!(j, v);
        assert_eq!(j, perturb(&v, &PerturbSpec { jitter_vox: 2, seed: 1, ..Default::default() }).unwrap());
    }

    #[test]
    fn invalid_probabilities() {
        let v = population(1);
        assert!(perturb(&v, &PerturbSpec { drop_prob: 1.5, ..Default::default() }).is_err());
    }
}
