//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use lesionbench_cli::{compare_tables, read_metric_column, run_evaluation, run_preprocess, CaseEntry, PreprocessRequest, RunManifest};
use lesionbench_core::nifti::{decode_volume, encode_volume, read_volume, write_volume_with};
use lesionbench_core::{
    apply_mask, argmax_labels, detect_one, dice, ensemble_logits, extract_lesions, extract_lesions_with,
    generate_phantom, lesion_f1, perturb, read_scalar_volume, score_case, standardize_intensities,
    wilcoxon_signed_rank, wilcoxon_with, write_label_volume, write_scalar_volume, Affine, BrainMask, ClassMap,
    Connectivity, DatumKind, DetectionParams, Endian, FailureMode, Grid, Label, LabelVolume, LogitStack,
    PairedSample, PerturbSpec, PhantomSpec, RandomLesions, Region, Samples, ScalarVolume, ScoreOptions,
    TestMethod, VolumeHeader, WilcoxonConfig,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(elapsed: Duration, budget_s: f64) -> Outcome {
    let s = elapsed.as_secs_f64();
    ensure!(s < budget_s, "took {s:.2}s, budget {budget_s}s");
    Ok(format!("{s:.2}s of {budget_s}s"))
}

// ---------- random volumes ----------

fn grid(dims: [usize; 3], spacing: [f64; 3]) -> Grid {
    Grid::with_spacing(dims, spacing).unwrap()
}

/// Paints a random ellipsoid or box of `label` into `labels`.
fn paint_blob(rng: &mut StdRng, dims: [usize; 3], labels: &mut [Label], label: Label) {
    let c = [0, 1, 2].map(|a| rng.gen_range(0.0..dims[a] as f64));
    let r = [0, 1, 2].map(|_| rng.gen_range(0.6..3.5));
    let boxy = rng.gen_bool(0.25);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [x as f64, y as f64, z as f64];
                let inside = if boxy {
                    (0..3).all(|a| (p[a] - c[a]).abs() <= r[a])
                } else {
                    (0..3).map(|a| ((p[a] - c[a]) / r[a]).powi(2)).sum::<f64>() <= 1.0
                };
                if inside {
                    labels[x + dims[0] * (y + dims[1] * z)] = label;
                }
            }
        }
    }
}

fn random_dims(rng: &mut StdRng, max: usize) -> [usize; 3] {
    [0; 3].map(|_| rng.gen_range(4..=max))
}

fn random_spacing(rng: &mut StdRng) -> [f64; 3] {
    match rng.gen_range(0..4) {
        0 => [1.0, 1.0, 1.5],
        1 => [0.5, 1.0, 1.0],
        _ => [1.0; 3],
    }
}

/// Ground truth with up to 5 blobs and a prediction of at most 5 blobs:
/// a shifted copy, a half-space clip of the ground truth, or independent
/// blobs, topped up with random ones.
fn random_pair(rng: &mut StdRng) -> (LabelVolume, LabelVolume) {
    let dims = random_dims(rng, 16);
    let g = grid(dims, random_spacing(rng));
    let n = g.n_voxels();
    let k = rng.gen_range(0..=5);
    let mut gt = vec![0; n];
    for _ in 0..k {
        paint_blob(rng, dims, &mut gt, 1);
    }
    let mut pred = vec![0; n];
    let mut budget = 5;
    match rng.gen_range(0..3) {
        0 => {
            let d = [0; 3].map(|_| rng.gen_range(-2i64..=2));
            for z in 0..dims[2] {
                for y in 0..dims[1] {
                    for x in 0..dims[0] {
                        let q = [x as i64 + d[0], y as i64 + d[1], z as i64 + d[2]];
                        if (0..3).all(|a| q[a] >= 0 && q[a] < dims[a] as i64) && gt[g.index(x, y, z)] == 1 {
                            pred[g.index(q[0] as usize, q[1] as usize, q[2] as usize)] = 1;
                        }
                    }
                }
            }
            budget -= k;
        }
        1 => {
            let normal = [0; 3].map(|_| rng.gen_range(-1.0..1.0));
            let cut = rng.gen_range(-4.0..4.0);
            let c = dims.map(|d| d as f64 / 2.0);
            for i in 0..n {
                let p = g.coords(i);
                let side: f64 = (0..3).map(|a| (p[a] as f64 - c[a]) * normal[a]).sum();
                if gt[i] == 1 && side > cut {
                    pred[i] = 1;
                }
            }
            budget -= k;
        }
        _ => {}
    }
    for _ in 0..rng.gen_range(0..=budget) {
        paint_blob(rng, dims, &mut pred, 1);
    }
    (
        LabelVolume::from_labels(g.clone(), gt).unwrap(),
        LabelVolume::from_labels(g, pred).unwrap(),
    )
}

// ---------- oracles ----------

/// Flood-fill components (18-connectivity), ordered by bounding-box minimum
/// (z, y, x) then first voxel, each returned as sorted voxel indices.
fn flood_components(dims: [usize; 3], fg: &[bool], spacing: [f64; 3], min_mm3: f64, corners: bool) -> Vec<Vec<usize>> {
    let [nx, ny, nz] = dims;
    let mut seen = vec![false; fg.len()];
    let mut comps = Vec::new();
    for start in 0..fg.len() {
        if !fg[start] || seen[start] {
            continue;
        }
        let mut comp = vec![];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(v) = queue.pop_front() {
            comp.push(v);
            let (x, y, z) = ((v % nx) as i64, ((v / nx) % ny) as i64, (v / (nx * ny)) as i64);
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let m = dx.abs() + dy.abs() + dz.abs();
                        if m == 0 || (m == 3 && !corners) {
                            continue;
                        }
                        let (qx, qy, qz) = (x + dx, y + dy, z + dz);
                        if qx < 0 || qy < 0 || qz < 0 || qx >= nx as i64 || qy >= ny as i64 || qz >= nz as i64 {
                            continue;
                        }
                        let q = qx as usize + nx * (qy as usize + ny * qz as usize);
                        if fg[q] && !seen[q] {
                            seen[q] = true;
                            queue.push_back(q);
                        }
                    }
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    let vv = spacing[0] * spacing[1] * spacing[2];
    comps.retain(|c| c.len() as f64 * vv >= min_mm3 * (1.0 - 1e-9));
    let key = |c: &Vec<usize>| {
        let mut m = [usize::MAX; 3];
        for &v in c {
            let p = [v % nx, (v / nx) % ny, v / (nx * ny)];
            for a in 0..3 {
                m[a] = m[a].min(p[a]);
            }
        }
        (m[2], m[1], m[0], c[0])
    };
    comps.sort_by_key(key);
    comps
}

#[derive(Debug, PartialEq)]
struct OracleOutcome {
    detected: bool,
    mode: FailureMode,
    prefix: Vec<u32>,
}

/// The three-step detection rule, written out directly with integer
/// percentages.
fn oracle_detect(g: &[usize], others: &[Vec<usize>], alpha: u64, beta: u64, gamma: u64) -> OracleOutcome {
    let gset: HashSet<usize> = g.iter().copied().collect();
    let overlaps: Vec<(u32, u64)> = others
        .iter()
        .enumerate()
        .map(|(i, y)| ((i + 1) as u32, y.iter().filter(|v| gset.contains(v)).count() as u64))
        .filter(|&(_, o)| o > 0)
        .collect();
    let total: u64 = overlaps.iter().map(|o| o.1).sum();
    if total * 100 < alpha * g.len() as u64 {
        return OracleOutcome {
            detected: false,
            mode: FailureMode::Undersegmented,
            prefix: vec![],
        };
    }
    let mut ranked = overlaps.clone();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut k = 0;
    let mut sum = 0;
    while sum * 100 < gamma * total {
        sum += ranked[k].1;
        k += 1;
    }
    let prefix: Vec<u32> = ranked[..k].iter().map(|r| r.0).collect();
    let union: HashSet<usize> = prefix.iter().flat_map(|&id| others[id as usize - 1].iter().copied()).collect();
    let outside = union.iter().filter(|v| !gset.contains(v)).count() as u64;
    let over = outside * 100 > beta * union.len() as u64;
    OracleOutcome {
        detected: !over,
        mode: if over { FailureMode::Oversegmented } else { FailureMode::None },
        prefix,
    }
}

fn f1_of(s: f64, p: f64) -> f64 {
    if s + p == 0.0 {
        0.0
    } else {
        2.0 * s * p / (s + p)
    }
}

// ---------- criteria ----------

fn detection_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(101);
    let start = Instant::now();
    let (mut pairs, mut lesions_checked, mut detected, mut under, mut over) = (0, 0, 0, 0, 0);
    while pairs < 600 {
        let (gv, pv) = random_pair(&mut rng);
        let (alpha, beta, gamma) = if rng.gen_bool(0.7) {
            (10, 70, 65)
        } else {
            (rng.gen_range(1..=50), rng.gen_range(10..=100), rng.gen_range(1..=100))
        };
        let params = DetectionParams {
            alpha_pct: alpha as f64,
            beta_pct: beta as f64,
            gamma_pct: gamma as f64,
            ..Default::default()
        };
        let spacing = gv.grid().spacing();
        let fg = |v: &LabelVolume| v.labels().iter().map(|&l| l == 1).collect::<Vec<_>>();
        let gc = flood_components(gv.dims(), &fg(&gv), spacing, 3.0, false);
        let pc = flood_components(gv.dims(), &fg(&pv), spacing, 3.0, false);

        let report = lesion_f1(&gv, &pv, 1, &params).map_err(|e| e.to_string())?;
        let gset = extract_lesions(&gv, 1, 3.0);
        let pset = extract_lesions(&pv, 1, 3.0);
        for (side, comps, others, outcomes, set, other_set) in [
            ("gt", &gc, &pc, &report.outcomes_gt, &gset, &pset),
            ("pred", &pc, &gc, &report.outcomes_pred, &pset, &gset),
        ] {
            ensure!(comps.len() == outcomes.len(), "pair {pairs}: {side} lesion count {} vs oracle {}", outcomes.len(), comps.len());
            for (i, comp) in comps.iter().enumerate() {
                let lesion = &set.lesions()[i];
                ensure!(&lesion.voxels == comp, "pair {pairs}: {side} lesion {} voxels differ", i + 1);
                let want = oracle_detect(comp, others, alpha, beta, gamma);
                for got in [outcomes[i].clone(), detect_one(lesion, other_set, &params)] {
                    ensure!(
                        got.detected == want.detected && got.failure_mode == want.mode && got.contributing_pred_ids == want.prefix,
                        "pair {pairs}: {side} lesion {}: got {:?}, oracle {:?}",
                        i + 1,
                        (got.detected, got.failure_mode, &got.contributing_pred_ids),
                        want
                    );
                }
                lesions_checked += 1;
                match want.mode {
                    FailureMode::None => detected += 1,
                    FailureMode::Undersegmented => under += 1,
                    FailureMode::Oversegmented => over += 1,
                }
            }
        }
        let rate = |comps: &Vec<Vec<usize>>, others: &Vec<Vec<usize>>| {
            let hits = comps.iter().filter(|c| oracle_detect(c, others, alpha, beta, gamma).detected).count();
            (!comps.is_empty()).then(|| hits as f64 / comps.len() as f64)
        };
        let (s, p) = (rate(&gc, &pc), rate(&pc, &gc));
        let (es, ep, ef) = match (s, p) {
            (None, None) => (1.0, 1.0, 1.0),
            (Some(s), Some(p)) => (s, p, f1_of(s, p)),
            (s, p) => (s.unwrap_or(0.0), p.unwrap_or(0.0), 0.0),
        };
        ensure!(
            report.sensitivity == es && report.precision == ep && report.f1 == ef,
            "pair {pairs}: scores {:?} vs oracle {:?}",
            (report.sensitivity, report.precision, report.f1),
            (es, ep, ef)
        );
        pairs += 1;
    }
    let t = within(start.elapsed(), 60.0)?;
    ensure!(detected > 0 && under > 0 && over > 0, "rule branches not all exercised: {detected}/{under}/{over}");
    Ok(format!("{pairs} pairs, {lesions_checked} lesions ({detected} detected, {under} under, {over} over), {t}"))
}

fn connectivity_fidelity() -> Outcome {
    let mut rng = StdRng::seed_from_u64(202);
    let start = Instant::now();
    let mut total_components = 0;
    for case in 0..600 {
        let dims = [0; 3].map(|_| rng.gen_range(1..=12));
        let n: usize = dims.iter().product();
        let density = rng.gen_range(0.05..0.5);
        let labels: Vec<Label> = (0..n).map(|_| rng.gen_bool(density) as Label).collect();
        let g = grid(dims, [1.0; 3]);
        let v = LabelVolume::from_labels(g, labels.clone()).unwrap();
        let fg: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        let want = flood_components(dims, &fg, [1.0; 3], 0.0, false);
        let got = extract_lesions(&v, 1, 0.0);
        ensure!(got.len() == want.len(), "volume {case}: {} components vs oracle {}", got.len(), want.len());
        for (l, w) in got.iter().zip(&want) {
            ensure!(&l.voxels == w, "volume {case}: component {} differs", l.id);
        }
        // 26-connectivity against the corner-including oracle
        let got26 = extract_lesions_with(&v, &[1], 0.0, Connectivity::TwentySix);
        let want26 = flood_components(dims, &fg, [1.0; 3], 0.0, true);
        ensure!(got26.len() == want26.len(), "volume {case}: 26-connected count differs");
        total_components += want.len();
    }
    let g = grid([2, 2, 2], [1.0; 3]);
    let mut corner = vec![0; 8];
    corner[0] = 1;
    corner[7] = 1;
    let n = extract_lesions(&LabelVolume::from_labels(g, corner).unwrap(), 1, 0.0).len();
    ensure!(n == 2, "corner neighbours gave {n} components");
    let t = within(start.elapsed(), 30.0)?;
    Ok(format!("600 volumes, {total_components} components, corner case 2 components, {t}"))
}

fn default_parameters() -> Outcome {
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/default_params.json");
    let golden: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&golden_path).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let p = DetectionParams::default();
    let actual = serde_json::to_value(p).map_err(|e| e.to_string())?;
    ensure!(actual == golden, "defaults {actual} differ from golden {golden}");
    ensure!(
        (p.alpha_pct, p.beta_pct, p.gamma_pct, p.min_volume_mm3) == (10.0, 70.0, 65.0, 3.0)
            && p.connectivity == Connectivity::Eighteen,
        "unexpected defaults {p:?}"
    );
    Ok("alpha 10, beta 70, gamma 65, 3 mm3, 18-connectivity match golden file".into())
}

fn dice_properties() -> Outcome {
    let mut rng = StdRng::seed_from_u64(303);
    for case in 0..100 {
        let (a, b) = random_pair(&mut rng);
        let dab = dice(&a, &b, 1).map_err(|e| e.to_string())?;
        let dba = dice(&b, &a, 1).map_err(|e| e.to_string())?;
        let (na, nb, ni) = a.labels().iter().zip(b.labels()).fold((0u64, 0u64, 0u64), |acc, (&x, &y)| {
            (acc.0 + (x == 1) as u64, acc.1 + (y == 1) as u64, acc.2 + (x == 1 && y == 1) as u64)
        });
        let oracle = if na + nb == 0 { 100.0 } else { 200.0 * ni as f64 / (na + nb) as f64 };
        ensure!((dab.percent - dba.percent).abs() <= 1e-9, "case {case}: asymmetric");
        ensure!((0.0..=100.0).contains(&dab.percent), "case {case}: out of range");
        ensure!((dab.percent - oracle).abs() <= 1e-9, "case {case}: {} vs oracle {oracle}", dab.percent);
        ensure!((dice(&a, &a, 1).unwrap().percent - 100.0).abs() <= 1e-9, "case {case}: identity");
        let complement = a.with_labels(a.labels().iter().map(|&l| (l == 0) as Label).collect()).unwrap();
        let disjoint = dice(&a, &complement, 1).unwrap().percent;
        ensure!(disjoint.abs() <= 1e-9, "case {case}: disjoint gave {disjoint}");
    }
    Ok("100 pairs: symmetry, range, identity, disjoint, set-arithmetic oracle".into())
}

fn f1_symmetry() -> Outcome {
    let mut rng = StdRng::seed_from_u64(404);
    let params = DetectionParams::default();
    for case in 0..200 {
        let (a, b) = random_pair(&mut rng);
        let ab = lesion_f1(&a, &b, 1, &params).unwrap().f1;
        let ba = lesion_f1(&b, &a, 1, &params).unwrap().f1;
        ensure!((ab - ba).abs() <= 1e-12, "case {case}: {ab} vs {ba}");
    }
    Ok("200 pairs, |F1(A,B) - F1(B,A)| <= 1e-12".into())
}

fn enumeration_p(diffs: &[f64]) -> f64 {
    let d: Vec<f64> = diffs.iter().copied().filter(|&x| x != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return 1.0;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].abs().total_cmp(&d[j].abs()));
    let mut rank = vec![0.0; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = (r + 1) as f64;
    }
    let w_plus: f64 = (0..n).filter(|&i| d[i] > 0.0).map(|i| rank[i]).sum();
    let total = (n * (n + 1) / 2) as f64;
    let w = w_plus.min(total - w_plus);
    let mut count = 0u64;
    for mask in 0u64..(1 << n) {
        let t: f64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| rank[i]).sum();
        if t <= w {
            count += 1;
        }
    }
    (2.0 * count as f64 / (1u64 << n) as f64).min(1.0)
}

/// Differences with distinct nonzero magnitudes, plus a few zeros.
fn untied_sample(rng: &mut StdRng, n: usize, zeros: usize) -> PairedSample {
    let mut mags: Vec<f64> = (1..=4 * n).map(|k| k as f64 * 0.25).collect();
    for i in (1..mags.len()).rev() {
        mags.swap(i, rng.gen_range(0..=i));
    }
    let mut diffs: Vec<f64> = mags[..n].iter().map(|&m| if rng.gen_bool(0.5) { m } else { -m }).collect();
    diffs.extend(std::iter::repeat_n(0.0, zeros));
    let b: Vec<f64> = (0..diffs.len()).map(|_| rng.gen_range(0.0..100.0f64).round()).collect();
    let a = b.iter().zip(&diffs).map(|(x, d)| x + d).collect();
    PairedSample::from_values(a, b).unwrap()
}

fn wilcoxon_exactness() -> Outcome {
    let mut rng = StdRng::seed_from_u64(505);
    let mut samples = 0;
    for n in 1..=10 {
        for _ in 0..25 {
            let zeros = rng.gen_range(0..3);
            let s = untied_sample(&mut rng, n, zeros);
            let diffs: Vec<f64> = s.values_a.iter().zip(&s.values_b).map(|(a, b)| a - b).collect();
            let r = wilcoxon_signed_rank(&s).map_err(|e| e.to_string())?;
            let want = enumeration_p(&diffs);
            ensure!(r.method == TestMethod::Exact, "n={n}: method {:?}", r.method);
            ensure!((r.p_two_sided - want).abs() <= 1e-12, "n={n}: p {} vs enumeration {want}", r.p_two_sided);
            samples += 1;
        }
    }
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let s = untied_sample(&mut rng, 15, 0);
        let exact = wilcoxon_signed_rank(&s).unwrap();
        let normal = wilcoxon_with(&s, &WilcoxonConfig { exact_max_n: 0 }).unwrap();
        ensure!(normal.method == TestMethod::NormalApprox, "forced normal path not taken");
        worst = worst.max((exact.p_two_sided - normal.p_two_sided).abs());
    }
    ensure!(worst <= 0.02, "normal approximation off by {worst} at n = 15");
    Ok(format!("{samples} samples n<=10 match enumeration to 1e-12; n=15 normal vs exact max gap {worst:.4}"))
}

fn ensembling_invariants() -> Outcome {
    let mut rng = StdRng::seed_from_u64(606);
    for case in 0..100 {
        let dims = [0; 3].map(|_| rng.gen_range(1..=6));
        let g = grid(dims, [1.0; 3]);
        let n = g.n_voxels();
        let c = rng.gen_range(2..=5);
        let k = rng.gen_range(1..=4);
        let eighths = |rng: &mut StdRng| rng.gen_range(-64..=64) as f64 / 8.0;
        let stacks: Vec<LogitStack> = (0..k)
            .map(|_| {
                let v = (0..n * c).map(|_| eighths(&mut rng)).collect();
                LogitStack::new(ScalarVolume::new(g.clone(), c, v).unwrap()).unwrap()
            })
            .collect();
        let map = ClassMap::identity(c);

        let single = ensemble_logits(&stacks[..1]).unwrap();
        ensure!(single == stacks[0], "case {case}: single-stack ensemble is not the identity");

        let mean = ensemble_logits(&stacks).unwrap();
        for (i, &m) in mean.volume().values().iter().enumerate() {
            let want = stacks.iter().map(|s| s.volume().values()[i]).sum::<f64>() / k as f64;
            ensure!((m - want).abs() <= 1e-12, "case {case}: mean {m} vs {want}");
        }

        let shift: Vec<f64> = (0..n).map(|_| eighths(&mut rng)).collect();
        let s0 = stacks[0].volume();
        let shifted: Vec<f64> = s0.values().iter().enumerate().map(|(i, v)| v + shift[i % n]).collect();
        let shifted = LogitStack::new(ScalarVolume::new(g.clone(), c, shifted).unwrap()).unwrap();
        ensure!(
            argmax_labels(&shifted, &map).unwrap() == argmax_labels(&stacks[0], &map).unwrap(),
            "case {case}: argmax changed under a per-voxel shift"
        );
    }
    Ok("100 stacks: single-stack identity, shift-invariant argmax, mean within 1e-12".into())
}

fn random_samples(rng: &mut StdRng, kind: DatumKind, n: usize) -> Samples {
    match kind {
        DatumKind::U8 => Samples::U8((0..n).map(|_| rng.gen()).collect()),
        DatumKind::I16 => Samples::I16((0..n).map(|_| rng.gen()).collect()),
        DatumKind::I32 => Samples::I32((0..n).map(|_| rng.gen()).collect()),
        DatumKind::F32 => Samples::F32((0..n).map(|_| rng.gen_range(-1e6f32..1e6)).collect()),
        DatumKind::F64 => Samples::F64((0..n).map(|_| rng.gen_range(-1e12..1e12)).collect()),
    }
}

fn payload(bytes: &[u8], header: &VolumeHeader) -> Vec<u8> {
    let len = header.n_samples() * header.datum_kind.bytes();
    bytes[bytes.len() - len..].to_vec()
}

fn nifti_round_trip(dir: &Path) -> Outcome {
    let mut rng = StdRng::seed_from_u64(707);
    let kinds = [DatumKind::U8, DatumKind::I16, DatumKind::I32, DatumKind::F32, DatumKind::F64];
    let mut gz = 0;
    for case in 0..50 {
        let kind = kinds[case % kinds.len()];
        let dims = [0; 3].map(|_| rng.gen_range(1..=7));
        let channels = if rng.gen_bool(0.3) { rng.gen_range(2..=3) } else { 1 };
        let q = |rng: &mut StdRng, lo: i32, hi: i32, div: f64| rng.gen_range(lo..=hi) as f64 / div;
        let mut m = [[0.0; 4]; 4];
        for r in 0..3 {
            for col in 0..3 {
                m[r][col] = if r == col { q(&mut rng, 2, 12, 4.0) } else { q(&mut rng, -2, 2, 8.0) };
            }
            m[r][3] = q(&mut rng, -200, 200, 2.0);
        }
        m[3][3] = 1.0;
        let g = match Grid::new(dims, Affine(m)) {
            Ok(g) => g,
            Err(e) => return Err(format!("case {case}: grid {e}")),
        };
        let mut header = VolumeHeader::for_grid(&g, channels, kind);
        if rng.gen_bool(0.3) {
            header.endian = Endian::Big;
        }
        let samples = random_samples(&mut rng, kind, header.n_samples());
        let gzip = case % 2 == 1;
        gz += gzip as usize;
        let path = dir.join(format!("rt{case}.nii{}", if gzip { ".gz" } else { "" }));
        write_volume_with(&header, &samples, &path, gzip).map_err(|e| e.to_string())?;
        let back = read_volume(&path).map_err(|e| format!("case {case}: {e}"))?;
        let h = &back.header;
        ensure!(
            h.dims == header.dims && h.channels == header.channels && h.datum_kind == kind && h.endian == header.endian,
            "case {case}: header fields differ"
        );
        ensure!(h.grid().ok().as_ref() == Some(&g), "case {case}: grid differs");
        ensure!(h.spacing == header.spacing.map(|s| s as f32 as f64), "case {case}: pixdim differs");
        ensure!(back.samples == samples, "case {case}: samples differ");
        let original = encode_volume(&header, &samples).unwrap();
        let again = encode_volume(h, &back.samples).unwrap();
        ensure!(payload(&original, &header) == payload(&again, h), "case {case}: payload bytes differ");
        ensure!(decode_volume(&original).unwrap().samples == samples, "case {case}: in-memory decode differs");
    }
    Ok(format!("50 volumes over U8/I16/I32/F32/F64, {gz} gzip, both byte orders"))
}

fn preprocessing_fixed_point(dir: &Path) -> Outcome {
    let mut rng = StdRng::seed_from_u64(808);
    let dims = [14, 12, 10];
    let g = grid(dims, [1.0; 3]);
    let n = g.n_voxels();
    let mut inside = vec![false; n];
    for z in 2..8 {
        for y in 2..10 {
            for x in 3..12 {
                inside[g.index(x, y, z)] = true;
            }
        }
    }
    let mask = BrainMask::new(g.clone(), inside.clone()).unwrap();
    let raw = ScalarVolume::new(g.clone(), 1, (0..n).map(|_| rng.gen_range(0.0..500.0)).collect()).unwrap();
    let std = standardize_intensities(&apply_mask(&raw, &mask, 0.0).unwrap(), &mask).unwrap();
    let input = apply_mask(&std, &mask, 0.0).unwrap();
    let img_path = dir.join("fixed.nii");
    write_scalar_volume(&input, &img_path).unwrap();
    let mask_path = dir.join("fixed_mask.nii");
    write_label_volume(
        &LabelVolume::from_labels(g.clone(), inside.iter().map(|&b| b as Label).collect()).unwrap(),
        &mask_path,
    )
    .unwrap();
    // the file holds f32 samples; compare against what was stored
    let stored = read_scalar_volume(&img_path).unwrap();
    let out = run_preprocess(&PreprocessRequest {
        case_id: "fixed".into(),
        images: vec![img_path],
        mask: Some(mask_path),
        output_dir: dir.join("preproc"),
        spacing_mm: 1.0,
    })
    .map_err(|e| format!("{e:#}"))?;
    let result = read_scalar_volume(&out[0]).unwrap();
    ensure!(result.dims() == stored.dims(), "dims changed");
    let worst = result
        .values()
        .iter()
        .zip(stored.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure!(worst <= 1e-5, "fixed point violated by {worst}");

    let mut worst_mu: f64 = 0.0;
    let mut worst_sigma: f64 = 0.0;
    for _ in 0..50 {
        let dims = [0; 3].map(|_| rng.gen_range(3..=10));
        let g = grid(dims, [1.0; 3]);
        let n = g.n_voxels();
        let (a, b) = (rng.gen_range(0.1..1000.0), rng.gen_range(-500.0..500.0));
        let vals = (0..n).map(|_| a * rng.gen::<f64>() + b).collect();
        let img = ScalarVolume::new(g.clone(), 1, vals).unwrap();
        let m = BrainMask::new(g.clone(), (0..n).map(|_| rng.gen_bool(0.7)).collect()).unwrap();
        if m.count() < 2 {
            continue;
        }
        let s = standardize_intensities(&img, &m).unwrap();
        let inside: Vec<f64> = s.values().iter().zip(m.inside()).filter(|(_, &k)| k).map(|(v, _)| *v).collect();
        let mu = inside.iter().sum::<f64>() / inside.len() as f64;
        let sigma = (inside.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / inside.len() as f64).sqrt();
        worst_mu = worst_mu.max(mu.abs());
        worst_sigma = worst_sigma.max((sigma - 1.0).abs());
    }
    ensure!(worst_mu < 1e-6 && worst_sigma < 1e-6, "standardization off: |mu| {worst_mu}, |sigma-1| {worst_sigma}");
    Ok(format!("fixed point within {worst:.1e}; 50 images |mu| <= {worst_mu:.1e}, |sigma-1| <= {worst_sigma:.1e}"))
}

fn anatomy_phantom(side: usize, lesions: usize, seed: u64) -> LabelVolume {
    let mut spec = PhantomSpec::new([side; 3], [1.0; 3], seed);
    // 17 slabs of anatomy labels 2..=18 under the lesions
    let slab = side / 17;
    for k in 0..17 {
        spec.anatomy.push(Region::Box {
            min: [0, 0, k * slab],
            max: [side - 1, side - 1, ((k + 1) * slab).min(side) - 1],
            label: (k + 2) as Label,
        });
    }
    spec.random_lesions = Some(RandomLesions {
        count: lesions,
        radius_mm: [1.2, 2.5],
        label: 1,
        min_gap_vox: 1,
    });
    generate_phantom(&spec).unwrap()
}

fn performance(dir: &Path) -> Outcome {
    let ground = anatomy_phantom(256, 2000, 1);
    let pred = perturb(
        &ground,
        &PerturbSpec {
            seed: 2,
            dilate_prob: 0.3,
            erode_prob: 0.2,
            drop_prob: 0.2,
            add_fp: 50,
            jitter_vox: 1,
            ..Default::default()
        },
    )
    .unwrap();
    let options = ScoreOptions {
        dice_labels: (2..=18).collect(),
        ..Default::default()
    };
    let start = Instant::now();
    let report = score_case("big", "m", &ground, &pred, &options).unwrap();
    let single = start.elapsed();
    ensure!(report.dice_table.len() == 18, "dice table has {} labels", report.dice_table.len());
    ensure!(report.lesion.n_gt >= 1900, "only {} ground lesions", report.lesion.n_gt);
    let t1 = within(single, 5.0)?;

    // 32-case cohort
    let cohort = dir.join("perf");
    std::fs::create_dir_all(&cohort).unwrap();
    let mut cases = Vec::new();
    for i in 0..32u64 {
        let gt = anatomy_phantom(128, 120, 100 + i);
        let pr = perturb(&gt, &PerturbSpec { seed: i, drop_prob: 0.2, dilate_prob: 0.3, add_fp: 3, ..Default::default() }).unwrap();
        let (gp, pp) = (cohort.join(format!("gt{i}.nii.gz")), cohort.join(format!("pred{i}.nii.gz")));
        write_label_volume(&gt, &gp).unwrap();
        write_label_volume(&pr, &pp).unwrap();
        cases.push(case_entry(&format!("case{i:02}"), gp, [("m".to_string(), pp)]));
    }
    let mut manifest = manifest_for(cases, cohort.join("out"));
    manifest.dice_labels = (2..=18).collect();
    let start = Instant::now();
    let outcome = run_evaluation(&manifest, 8).map_err(|e| format!("{e:#}"))?;
    let cohort_t = start.elapsed();
    ensure!(outcome.errors.is_empty(), "cohort errors: {:?}", outcome.errors);
    let t2 = within(cohort_t, 60.0)?;
    Ok(format!(
        "256^3 pair with {} lesions and 18 labels: {t1}; 32 cases of 128^3 with 8 jobs: {t2}",
        report.lesion.n_gt
    ))
}

fn case_entry(id: &str, gt: PathBuf, preds: impl IntoIterator<Item = (String, PathBuf)>) -> CaseEntry {
    CaseEntry {
        case_id: id.to_string(),
        gt_path: gt,
        pred_paths: preds.into_iter().collect(),
        pred_path: None,
        mask_path: None,
        logit_paths: vec![],
        rater_paths: BTreeMap::new(),
    }
}

fn manifest_for(cases: Vec<CaseEntry>, out: PathBuf) -> RunManifest {
    let mut m: RunManifest = serde_json::from_str(r#"{"cases":[]}"#).unwrap();
    m.cases = cases;
    m.output_dir = out;
    m
}

fn end_to_end(dir: &Path) -> Outcome {
    let root = dir.join("cohort");
    std::fs::create_dir_all(&root).unwrap();
    let methods = [("method", 0.3, 2usize), ("drop10", 0.1, 2), ("drop50", 0.5, 2)];
    let mut cases = Vec::new();
    for i in 0..50u64 {
        let mut spec = PhantomSpec::new([48; 3], [1.0; 3], 1000 + i);
        spec.random_lesions = Some(RandomLesions {
            count: 20,
            radius_mm: [1.5, 3.0],
            label: 1,
            min_gap_vox: 2,
        });
        let gt = generate_phantom(&spec).unwrap();
        let gp = root.join(format!("gt{i}.nii.gz"));
        write_label_volume(&gt, &gp).unwrap();
        let mut preds = Vec::new();
        for (k, (name, drop, fp)) in methods.iter().enumerate() {
            let p = perturb(
                &gt,
                &PerturbSpec {
                    seed: i * 10 + k as u64,
                    drop_prob: *drop,
                    add_fp: *fp,
                    ..Default::default()
                },
            )
            .unwrap();
            let pp = root.join(format!("{name}{i}.nii.gz"));
            write_label_volume(&p, &pp).unwrap();
            preds.push((name.to_string(), pp));
        }
        cases.push(case_entry(&format!("case{i:02}"), gp, preds));
    }
    let manifest = manifest_for(cases, root.join("out"));
    let outcome = run_evaluation(&manifest, 4).map_err(|e| format!("{e:#}"))?;
    ensure!(outcome.errors.is_empty(), "errors: {:?}", outcome.errors);
    let sens: Vec<f64> = outcome
        .reports
        .iter()
        .filter(|r| r.method == "method")
        .map(|r| r.lesion.sensitivity)
        .collect();
    ensure!(sens.len() == 50, "{} method reports", sens.len());
    let mean_sens = sens.iter().sum::<f64>() / 50.0;
    ensure!((mean_sens - 0.7).abs() <= 0.1, "mean sensitivity {mean_sens}");

    let csv = root.join("out/cases.csv");
    let a = read_metric_column(&csv, "f1", Some("drop10")).map_err(|e| format!("{e:#}"))?;
    let b = read_metric_column(&csv, "f1", Some("drop50")).map_err(|e| format!("{e:#}"))?;
    let cmp = compare_tables(&a, &b, "f1").map_err(|e| format!("{e:#}"))?;
    ensure!(cmp.mean_a > cmp.mean_b, "drop 0.1 not better: {} vs {}", cmp.mean_a, cmp.mean_b);
    ensure!(cmp.p < 0.05, "p = {}", cmp.p);
    Ok(format!(
        "50 cases: mean sensitivity {mean_sens:.3}; drop 0.1 vs 0.5 F1 {:.3} vs {:.3}, p = {:.2e} ({:?})",
        cmp.mean_a, cmp.mean_b, cmp.p, cmp.method
    ))
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let d = dir.path();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("detection rule matches brute-force oracle", Box::new(detection_oracle)),
        ("connectivity matches flood fill", Box::new(connectivity_fidelity)),
        ("default parameters pinned by golden file", Box::new(default_parameters)),
        ("Dice properties", Box::new(dice_properties)),
        ("lesion F1 symmetry", Box::new(f1_symmetry)),
        ("Wilcoxon exact and normal paths", Box::new(wilcoxon_exactness)),
        ("ensembling invariants", Box::new(ensembling_invariants)),
        ("NIfTI round trip", Box::new(move || nifti_round_trip(d))),
        ("preprocessing fixed point", Box::new(move || preprocessing_fixed_point(d))),
        ("performance budgets", Box::new(move || performance(d))),
        ("end-to-end plausibility", Box::new(move || end_to_end(d))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS [{:02}] {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL [{:02}] {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} acceptance criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
