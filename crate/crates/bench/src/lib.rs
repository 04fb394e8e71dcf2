//! Fixture builders shared by the benchmarks.

use lesionbench_core::{generate_phantom, perturb, LabelVolume, PerturbSpec, PhantomSpec, RandomLesions};

/// A cubic phantom with `count` random lesions of label 1.
pub fn lesion_phantom(side: usize, count: usize, seed: u64) -> LabelVolume {
    let mut spec = PhantomSpec::new([side; 3], [1.0; 3], seed);
    spec.random_lesions = Some(RandomLesions {
        count,
        radius_mm: [1.5, 3.0],
        label: 1,
        min_gap_vox: 2,
    });
    generate_phantom(&spec).expect("phantom fits the grid")
}

/// A noisy copy of `ground`, as a method prediction.
pub fn noisy_prediction(ground: &LabelVolume, seed: u64) -> LabelVolume {
    let spec = PerturbSpec {
        seed,
        dilate_prob: 0.3,
        erode_prob: 0.2,
        drop_prob: 0.2,
        add_fp: 5,
        jitter_vox: 1,
        ..Default::default()
    };
    perturb(ground, &spec).expect("valid perturbation")
}
