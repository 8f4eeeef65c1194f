use dicke_sim::detection::{synthesize_single_mode_off, synthesize_single_mode_records, DetectionConfig, RecordKind};
use dicke_sim::oracles::{fidelity, rho_plus};
use dicke_sim::tomography::reconstruct_from_records;

fn mean_fidelity(shots: usize) -> f64 {
    let target = rho_plus(3).unwrap();
    let seeds = [11, 12, 13, 14];
    let total: f64 = seeds
        .iter()
        .map(|&seed| {
            let cfg = DetectionConfig { rng_seed: seed, ..Default::default() };
            let sig = synthesize_single_mode_records(&target, shots, &cfg, RecordKind::Signal).unwrap();
            let off = synthesize_single_mode_off(shots, 3, &cfg).unwrap();
            let fit = reconstruct_from_records(&sig, &off, 3).unwrap();
            fidelity(&fit.rho, &target).unwrap()
        })
        .sum();
    total / seeds.len() as f64
}

#[test]
fn fidelity_improves_with_shots() {
    let f: Vec<f64> = [1_000, 10_000, 100_000].into_iter().map(mean_fidelity).collect();
    assert!(f[0] < f[1] && f[1] < f[2], "{f:?}");
    assert!(f[2] > 0.99, "{f:?}");
}
