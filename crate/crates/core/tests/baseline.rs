//! Checks the committed `baseline.json` at the workspace root.

use std::path::Path;

use flowlab::data::DatasetKind;
use flowlab::manifest::BaselineManifest;

fn baseline() -> BaselineManifest {
    BaselineManifest::read(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../baseline.json")).unwrap()
}

#[test]
fn teacher_meets_its_bound_on_every_seed() {
    let b = baseline();
    assert_eq!(b.dataset, DatasetKind::EightGaussians);
    assert_eq!(b.teacher_energy_distance.len(), b.seeds.len());
    assert!(b
        .teacher_energy_distance
        .iter()
        .all(|&e| e.is_finite() && e < b.teacher_energy_distance_bound));
    assert_eq!(b.teacher_hash.len(), 64);
}

#[test]
fn fewer_steps_land_further_from_the_teacher() {
    let b = baseline();
    let mse = |id: &str| &b.endpoint_mse_bounds[id];
    for i in 0..b.seeds.len() {
        let (m8, m10, m15) = (mse("slow3-fast5")[i], mse("slow5-fast5")[i], mse("slow5-fast10")[i]);
        assert!(
            m8 > m10 && m10 > m15 && m15 > 0.0,
            "seed {}: {m8} {m10} {m15}",
            b.seeds[i]
        );
    }
}

#[test]
fn timings_are_recorded() {
    let b = baseline();
    for k in ["nfe8", "nfe10", "nfe15", "nfe50"] {
        assert!(b.wall_time_s[k] > 0.0);
    }
    assert!((b.wall_time_ratio_10_over_50 - b.wall_time_s["nfe10"] / b.wall_time_s["nfe50"]).abs() < 1e-12);
    assert!(b.distill_time_s > 0.0 && b.distill_time_s < b.distill_time_bound_s);
}
