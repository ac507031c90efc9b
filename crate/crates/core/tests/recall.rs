use epnn_core::arch::{assemble_default, ArchKind};
use epnn_core::datagen::{generate_dataset, GenConfig};
use epnn_core::mech::strain_invariants;
use epnn_core::recall::{compare, ground_truth, simulate, Driver};
use epnn_core::train::{fit_and_train, split, SampleSet, TrainConfig};
use epnn_core::wg::{IntegratorTolerances, WgParams};

fn small_epnn() -> epnn_core::arch::Model {
    let gen = GenConfig {
        tests_per_condition: 2,
        max_steps: 20,
        ..GenConfig::desk_scale(3)
    };
    let ds = generate_dataset(&gen).unwrap();
    let cfg = TrainConfig {
        epochs: 20,
        ..TrainConfig::default()
    };
    let sp = split(&ds, &cfg).unwrap();
    let model = assemble_default(ArchKind::Epnn, 0).unwrap();
    fit_and_train(model, &SampleSet::from_dataset(&sp.train), &SampleSet::from_dataset(&sp.cv), &cfg, "x")
        .unwrap()
        .checkpoint
        .model
}

#[test]
fn recall_is_deterministic() {
    let model = small_epnn();
    let driver = Driver::undrained(8e-4, 30).unwrap();
    let a = simulate(&model, &driver, 225.0, 0.62).unwrap();
    let b = simulate(&model, &driver, 225.0, 0.62).unwrap();
    assert_eq!(a.rows, b.rows);
    let c = compare(&a, &b);
    assert!(c.max_errors.iter().all(|&e| e == 0.0));
}

#[test]
fn truth_rerun_compares_to_zero() {
    let driver = Driver::axisymmetric(-1000.0, 1e-6, 40).unwrap();
    let run = || ground_truth(&driver, 375.0, 0.64, &WgParams::default(), &IntegratorTolerances::default()).unwrap();
    let c = compare(&run(), &run());
    assert_eq!(c.n, 41);
    assert!(!c.length_mismatch);
    assert!(c.max_errors.iter().all(|&e| e == 0.0));
}

#[test]
fn undrained_unit_step_has_isochoric_increments_of_known_shear() {
    let driver = Driver::axisymmetric(-2.0, 1e-3, 5).unwrap();
    for k in 0..5 {
        let d = driver.increment(k);
        assert_eq!(d.sum(), 0.0);
        assert!((strain_invariants(&d).gamma - 2e-3).abs() < 1e-15);
        assert!(d[2] > 0.0);
    }
}

#[test]
fn near_uniaxial_driver_is_axial_dominant() {
    let d = Driver::axisymmetric_with_norm(-1000.0, 8e-4, 1).unwrap().increment(0);
    assert!((d.norm() - 8e-4).abs() < 1e-18);
    assert!(d[2] > 0.0 && d[2] > 999.0 * d[0].abs());
}

#[test]
fn model_and_truth_trajectories_share_the_initial_row() {
    let model = small_epnn();
    let driver = Driver::undrained(8e-4, 10).unwrap();
    let m = simulate(&model, &driver, 225.0, 0.62).unwrap();
    let t = ground_truth(&driver, 225.0, 0.62, &WgParams::default(), &IntegratorTolerances::default()).unwrap();
    assert_eq!(m.rows[0], t.rows[0]);
    assert_eq!(compare(&m, &t).errors[0], [0.0; 5]);
    for row in &t.rows {
        assert!((row.e - 0.62).abs() < 1e-14);
    }
}
