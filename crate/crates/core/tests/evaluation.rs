use catbn::data::{generate_synthetic, synthetic_truth};
use catbn::evaluation::{cross_validate, emit_report, EvalConfig};
use catbn::zoo::{ModelId, TestBlueprint};

fn small_config(models: Vec<ModelId>) -> EvalConfig {
    let mut cfg = EvalConfig { folds: 5, seed: 7, models, max_steps: Some(10), ..Default::default() };
    cfg.em.max_iterations = 30;
    cfg
}

#[test]
fn cross_validation_reports_are_well_formed() {
    let bp = TestBlueprint::reference();
    let truth = synthetic_truth(ModelId::B3Plus, &bp, 1).unwrap();
    let ds = generate_synthetic(&truth, &bp, 60, 2).unwrap().dataset;
    let t = std::time::Instant::now();
    let report = cross_validate(&ds, &bp, &small_config(vec![ModelId::B2, ModelId::B3Plus])).unwrap();
    eprintln!("elapsed {:?}", t.elapsed());
    for m in &report.models {
        assert!(m.is_complete());
        assert_eq!(m.students, 60);
        assert_eq!(m.sr_curve.len(), 11);
        assert!(m.sr_curve.iter().all(|x| (0.0..=1.0).contains(x)));
        for k in 0..10 {
            let col: f64 = m.occurrence.iter().map(|row| row[k]).sum();
            assert!((col - 1.0).abs() < 1e-9, "step {k} column sums to {col}");
        }
        eprintln!("{} {:?}", m.model, m.sr_curve);
    }
    let dir = tempfile::tempdir().unwrap();
    emit_report(&report, dir.path()).unwrap();
    let sr = std::fs::read_to_string(dir.path().join("sr_curves.csv")).unwrap();
    assert!(sr.starts_with("model,step,sr\n"));
    assert_eq!(sr.lines().count(), 1 + 2 * 11);
    assert!(dir.path().join("occurrence_b3plus.csv").exists());
}

#[test]
fn points_model_on_boolean_data_is_rejected() {
    let bp = TestBlueprint::reference();
    let truth = synthetic_truth(ModelId::B2, &bp, 1).unwrap();
    let ds = generate_synthetic(&truth, &bp, 20, 2).unwrap().dataset;
    assert!(cross_validate(&ds, &bp, &small_config(vec![ModelId::N2])).is_err());
    let mut cfg = small_config(vec![ModelId::B2]);
    cfg.folds = 21;
    assert!(cross_validate(&ds, &bp, &cfg).is_err());
    cfg.folds = 1;
    assert!(cross_validate(&ds, &bp, &cfg).is_err());
    // The truth has no information nodes, so those columns are empty.
    assert!(cross_validate(&ds, &bp, &small_config(vec![ModelId::B2Plus])).is_err());
}

#[test]
fn fold_cache_is_reused() {
    let bp = TestBlueprint::reference();
    let truth = synthetic_truth(ModelId::B2, &bp, 3).unwrap();
    let ds = generate_synthetic(&truth, &bp, 30, 4).unwrap().dataset;
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(vec![ModelId::B2]);
    cfg.cache_dir = Some(dir.path().to_path_buf());
    let a = cross_validate(&ds, &bp, &cfg).unwrap();
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 5);
    let b = cross_validate(&ds, &bp, &cfg).unwrap();
    assert_eq!(a, b);
}
