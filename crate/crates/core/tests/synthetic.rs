use mmfuse::fusion::{run_fusion_experiment, ExperimentConfig};
use mmfuse::synth::{generate_synthetic, SyntheticSpec};

#[test]
fn null_signal_baselines_sit_at_chance() {
    let seeds = 10;
    let mut means = [0.0; 3];
    for s in 0..seeds {
        let spec = SyntheticSpec { complementarity: 0.0, seed: 100 + s, ..SyntheticSpec::default() };
        let cohort = generate_synthetic(&spec).unwrap();
        let report = run_fusion_experiment(&cohort.bundle().unwrap(), &cohort.labels, &ExperimentConfig::standard(s)).unwrap();
        for (m, b) in means.iter_mut().zip(&report.baselines) {
            *m += b.report.summary.balanced_accuracy / seeds as f64;
        }
    }
    for (i, m) in means.iter().enumerate() {
        assert!((m - 0.5).abs() <= 0.05, "modality {i} mean balanced accuracy {m} under pure noise");
    }
}

#[test]
fn prevalence_and_missingness_follow_the_settings() {
    let spec = SyntheticSpec { patients: 1000, missing: [0.0, 0.25, 0.5], seed: 5, ..SyntheticSpec::default() };
    let cohort = generate_synthetic(&spec).unwrap();
    let positives = cohort.labels.labels.iter().filter(|&&l| l).count();
    assert_eq!(positives, 770);
    assert_eq!(cohort.tables[0].len(), 1000);
    let rate = |i: usize| 1.0 - cohort.tables[i].len() as f64 / 1000.0;
    assert!((rate(1) - 0.25).abs() < 0.05, "radiology missing rate {}", rate(1));
    assert!((rate(2) - 0.5).abs() < 0.05, "histology missing rate {}", rate(2));
    for (t, d) in cohort.tables.iter().zip(spec.dims) {
        assert_eq!(t.width(), d);
    }
}

#[test]
fn same_seed_same_cohort() {
    let spec = SyntheticSpec { patients: 50, dims: [4, 5, 6], seed: 9, ..SyntheticSpec::default() };
    let a = generate_synthetic(&spec).unwrap();
    let b = generate_synthetic(&spec).unwrap();
    assert_eq!(a.labels, b.labels);
    for (x, y) in a.tables.iter().zip(&b.tables) {
        assert_eq!(x, y);
    }
    let c = generate_synthetic(&SyntheticSpec { seed: 10, ..spec }).unwrap();
    assert_ne!(a.tables[0], c.tables[0]);
}
