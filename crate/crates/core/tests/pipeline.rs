use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;

use mmfuse::config::{ProfileName, RunConfig};
use mmfuse::curate::RuleSpec;
use mmfuse::features::{ingest_features, read_labels};
use mmfuse::fusion::{run_fusion_experiment, ModalityKind};
use mmfuse::io;
use mmfuse::pipeline::{MetricsFile, Part, Pipeline, ReportFile, Stamped};
use mmfuse::seed;
use mmfuse::synth::{generate_synthetic, SyntheticSpec};
use mmfuse::volume::{self, Volume};
use mmfuse::Error;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn strip_stamp(text: &str) -> &str {
    assert!(io::csv_hash(text).is_some(), "artifact is not stamped");
    &text[text.find('\n').unwrap() + 1..]
}

fn small_synthetic(seed: u64) -> RunConfig {
    let mut cfg = RunConfig { seed, ..RunConfig::default() };
    cfg.synthetic = SyntheticSpec { patients: 160, dims: [8, 16, 24], ..SyntheticSpec::default() };
    cfg.widths = [8, 16, 24];
    cfg
}

#[test]
fn preprocess_then_ehr_embeddings() {
    let out = tempfile::tempdir().unwrap();
    let cfg = RunConfig::load(&fixture("clinical_config.json")).unwrap();
    let p = Pipeline::new(cfg, Some(out.path().to_path_buf())).unwrap();
    p.preprocess().unwrap();

    let matrix_path = p.dir("preprocess").join("matrix.csv");
    let text = fs::read_to_string(&matrix_path).unwrap();
    let matrix = ingest_features(strip_stamp(&text).as_bytes(), None).unwrap();
    assert_eq!(matrix.len(), 80);
    // gender one-hot drops the first category; the remaining columns are scaled scalars.
    assert_eq!(matrix.width(), 5);
    assert!(matrix.data.iter().all(|v| v.is_finite()));

    let labels = read_labels(fs::read_to_string(p.dir("preprocess").join("labels.csv")).unwrap().as_bytes()).unwrap();
    assert_eq!(labels.ids.len(), 80);
    assert_eq!(labels.labels.iter().filter(|&&l| l).count(), 52);

    let manifest = p.train_unimodal(ModalityKind::Clinical, ProfileName::Ehr, Some(&matrix_path)).unwrap();
    let dir = manifest.parent().unwrap();
    let emb_text = fs::read_to_string(dir.join("embeddings.csv")).unwrap();
    let emb = ingest_features(strip_stamp(&emb_text).as_bytes(), Some(64)).unwrap();
    assert_eq!(emb.ids, matrix.ids);
    for file in ["model.mmf", "history.csv", "probs.csv", "val_metrics.json", "result.json"] {
        assert!(dir.join(file).is_file(), "{file} missing");
    }
}

#[test]
fn filter_series_matches_golden() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.inputs.manifest = Some(fixture("series_manifest.csv"));
    let p = Pipeline::new(cfg, Some(out.path().to_path_buf())).unwrap();
    p.filter_series().unwrap();
    let got = fs::read_to_string(p.dir("filter-series").join("decisions.csv")).unwrap();
    let golden = fs::read_to_string(fixture("series_decisions.golden.csv")).unwrap();
    assert_eq!(strip_stamp(&got), golden);
    let summary = fs::read_to_string(p.dir("filter-series").join("summary.txt")).unwrap();
    assert!(summary.contains("Total original scans"));
}

#[test]
fn bundled_rules_file_is_the_default() {
    let text = fs::read_to_string(fixture("default_rules.json")).unwrap();
    assert_eq!(RuleSpec::from_json(&text).unwrap(), RuleSpec::default());
}

#[test]
fn volume_prep_matches_direct_transform() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = seed::rng(3);
    let raw = Volume::new(Array3::from_shape_simple_fn((5, 6, 7), || rand::Rng::random_range(&mut rng, -1200.0..2500.0)), "HU").unwrap();
    let (bytes, sidecar) = volume::encode_volume(&raw);
    let input = dir.path().join("scan.raw");
    fs::write(&input, bytes).unwrap();
    fs::write(dir.path().join("scan.raw.json"), serde_json::to_string(&sidecar).unwrap()).unwrap();

    let mut cfg = RunConfig::default();
    cfg.inputs.volume = Some(input.clone());
    cfg.volume.target = [3, 4, 9];
    let p = Pipeline::new(cfg.clone(), Some(dir.path().join("out"))).unwrap();
    p.volume_prep().unwrap();

    let out_sidecar = volume::Sidecar::parse(&fs::read_to_string(p.dir("volume-prep").join("volume.raw.json")).unwrap()).unwrap();
    assert_eq!(out_sidecar.shape, [3, 4, 9]);
    assert_eq!(out_sidecar.config_hash.as_deref(), Some(p.hash.as_str()));
    let got = volume::decode_volume(&fs::read(p.dir("volume-prep").join("volume.raw")).unwrap(), &out_sidecar).unwrap();

    let decoded = volume::decode_volume(&fs::read(&input).unwrap(), &sidecar).unwrap();
    let expected = volume::resample_trilinear(&volume::clip_normalize(&decoded, &cfg.volume.normalize).unwrap(), [3, 4, 9]).unwrap();
    let (want, _) = volume::encode_volume(&expected);
    assert_eq!(fs::read(p.dir("volume-prep").join("volume.raw")).unwrap(), want);
    assert_eq!(got.shape(), [3, 4, 9]);
}

#[test]
fn aggregate_pools_groups_then_patients() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("tiles.csv");
    fs::write(&input, "patient_id,group,f0,f1\nA,s1,1,2\nA,s1,3,4\nA,s2,5,6\nB,s1,-1,0\n").unwrap();
    let mut cfg = RunConfig::default();
    cfg.inputs.instances = Some(input);
    let p = Pipeline::new(cfg.clone(), Some(dir.path().join("out"))).unwrap();
    p.aggregate().unwrap();
    let text = fs::read_to_string(p.dir("aggregate").join("features.csv")).unwrap();
    let t = ingest_features(strip_stamp(&text).as_bytes(), Some(2)).unwrap();
    assert_eq!(t.get("A").unwrap().to_vec(), vec![3.5, 4.5]);
    assert_eq!(t.get("B").unwrap().to_vec(), vec![-1.0, 0.0]);

    cfg.aggregate.two_stage = false;
    let p = Pipeline::new(cfg, Some(dir.path().join("out2"))).unwrap();
    p.aggregate().unwrap();
    let text = fs::read_to_string(p.dir("aggregate").join("features.csv")).unwrap();
    let t = ingest_features(strip_stamp(&text).as_bytes(), Some(2)).unwrap();
    assert_eq!(t.get("A").unwrap().to_vec(), vec![3.0, 4.0]);
}

#[test]
fn aggregate_max_weight_selects_one_instance() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("scans.csv");
    fs::write(&input, "patient_id,group,weight,f0\nA,s1,0.2,1\nA,s1,0.9,7\nA,s2,0.5,3\n").unwrap();
    let mut cfg = RunConfig::default();
    cfg.inputs.instances = Some(input);
    cfg.aggregate.pooling = mmfuse::aggregate::Pooling::MaxWeight;
    let p = Pipeline::new(cfg, Some(dir.path().join("out"))).unwrap();
    p.aggregate().unwrap();
    let text = fs::read_to_string(p.dir("aggregate").join("features.csv")).unwrap();
    let t = ingest_features(strip_stamp(&text).as_bytes(), Some(1)).unwrap();
    assert_eq!(t.get("A").unwrap().to_vec(), vec![7.0]);
}

#[test]
fn staged_run_equals_in_memory_experiment() {
    let out = tempfile::tempdir().unwrap();
    let cfg = small_synthetic(11);
    let p = Pipeline::new(cfg.clone(), Some(out.path().to_path_buf())).unwrap();
    let (path, report) = p.run_all().unwrap();
    let on_disk: Stamped<ReportFile> = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(on_disk.body, report);
    assert_eq!(on_disk.config_hash, p.hash);

    let spec = SyntheticSpec { seed: seed::derive(cfg.seed, "synth"), ..cfg.synthetic.clone() };
    let cohort = generate_synthetic(&spec).unwrap();
    let direct = run_fusion_experiment(&cohort.bundle().unwrap(), &cohort.labels, &cfg.experiment()).unwrap();
    let direct_models: Vec<_> = direct.baselines.iter().chain(&direct.fusions).cloned().collect();
    assert_eq!(report.models, direct_models);
    assert_eq!(report.late_weights, direct.late_weights);
}

#[test]
fn evaluate_reproduces_validation_metrics() {
    let out = tempfile::tempdir().unwrap();
    let p = Pipeline::new(small_synthetic(4), Some(out.path().to_path_buf())).unwrap();
    p.synth().unwrap();
    let dir = p.train_unimodal(ModalityKind::Radiology, ProfileName::Baseline, None).unwrap();
    let dir = dir.parent().unwrap();
    let saved: Stamped<MetricsFile> = serde_json::from_str(&fs::read_to_string(dir.join("val_metrics.json")).unwrap()).unwrap();
    let features = p.dir("synth").join("radiology.csv");
    let target = out.path().join("eval.json");
    let (_, metrics) = p.evaluate(&dir.join("model.mmf"), &features, Part::Val, Some(&target)).unwrap();
    assert_eq!(metrics, saved.body);
    assert_eq!(fs::read(target).unwrap(), fs::read(dir.join("val_metrics.json")).unwrap());
}

#[test]
fn stages_name_their_missing_upstream() {
    let out = tempfile::tempdir().unwrap();
    let p = Pipeline::new(small_synthetic(0), Some(out.path().to_path_buf())).unwrap();
    let stage_of = |e: Error| match e {
        Error::MissingStage { stage, .. } => stage,
        other => panic!("expected a missing-stage error, got {other}"),
    };
    assert_eq!(stage_of(p.train_unimodal(ModalityKind::Clinical, ProfileName::Baseline, None).unwrap_err()), "synth");
    assert_eq!(stage_of(p.report().unwrap_err()), "synth");
    let missing_model = out.path().join("nope.mmf");
    let features = out.path().join("f.csv");
    fs::write(&features, "patient_id,x\nA,1\n").unwrap();
    assert_eq!(stage_of(p.evaluate(&missing_model, &features, Part::Val, None).unwrap_err()), "train-unimodal");

    p.synth().unwrap();
    assert_eq!(stage_of(p.fuse(None).unwrap_err()), "train-unimodal");
}

#[test]
fn report_rejects_foreign_artifacts_unless_forced() {
    let out = tempfile::tempdir().unwrap();
    let p = Pipeline::new(small_synthetic(2), Some(out.path().to_path_buf())).unwrap();
    p.run_all().unwrap();

    let mut other = Pipeline::new(small_synthetic(3), Some(out.path().to_path_buf())).unwrap();
    let err = other.report().unwrap_err();
    assert!(err.is_validation());
    assert!(err.to_string().contains("--force"), "{err}");
    other.force = true;
    let (_, report) = other.report().unwrap();
    assert_eq!(report.models.len(), 5);
}
