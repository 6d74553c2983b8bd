use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;

use mmfuse::curate::{classify, summarize, Modality, RuleSet, SeriesRecord};
use mmfuse::metrics::{self, ConfusionMatrix};
use mmfuse::neural::{train, MlpModel, Profile};
use mmfuse::resample::{self, ResamplePlan};
use mmfuse::seed;
use mmfuse::synth::{generate_synthetic, SyntheticSpec};

fn scored_sample() -> impl Strategy<Value = (Vec<bool>, Vec<f64>)> {
    (4usize..80).prop_flat_map(|n| {
        (
            prop::collection::vec(any::<bool>(), n).prop_filter("both classes", |y| y.contains(&true) && y.contains(&false)),
            prop::collection::vec(prop_oneof![0.0..1.0f64, (0u8..5).prop_map(|k| k as f64 / 4.0)], n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_ignore_sample_order((y, s) in scored_sample(), shuffle in any::<u64>()) {
        let mut order: Vec<usize> = (0..y.len()).collect();
        order.shuffle(&mut seed::rng(shuffle));
        let y2: Vec<bool> = order.iter().map(|&i| y[i]).collect();
        let s2: Vec<f64> = order.iter().map(|&i| s[i]).collect();
        let a = metrics::evaluate(&y, &s, 0.5).unwrap();
        let b = metrics::evaluate(&y2, &s2, 0.5).unwrap();
        prop_assert_eq!(a.confusion, b.confusion);
        prop_assert_eq!(&a.summary, &b.summary);
        prop_assert_eq!(a.roc_auc, b.roc_auc);
        prop_assert_eq!(a.avg_precision, b.avg_precision);
    }

    #[test]
    fn f1_is_harmonic_mean_of_reported_precision_and_recall(tp in 0usize..50, fp in 0usize..50, tn in 0usize..50, fn_ in 0usize..50) {
        let s = metrics::summary_metrics(&ConfusionMatrix { tp, fp, tn, fn_ });
        if s.precision + s.recall > 0.0 {
            let h = 2.0 * s.precision * s.recall / (s.precision + s.recall);
            prop_assert!((s.f1 - h).abs() <= 1e-12);
        } else {
            prop_assert_eq!(s.f1, 0.0);
        }
    }

    #[test]
    fn auc_survives_monotone_transforms((y, s) in scored_sample()) {
        let base = metrics::roc_curve(&y, &s).unwrap().auc.unwrap();
        let squashed: Vec<f64> = s.iter().map(|v| (3.0 * v - 1.0).tanh()).collect();
        let cubed: Vec<f64> = s.iter().map(|v| v * v * v + 2.0).collect();
        prop_assert!((metrics::roc_curve(&y, &squashed).unwrap().auc.unwrap() - base).abs() <= 1e-12);
        prop_assert!((metrics::roc_curve(&y, &cubed).unwrap().auc.unwrap() - base).abs() <= 1e-12);
    }

    #[test]
    fn balanced_accuracy_equals_accuracy_on_balanced_sets(half in 1usize..40, tp_frac in 0.0..=1.0f64, tn_frac in 0.0..=1.0f64) {
        let tp = (tp_frac * half as f64).round() as usize;
        let tn = (tn_frac * half as f64).round() as usize;
        let s = metrics::summary_metrics(&ConfusionMatrix { tp, fn_: half - tp, tn, fp: half - tn });
        prop_assert!((s.balanced_accuracy - s.accuracy).abs() <= 1e-12);
    }

    #[test]
    fn resampling_keeps_originals_and_bounds_the_ratio(
        n in 20usize..120,
        d in 1usize..6,
        minority_frac in 0.1..0.4f64,
        target in 0.5..=1.0f64,
        adasyn in any::<bool>(),
        data_seed in any::<u64>(),
    ) {
        let mut rng = seed::rng(data_seed);
        let x = Array2::from_shape_simple_fn((n, d), || rand::Rng::random::<f64>(&mut rng));
        let minority = ((n as f64 * minority_frac) as usize).max(3);
        let y: Vec<bool> = (0..n).map(|i| i < minority).collect();
        let base = if adasyn { ResamplePlan::adasyn(data_seed) } else { ResamplePlan::smote(data_seed) };
        let plan = ResamplePlan { k_neighbors: 2, target_ratio: target, ..base };
        let out = resample::apply(x.view(), &y, &plan).unwrap();
        prop_assert_eq!(out.x.slice(ndarray::s![..n, ..]), x.view());
        prop_assert_eq!(&out.y[..n], &y[..]);
        let majority = n - minority;
        if (minority as f64) < target * majority as f64 {
            let pos = out.y.iter().filter(|&&v| v).count() as f64;
            let ratio = pos / majority as f64;
            prop_assert!(ratio <= target + 1e-12, "ratio {} above target {}", ratio, target);
            prop_assert!(ratio >= target - 1.0 / majority as f64 - 1e-12, "ratio {} below target {}", ratio, target);
        }
        let again = resample::apply(x.view(), &y, &plan).unwrap();
        prop_assert_eq!(out, again);
    }

    #[test]
    fn classification_is_total_and_partitions(descs in prop::collection::vec("[ -~]{0,40}", 1..30)) {
        let rules = RuleSet::default_rules();
        let records: Vec<SeriesRecord> = descs
            .iter()
            .enumerate()
            .map(|(i, d)| SeriesRecord {
                patient_id: format!("P{}", i % 4),
                series_uid: format!("1.2.{i}"),
                modality: if i % 2 == 0 { Modality::Ct } else { Modality::Mr },
                series_description: d.clone(),
            })
            .collect();
        let decisions: Vec<_> = records.iter().map(|r| classify(r, &rules)).collect();
        let again: Vec<_> = records.iter().map(|r| classify(r, &rules)).collect();
        prop_assert_eq!(&decisions, &again);
        let s = summarize(&records, &decisions).unwrap();
        let kept = decisions.iter().filter(|d| d.is_keep()).count();
        prop_assert_eq!(s.kept_scans, kept);
        prop_assert_eq!(s.total_scans, records.len());
        prop_assert_eq!(s.ct_scans + s.mr_scans, kept);
        prop_assert_eq!(summarize(&records, &decisions).unwrap(), s);
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        for k in i..=j {
            r[order[k]] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let mean = (a.len() - 1) as f64 / 2.0;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - mean) * (y - mean)).sum();
    let var = |r: &[f64]| r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    cov / (var(&ra) * var(&rb)).sqrt()
}

#[test]
fn ehr_profile_loss_trends_down() {
    let cohort = generate_synthetic(&SyntheticSpec { seed: 21, ..SyntheticSpec::default() }).unwrap();
    let table = &cohort.tables[0];
    let y: Vec<bool> = table.ids.iter().map(|id| cohort.labels.get(id).unwrap()).collect();
    let cut = table.len() * 4 / 5;
    let x = table.data.view();
    let profile = Profile::ehr().with_seed(3);
    let cfg = mmfuse::neural::TrainConfig { epochs: 10, ..profile.train.clone() };
    let model = MlpModel::new(profile.spec(table.width()).unwrap(), 3).unwrap();
    let out = train(model, x.slice(ndarray::s![..cut, ..]), &y[..cut], x.slice(ndarray::s![cut.., ..]), &y[cut..], &cfg).unwrap();
    let losses: Vec<f64> = out.history.iter().map(|r| r.train_loss).collect();
    let epochs: Vec<f64> = (0..losses.len()).map(|e| e as f64).collect();
    assert_eq!(losses.len(), 10);
    let rho = spearman(&epochs, &losses);
    assert!(rho < 0.0, "train loss {losses:?} has Spearman {rho}");
}
