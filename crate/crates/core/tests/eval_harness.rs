use dfss_core::channel::*;
use dfss_core::eval::classifier::argmax;
use dfss_core::eval::metrics::frechet_distance;
use dfss_core::eval::*;
use dfss_core::exec::ExecMode;
use dfss_core::rng;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn window_ssim(a: &[f64], b: &[f64], range: f64) -> f64 {
    let n = a.len() as f64;
    let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n;
    let vb = b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / n;
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
    (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

fn joint_range(a: &[f64], b: &[f64]) -> f64 {
    let hi = a.iter().chain(b).cloned().fold(f64::MIN, f64::max);
    let lo = a.iter().chain(b).cloned().fold(f64::MAX, f64::min);
    hi - lo
}

#[test]
fn adr_matches_definition() {
    assert!((compute_adr(0.9, 0.3).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(compute_adr(0.8, 0.8).unwrap(), 0.0);
    assert!(compute_adr(0.5, 0.6).unwrap() < 0.0);
    assert!(compute_adr(0.0, 0.1).is_err());
}

#[test]
fn ssim_on_one_window_matches_closed_form() {
    let mut r = rng::stream(4, 0);
    for _ in 0..50 {
        let a: Vec<f64> = (0..11).map(|_| r.random_range(0.0..5.0)).collect();
        let b: Vec<f64> = (0..11).map(|_| r.random_range(0.0..5.0)).collect();
        assert!((ssim_1d(&a, &b).unwrap() - window_ssim(&a, &b, joint_range(&a, &b))).abs() < 1e-12);
    }
}

#[test]
fn ssim_is_one_for_identical_signals_and_averages_windows() {
    let a: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin() + 2.0).collect();
    assert!((ssim_1d(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v + 0.1 * (i as f64 * 1.7).cos()).collect();
    let range = joint_range(&a, &b);
    let expected = (0..30).map(|s| window_ssim(&a[s..s + 11], &b[s..s + 11], range)).sum::<f64>() / 30.0;
    assert!((ssim_1d(&a, &b).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn nearest_ssim_finds_the_copy() {
    let mut r = rng::stream(5, 0);
    let refs: Vec<Vec<f64>> = (0..20).map(|_| (0..64).map(|_| r.random_range(0.1..4.0)).collect()).collect();
    let (s, i) = nearest_ssim(&refs[13], &refs).unwrap();
    assert_eq!(i, 13);
    assert!((s - 1.0).abs() < 1e-12);
}

#[test]
fn frechet_distance_of_scaled_copy_matches_closed_form() {
    let mut r = rng::stream(6, 0);
    let a: Vec<Vec<f64>> = (0..200)
        .map(|_| {
            let z: f64 = r.random_range(-1.0..1.0);
            vec![z, 0.5 * z + r.random_range(-1.0..1.0), r.random_range(-2.0..2.0)]
        })
        .collect();
    let (c, shift) = (1.7, [0.3, -1.0, 2.0]);
    let b: Vec<Vec<f64>> = a.iter().map(|v| v.iter().zip(shift).map(|(x, s)| c * x + s).collect()).collect();
    let n = a.len() as f64;
    let mean: Vec<f64> = (0..3).map(|j| a.iter().map(|v| v[j]).sum::<f64>() / n).collect();
    let trace: f64 = (0..3)
        .map(|j| a.iter().map(|v| (v[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1.0))
        .sum();
    let shift_sq: f64 = (0..3).map(|j| ((c - 1.0) * mean[j] + shift[j]).powi(2)).sum();
    let expected = shift_sq + (1.0 - c).powi(2) * trace;
    let got = frechet_distance(&a, &b).unwrap();
    assert!((got - expected).abs() < 1e-8 * expected.max(1.0), "{got} vs {expected}");
}

#[test]
fn fid_separates_distributions() {
    let mut r = rng::stream(7, 0);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut set = |mu: f64| -> Vec<Vec<f64>> {
        (0..64).map(|_| (0..128).map(|_| mu + noise.sample(&mut r)).collect()).collect()
    };
    let (a, b, c) = (set(0.0), set(0.0), set(1.5));
    assert!(fid_1d(&a, &a, 1).unwrap() < 1e-6);
    let same = fid_1d(&a, &b, 1).unwrap();
    let far = fid_1d(&a, &c, 1).unwrap();
    assert!(far > 5.0 * same, "same {same} far {far}");
    assert!(fid_1d(&a[..10], &b, 1).is_err());
}

#[test]
fn classifier_learns_simulated_activities() {
    let layout = Layout::new(
        vec![Point::new(0.3, 0.5), Point::new(3.5, 0.7), Point::new(2.0, 3.6)],
        Point::new(1.9, 1.6),
    )
    .unwrap();
    let params = ChannelParams::default();
    let ex = FeatureExtractor::new(FeatureConfig::default()).unwrap();
    let classes = ActivityKind::RECOGNIZED.to_vec();
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for (c, &k) in classes.iter().enumerate() {
        for i in 0..30u64 {
            let t = synth_csi(&layout, 0, 1, k, &params, i * 10 + c as u64).unwrap();
            feats.push(ex.extract(&csi_power(&t), t.subcarriers, t.packets).unwrap());
            labels.push(c);
        }
    }
    let (train, test): (Vec<usize>, Vec<usize>) = (0..feats.len()).partition(|i| i % 3 != 0);
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<usize>) {
        (idx.iter().map(|&i| feats[i].clone()).collect(), idx.iter().map(|&i| labels[i]).collect())
    };
    let (xf, xl) = pick(&train);
    let (tf, tl) = pick(&test);
    let clf = ActivityClassifier::train(classes, &xf, &xl, &ClassifierConfig::default(), 3).unwrap();
    let acc = clf.accuracy(&tf, &tl).unwrap();
    assert!(acc >= 0.7, "held-out accuracy {acc}");
    let lp = clf.log_probs(&tf[..1]).unwrap();
    let total: f64 = lp[0].iter().map(|v| v.exp()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    assert_eq!(clf.predict(&tf[0]).unwrap(), argmax(&lp[0]));
}

fn small_config(mode: SafeguardMode) -> ExperimentConfig {
    ExperimentConfig {
        devices: 4,
        seed: 21,
        trials_per_class: 4,
        train_trials_per_class: 12,
        safeguard: mode,
        saved_signals: 3,
        mode: ExecMode::Sequential,
        ..ExperimentConfig::default()
    }
}

#[test]
fn experiment_without_safeguard_has_no_degradation() {
    let out = run_experiment(&small_config(SafeguardMode::Off), &ExperimentModels::default()).unwrap();
    let m = &out.metrics;
    assert_eq!(m.unauthorized, m.unprotected);
    assert_eq!(m.authorized, m.unprotected);
    assert_eq!(m.adr, 0.0);
    assert!(out.signals.is_empty());
    assert!(m.partial.is_none());
    assert!(m.graph.links().contains(&m.target_link));
}

#[test]
fn experiment_with_composite_safeguard_spares_authorized_path() {
    let cfg = small_config(SafeguardMode::Composite);
    let out = run_experiment(&cfg, &ExperimentModels::default()).unwrap();
    let m = &out.metrics;
    assert_eq!(m.authorized.confusion, m.unprotected.confusion);
    let trials: usize = m.unauthorized.confusion.iter().flatten().sum();
    assert_eq!(trials, 5 * cfg.trials_per_class);
    assert!((m.adr - compute_adr(m.unprotected.accuracy, m.unauthorized.accuracy).unwrap()).abs() < 1e-15);
    assert_eq!(out.signals.len(), 3);
    assert!(out.signals.iter().all(|s| s.len() == cfg.packets()));

    let again = run_experiment(&cfg, &ExperimentModels::default()).unwrap();
    assert_eq!(again.metrics, out.metrics);
    assert_eq!(again.signals, out.signals);
}

#[test]
fn experiment_outputs_have_expected_layout() {
    let out = run_experiment(&small_config(SafeguardMode::Composite), &ExperimentModels::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = write_outputs(dir.path(), &out.metrics, &out.signals).unwrap();
    assert_eq!(files.len(), 3 + out.signals.len());
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("metric,path,class,value\n"));
    assert!(metrics.lines().any(|l| l.starts_with("adr,unauthorized,all,")));
    for path in ["unprotected", "unauthorized", "authorized"] {
        assert!(metrics.contains(&format!("accuracy,{path},WK,")));
    }
    let confusion = std::fs::read_to_string(dir.path().join("confusion.csv")).unwrap();
    assert_eq!(confusion.lines().next().unwrap(), "path,true,WK,WH,ST,SQ,FL");
    assert_eq!(confusion.lines().count(), 1 + 3 * 5);
    let first = dfss_core::safeguard::SafeguardSignal::load(dir.path().join("signals/trial_0000.csv")).unwrap();
    assert_eq!(first.samples, out.signals[0].samples);
}

#[test]
fn experiment_config_round_trips_and_validates() {
    let cfg = small_config(SafeguardMode::Generated);
    let text = toml::to_string(&cfg).unwrap();
    let back: ExperimentConfig = toml::from_str(&text).unwrap();
    assert_eq!(back, cfg);
    let partial: ExperimentConfig = toml::from_str("trials_per_class = 7").unwrap();
    assert_eq!(partial.trials_per_class, 7);
    assert_eq!(partial.activities, ExperimentConfig::default().activities);

    let bad = ExperimentConfig {
        activities: vec!["WK".into(), "XX".into()],
        ..small_config(SafeguardMode::Off)
    };
    assert!(run_experiment(&bad, &ExperimentModels::default()).is_err());
    assert!(matches!(
        run_experiment(&cfg, &ExperimentModels::default()),
        Err(dfss_core::Error::InvalidArgument(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ssim_is_symmetric_and_bounded(
        a in prop::collection::vec(0.0f64..10.0, 11..60),
        seed in any::<u64>(),
    ) {
        let mut r = rng::stream(seed, 0);
        let b: Vec<f64> = a.iter().map(|_| r.random_range(0.0..10.0)).collect();
        let ab = ssim_1d(&a, &b).unwrap();
        prop_assert!((ab - ssim_1d(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(ab <= 1.0 + 1e-12 && ab >= -1.0 - 1e-12);
    }

    #[test]
    fn adr_is_bounded_for_valid_accuracies(org in 0.01f64..1.0, sf in 0.0f64..1.0) {
        let adr = compute_adr(org, sf).unwrap();
        prop_assert!(adr <= 1.0);
        prop_assert!((org * (1.0 - adr) - sf).abs() < 1e-12);
    }
}
