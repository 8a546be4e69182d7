use dfss_core::channel::*;
use dfss_core::eval::ssim_1d;
use dfss_core::exec::ExecMode;
use dfss_core::rng;
use dfss_core::safeguard::dataset::Provenance;
use dfss_core::safeguard::schedule::{diffuse_with, standard_normal_vec};
use dfss_core::safeguard::*;
use proptest::prelude::*;

fn synthetic(signals: Vec<Vec<f64>>, cond_dim: usize) -> SafeguardDataset {
    SafeguardDataset {
        window: signals[0].len(),
        sample_rate: 100.0,
        conditions: vec![vec![0.0; cond_dim]; signals.len()],
        signals,
        provenance: Provenance {
            seed: 0,
            channel: ChannelParams::default(),
            config: DatasetConfig::default(),
            record_seeds: vec![],
            skipped: 0,
        },
    }
}

fn small_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        hidden: 64,
        embed_dim: 16,
        ..TrainConfig::default()
    }
}

fn moments(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn composite_mean(layout: &Layout, seeds: std::ops::Range<u64>) -> f64 {
    let params = ChannelParams::default().noiseless();
    let mut total = 0.0;
    let count = seeds.end - seeds.start;
    for seed in seeds {
        let mags: Vec<Vec<f64>> = ActivityKind::COMPOSITE
            .iter()
            .enumerate()
            .map(|(k, &kind)| {
                let t = synth_csi(layout, 0, 1, kind, &params, seed * 10 + k as u64).unwrap();
                (0..t.packets).map(|w| t.at(32, w).norm()).collect()
            })
            .collect();
        let s = composite_signal(&mags, 1e-3).unwrap();
        total += s.iter().sum::<f64>() / s.len() as f64;
    }
    total / count as f64
}

#[test]
fn wider_link_yields_stronger_safeguard() {
    let user = Point::new(2.0, 3.0);
    let near = Layout::new(vec![Point::new(1.5, 2.0), Point::new(2.5, 2.0)], user).unwrap();
    let far = Layout::new(vec![Point::new(0.0, 2.0), Point::new(4.0, 2.0)], user).unwrap();
    assert!(composite_mean(&far, 0..10) > composite_mean(&near, 0..10));
}

#[test]
fn last_step_is_standard_normal() {
    let s = NoiseSchedule::default();
    let mut r = rng::stream(1, 0);
    let x0 = vec![0.5; 1];
    let draws: Vec<f64> = (0..10_000)
        .map(|_| forward_diffuse(&x0, &s, s.steps(), &mut r).unwrap().0[0])
        .collect();
    let (m, v) = moments(&draws);
    let n = draws.len() as f64;
    assert!(m.abs() <= 3.0 / n.sqrt(), "mean {m}");
    assert!((v - 1.0).abs() <= 3.0 * (2.0 / n).sqrt(), "var {v}");
}

#[test]
fn stepwise_forward_matches_closed_form() {
    let s = NoiseSchedule::default();
    let x0 = [1.5];
    let n = 10_000;
    for &t in &[1usize, 10, 100, 250, 500] {
        let mut r = rng::stream(2, t as u64);
        let stepped: Vec<f64> = (0..n)
            .map(|_| {
                let mut x = x0.to_vec();
                for k in 1..=t {
                    x = forward_step(&x, &s, k, &mut r).unwrap();
                }
                x[0]
            })
            .collect();
        let (m, v) = moments(&stepped);
        let a = s.alpha_bar(t);
        let (em, ev) = (a.sqrt() * x0[0], 1.0 - a);
        assert!((m - em).abs() <= 3.0 * (ev / n as f64).sqrt(), "t={t} mean {m} vs {em}");
        assert!((v - ev).abs() <= 3.0 * ev * (2.0 / n as f64).sqrt(), "t={t} var {v} vs {ev}");
    }
}

#[test]
fn score_target_uses_drawn_noise() {
    let s = NoiseSchedule::default();
    let mut r = rng::stream(3, 0);
    let x0: Vec<f64> = (0..32).map(|i| i as f64 * 0.1).collect();
    for &t in &[1usize, 77, 500] {
        let (xt, eps) = forward_diffuse(&x0, &s, t, &mut r).unwrap();
        let target = score_target(&xt, &x0, &s, t);
        let sd = (1.0 - s.alpha_bar(t)).sqrt();
        for (g, e) in target.iter().zip(&eps) {
            assert!((g + e / sd).abs() <= 1e-9 * (1.0 + g.abs()));
        }
    }
}

#[test]
fn learned_score_matches_gaussian_score() {
    let w = 16;
    let mu: Vec<f64> = (0..w).map(|i| 2.0 + (i as f64 * 0.4).sin()).collect();
    let mut r = rng::stream(4, 0);
    let signals: Vec<Vec<f64>> = (0..2000)
        .map(|_| standard_normal_vec(w, &mut r).iter().zip(&mu).map(|(z, m)| m + 0.3 * z).collect())
        .collect();
    let ds = synthetic(signals, 1);
    let (model, _) = train_denoiser(&ds, &small_cfg(60), 5, ExecMode::available(), |_, _| {}).unwrap();
    let mu_z: Vec<f64> = mu.iter().map(|m| (m - model.mean) / model.std).collect();
    let var_z = (0.3 / model.std).powi(2);
    let mut sims = Vec::new();
    for &t in &[5usize, 50, 150, 300, 500] {
        let a = model.schedule.alpha_bar(t);
        let var_t = a * var_z + 1.0 - a;
        for _ in 0..20 {
            let x: Vec<f64> = standard_normal_vec(w, &mut r)
                .iter()
                .zip(&mu_z)
                .map(|(z, m)| a.sqrt() * m + var_t.sqrt() * z)
                .collect();
            let truth: Vec<f64> = x.iter().zip(&mu_z).map(|(x, m)| -(x - a.sqrt() * m) / var_t).collect();
            sims.push(cosine(&model.score(&x, &[0.0], t).unwrap(), &truth));
        }
    }
    let mean = sims.iter().sum::<f64>() / sims.len() as f64;
    assert!(mean >= 0.95, "mean cosine {mean}");
}

#[test]
fn constant_dataset_is_overfit_at_low_noise() {
    let ds = synthetic(vec![vec![1.7; 16]; 64], 1);
    let cfg = TrainConfig {
        epochs: 150,
        batch_size: 16,
        hidden: 32,
        embed_dim: 8,
        ..TrainConfig::default()
    };
    let mse = |model: &SafeguardModel| {
        let mut r = rng::stream(6, 0);
        let x0 = vec![0.0; 16];
        let mut total = 0.0;
        for t in (50..=100).step_by(10) {
            let eps = standard_normal_vec(16, &mut r);
            let xt = diffuse_with(&x0, &model.schedule, t, &eps);
            let target = score_target(&xt, &x0, &model.schedule, t);
            let got = model.score(&xt, &[0.0], t).unwrap();
            let weight = 1.0 - model.schedule.alpha_bar(t);
            total += weight * got.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        total
    };
    let init = SafeguardModel::new(16, 1, 100.0, &cfg, 7).unwrap();
    let (trained, _) = train_denoiser(&ds, &cfg, 7, ExecMode::available(), |_, _| {}).unwrap();
    assert!(mse(&trained) * 10.0 <= mse(&init), "{} vs {}", mse(&trained), mse(&init));
}

#[test]
fn simulated_dataset_loss_decreases() {
    let params = ChannelParams {
        packets: 64,
        ..ChannelParams::default()
    };
    let dcfg = DatasetConfig {
        count: 128,
        ..DatasetConfig::default()
    };
    let ds = build_dataset(&[], &params, &dcfg, 8, ExecMode::available()).unwrap();
    assert_eq!(ds.len() + ds.provenance.skipped, 128);
    assert!(ds.signals.iter().flatten().all(|v| (S_MIN..=S_MAX).contains(v)));
    let (_, report) = train_denoiser(&ds, &small_cfg(10), 9, ExecMode::available(), |_, _| {}).unwrap();
    assert_eq!(report.loss_curve.len(), 10);
    assert!(report.loss_curve.iter().all(|l| l.is_finite()));
    assert!(report.loss_curve[9] < report.loss_curve[0]);
}

#[test]
fn dataset_builder_is_mode_independent_and_roundtrips() {
    let params = ChannelParams {
        packets: 32,
        ..ChannelParams::default()
    };
    let dcfg = DatasetConfig {
        count: 12,
        ..DatasetConfig::default()
    };
    let a = build_dataset(&[], &params, &dcfg, 10, ExecMode::Sequential).unwrap();
    let b = build_dataset(&[], &params, &dcfg, 10, ExecMode::available()).unwrap();
    assert_eq!(a, b);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.bin");
    a.save(&path).unwrap();
    assert_eq!(SafeguardDataset::load(&path).unwrap(), a);
    assert_eq!(a.conditions[0].len(), SignalCondition::DIM);
}

#[test]
fn sampling_contract() {
    let mut r = rng::stream(11, 0);
    let signals: Vec<Vec<f64>> = (0..64)
        .map(|_| standard_normal_vec(32, &mut r).iter().map(|z| 3.0 + z).collect())
        .collect();
    let ds = synthetic(signals, 2);
    let cfg = TrainConfig {
        epochs: 2,
        hidden: 16,
        embed_dim: 8,
        steps: 50,
        beta_t: 0.2,
        ..TrainConfig::default()
    };
    let untrained = SafeguardModel::new(32, 2, 100.0, &cfg, 1).unwrap();
    assert!(matches!(sample_signal(&untrained, &[0.0, 0.0], 1), Err(dfss_core::Error::Untrained(_))));
    let (model, _) = train_denoiser(&ds, &cfg, 12, ExecMode::available(), |_, _| {}).unwrap();
    let cond = [0.3, 0.7];
    let a = sample_signal(&model, &cond, 42).unwrap();
    assert_eq!(a.to_csv(), sample_signal(&model, &cond, 42).unwrap().to_csv());
    let others: Vec<SafeguardSignal> = (0..4).map(|s| sample_signal(&model, &cond, s).unwrap()).collect();
    for i in 0..others.len() {
        for j in i + 1..others.len() {
            assert!(ssim_1d(&others[i].samples, &others[j].samples).unwrap() < 0.999);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn generated_samples_are_positive(seed in any::<u64>(), c in -3.0f64..3.0) {
        let ds = synthetic(vec![vec![0.1; 16], vec![15.0; 16]], 1);
        let cfg = TrainConfig { epochs: 1, hidden: 8, embed_dim: 4, steps: 20, beta_t: 0.3, ..TrainConfig::default() };
        let (model, _) = train_denoiser(&ds, &cfg, 3, ExecMode::Sequential, |_, _| {}).unwrap();
        let s = sample_signal(&model, &[c], seed).unwrap();
        prop_assert!(s.samples.iter().all(|v| *v >= S_MIN && *v <= S_MAX && *v > 0.0));
    }

    #[test]
    fn composite_of_constant_magnitudes(m in prop::collection::vec(0.1f64..10.0, 4)) {
        let mags: Vec<Vec<f64>> = m.iter().map(|v| vec![*v; 8]).collect();
        let s = composite_signal(&mags, 1e-3).unwrap();
        let expected: f64 = m.iter().map(|v| 1.0 / v).sum();
        prop_assert!(s.iter().all(|v| (v - expected).abs() <= 1e-12 * expected));
    }

    #[test]
    fn forward_diffuse_is_affine_in_noise(seed in any::<u64>(), t in 1usize..=500) {
        let s = NoiseSchedule::default();
        let x0: Vec<f64> = (0..8).map(|i| i as f64 - 3.5).collect();
        let (xt, eps) = forward_diffuse(&x0, &s, t, &mut rng::stream(seed, 0)).unwrap();
        prop_assert_eq!(xt, diffuse_with(&x0, &s, t, &eps));
    }
}
