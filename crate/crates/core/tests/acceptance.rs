//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Trained checkpoints are cached under `target/acceptance-cache` (override
//! with `DFSS_ACCEPTANCE_CACHE`), keyed by a hash of their training setup,
//! together with the measured training time.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dfss_core::channel::*;
use dfss_core::csi::*;
use dfss_core::eval::*;
use dfss_core::exec::ExecMode;
use dfss_core::modulator::modulate;
use dfss_core::planner::*;
use dfss_core::rng;
use dfss_core::safeguard::dataset::Provenance;
use dfss_core::safeguard::schedule::standard_normal_vec;
use dfss_core::safeguard::*;
use dfss_core::verify::gradcheck_suite;

type Outcome = Result<(bool, String), String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().expect("workspace root")
}

fn target_dir() -> PathBuf {
    std::env::var_os("CARGO_TARGET_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("target"))
}

fn cache_dir() -> PathBuf {
    let d = std::env::var_os("DFSS_ACCEPTANCE_CACHE")
        .map(PathBuf::from)
        .unwrap_or_else(|| target_dir().join("acceptance-cache"));
    std::fs::create_dir_all(&d).expect("cache dir");
    d
}

fn key(parts: &impl Serialize) -> String {
    let text = serde_json::to_string(parts).expect("serializable key");
    hex::encode(Sha256::digest(text.as_bytes()))[..16].to_string()
}

#[derive(Serialize, Deserialize)]
struct TrainingRecord {
    seconds: f64,
}

fn cached<T>(
    name: &str,
    k: &str,
    load: impl Fn(&Path) -> dfss_core::Result<T>,
    train: impl FnOnce() -> dfss_core::Result<T>,
    save: impl Fn(&T, &Path) -> dfss_core::Result<()>,
) -> Result<(T, f64), String> {
    let dir = cache_dir();
    let file = dir.join(format!("{name}-{k}.bin"));
    let meta = dir.join(format!("{name}-{k}.json"));
    if let (Ok(v), Ok(text)) = (load(&file), std::fs::read_to_string(&meta)) {
        if let Ok(rec) = serde_json::from_str::<TrainingRecord>(&text) {
            return Ok((v, rec.seconds));
        }
    }
    let t0 = Instant::now();
    let v = train().map_err(err)?;
    let seconds = t0.elapsed().as_secs_f64();
    save(&v, &file).map_err(err)?;
    std::fs::write(&meta, serde_json::to_string(&TrainingRecord { seconds }).map_err(err)?).map_err(err)?;
    Ok((v, seconds))
}

fn planner_config() -> PlannerTrainConfig {
    PlannerTrainConfig::default()
}

const PLANNER_SEED: u64 = 7;

fn trained_planner() -> Result<(PlannerModel, f64), String> {
    let cfg = planner_config();
    let reward = RewardParams::default();
    let k = key(&("planner", &cfg, &reward, PLANNER_SEED));
    cached(
        "planner",
        &k,
        |p| PlannerModel::load(p),
        || {
            train_policy_gradient(&TrainingLayouts::Random, &reward, &cfg, PLANNER_SEED, ExecMode::available(), |s| {
                if s.epoch % 20 == 0 {
                    eprintln!("  planner epoch {} mean reward {:.2}", s.epoch, s.mean);
                }
            })
            .map(|(m, _)| m)
        },
        |m, p| m.save(p),
    )
}

const SAFEGUARD_SEED: u64 = 11;

fn dataset_config() -> (ChannelParams, DatasetConfig) {
    (
        ChannelParams::default(),
        DatasetConfig {
            count: 2000,
            ..DatasetConfig::default()
        },
    )
}

fn safeguard_config() -> TrainConfig {
    TrainConfig::default()
}

fn safeguard_dataset() -> Result<SafeguardDataset, String> {
    let (params, cfg) = dataset_config();
    let k = key(&("dataset", &params, &cfg, SAFEGUARD_SEED));
    cached(
        "dataset",
        &k,
        |p| SafeguardDataset::load(p),
        || build_dataset(&[], &params, &cfg, SAFEGUARD_SEED, ExecMode::available()),
        |d, p| d.save(p),
    )
    .map(|(d, _)| d)
}

fn trained_safeguard(ds: &SafeguardDataset) -> Result<(SafeguardModel, f64), String> {
    let cfg = safeguard_config();
    let (params, dcfg) = dataset_config();
    let k = key(&("safeguard", &cfg, &params, &dcfg, SAFEGUARD_SEED));
    cached(
        "safeguard",
        &k,
        |p| SafeguardModel::load(p),
        || {
            train_denoiser(ds, &cfg, SAFEGUARD_SEED, ExecMode::available(), |e, l| {
                if e % 10 == 0 {
                    eprintln!("  safeguard epoch {e} loss {l:.4}");
                }
            })
            .map(|(m, _)| m)
        },
        |m, p| m.save(p),
    )
}

fn random_layout(r: &mut impl Rng, devices: usize) -> Layout {
    Layout::random(devices, 4.0, r)
}

fn random_trace(r: &mut impl Rng, params: &ChannelParams) -> Result<CsiTrace, String> {
    loop {
        let layout = random_layout(r, 3);
        let kind = ActivityKind::ALL[r.random_range(0..ActivityKind::ALL.len())];
        match synth_csi(&layout, 0, 1, kind, params, r.random()) {
            Ok(t) => return Ok(t),
            Err(dfss_core::Error::Degenerate(_)) => continue,
            Err(e) => return Err(err(e)),
        }
    }
}

fn c1_masking_identity() -> Outcome {
    let t0 = Instant::now();
    let params = ChannelParams::default();
    let mut r = rng::stream(101, 0);
    let base = BasePilot::random(params.subcarriers, &mut r);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let t = random_trace(&mut r, &params)?;
        let s = SafeguardSignal::new((0..params.packets).map(|_| r.random_range(S_MIN..S_MAX)).collect(), 100.0);
        let y = received_symbols(&modulate(&base, &s, params.packets).map_err(err)?, &t.to_matrix()).map_err(err)?;
        let seen = extract_unauthorized(&y, &base).map_err(err)?;
        for n in 0..params.subcarriers {
            for w in 0..params.packets {
                let expected = s.samples[w].powi(2) * t.at(n, w).norm_sqr();
                worst = worst.max((seen.at(n, w).norm_sqr() - expected).abs() / expected);
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    Ok((
        worst <= 1e-10 && secs < 10.0,
        format!("max relative error {worst:.2e} over 100 traces, {secs:.2} s"),
    ))
}

fn c2_authorized_transparency(model: &SafeguardModel, planner: &PlannerModel) -> Outcome {
    let params = ChannelParams::default().noiseless();
    let mut r = rng::stream(102, 0);
    let base = BasePilot::random(params.subcarriers, &mut r);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let t = random_trace(&mut r, &params)?;
        let s = sample_signal(model, &vec![0.3; model.net.cond_dim], i).map_err(err)?;
        let h = t.to_matrix();
        let y = received_symbols(&modulate(&base, &s, params.packets).map_err(err)?, &h).map_err(err)?;
        let rec = extract_authorized(&y, &base, &s).map_err(err)?;
        for (a, b) in rec.h.iter().zip(&h.h) {
            worst = worst.max((a - b).norm() / b.norm());
        }
    }
    let cfg = ExperimentConfig {
        snr_db: None,
        seed: 202,
        ..ExperimentConfig::default()
    };
    let out = run_experiment(
        &cfg,
        &ExperimentModels {
            planner: Some(planner),
            safeguard: Some(model),
            reference: None,
        },
    )
    .map_err(err)?;
    let m = &out.metrics;
    Ok((
        worst <= 1e-10 && m.authorized.accuracy == m.unprotected.accuracy,
        format!(
            "max relative error {worst:.2e}; noiseless accuracy authorized {:.3} unprotected {:.3}",
            m.authorized.accuracy, m.unprotected.accuracy
        ),
    ))
}

fn c3_power_expansion() -> Outcome {
    let params = ChannelParams::default().noiseless();
    let mut r = rng::stream(103, 0);
    let mut worst: f64 = 0.0;
    let mut peak: f64 = 0.0;
    for _ in 0..1000 {
        let t = random_trace(&mut r, &params)?;
        let direct = csi_power(&t);
        let expanded = expand_power_terms(&t).map_err(err)?;
        for (a, b) in direct.iter().zip(&expanded) {
            worst = worst.max((a - b).abs());
            peak = peak.max(*a);
        }
    }
    Ok((
        worst <= 1e-9,
        format!("max absolute difference {worst:.2e} over 1000 traces, peak power {peak:.2}"),
    ))
}

fn c4_ls_optimality() -> Outcome {
    let mut r = rng::stream(104, 0);
    let (n, w) = (8, 6);
    let mut violations = 0;
    for case in 0..100u64 {
        let values: Vec<Complex64> = (0..n * w)
            .map(|_| loop {
                let c = Complex64::new(r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
                if c.norm() > 1e-3 {
                    break c;
                }
            })
            .collect();
        let pilot = PilotSchedule {
            subcarriers: n,
            packets: w,
            values,
        };
        let y = CsiMatrix {
            kind: CsiKind::Received,
            subcarriers: n,
            packets: w,
            carrier_hz: 2.8e9,
            bandwidth_hz: 1e8,
            packet_rate: 100.0,
            seed: case,
            h: (0..n * w)
                .map(|_| Complex64::new(r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)))
                .collect(),
        };
        let est = ls_estimate(&pilot, &y).map_err(err)?;
        let j0 = ls_cost(&pilot, &y, &est.h);
        for _ in 0..100 {
            let scale = 10f64.powf(r.random_range(-6.0..0.0));
            let moved: Vec<Complex64> = est
                .h
                .iter()
                .map(|h| h + Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)) * scale)
                .collect();
            if ls_cost(&pilot, &y, &moved) < j0 {
                violations += 1;
            }
        }
    }
    Ok((violations == 0, format!("{violations} of 10000 perturbations lowered the cost")))
}

struct PlannerEval {
    within: usize,
    dcdm: f64,
    best10: f64,
    optimum: f64,
    greedy_node: f64,
    greedy_link: f64,
    random_node: f64,
    random_link: f64,
}

fn evaluate_planner(model: &PlannerModel) -> Result<PlannerEval, String> {
    let reward = RewardParams::default();
    let mut r = rng::stream(105, 0);
    let mut e = PlannerEval {
        within: 0,
        dcdm: 0.0,
        best10: 0.0,
        optimum: 0.0,
        greedy_node: 0.0,
        greedy_link: 0.0,
        random_node: 0.0,
        random_link: 0.0,
    };
    let n = 50;
    for k in 0..n {
        let layout = random_layout(&mut r, 5);
        let (_, opt) = brute_force_optimum(&layout, &reward).map_err(err)?;
        let best = best_of(model, &layout, &reward, 10, k).map_err(err)?;
        let planned = plan(model, &layout, &reward, k).map_err(err)?;
        if best.reward >= 0.95 * opt {
            e.within += 1;
        }
        e.dcdm += planned.reward / n as f64;
        e.best10 += best.reward / n as f64;
        e.optimum += opt / n as f64;
        e.greedy_node += baseline_greedy(&layout, &reward, BaselineMode::Node).map_err(err)?.1 / n as f64;
        e.greedy_link += baseline_greedy(&layout, &reward, BaselineMode::Link).map_err(err)?.1 / n as f64;
        e.random_node += baseline_random(&layout, &reward, BaselineMode::Node, &mut r).map_err(err)?.1 / n as f64;
        e.random_link += baseline_random(&layout, &reward, BaselineMode::Link, &mut r).map_err(err)?.1 / n as f64;
    }
    Ok(e)
}

fn c5_planner(e: &PlannerEval, seconds: f64) -> Outcome {
    Ok((
        e.within >= 40 && seconds < 1800.0,
        format!(
            "{}/50 layouts with best-of-10 >= 0.95 x optimum (mean {:.2} vs optimum {:.2}); training {:.0} s",
            e.within, e.best10, e.optimum, seconds
        ),
    ))
}

fn c6_baseline_order(e: &PlannerEval) -> Outcome {
    let greedy_low = e.greedy_node.min(e.greedy_link);
    let ok = e.dcdm > e.greedy_node.max(e.greedy_link) && greedy_low > e.random_node.max(e.random_link);
    Ok((
        ok,
        format!(
            "mean reward D-CDM {:.2}, greedy node {:.2}, greedy link {:.2}, random node {:.2}, random link {:.2}",
            e.dcdm, e.greedy_node, e.greedy_link, e.random_node, e.random_link
        ),
    ))
}

fn within_3_sigma(count: usize, draws: usize, p: f64) -> bool {
    let sd = (draws as f64 * p * (1.0 - p)).sqrt();
    (count as f64 - draws as f64 * p).abs() <= 3.0 * sd
}

fn c7_discrete_diffusion() -> Outcome {
    let s = TransitionSchedule::default();
    let mut worst: f64 = 0.0;
    for a in [2, 3] {
        for t in 0..=s.steps() {
            for row in s.q_bar(t, a).map_err(err)?.chunks(a) {
                worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    let g = ActivationGraph::from_parts(vec![NodeRole::Tx, NodeRole::Rx], &[(0, 1)]).map_err(err)?;
    let mut r = rng::stream(107, 0);
    let draws = 10_000;
    let mut roles = [0usize; 3];
    let mut edges = 0;
    for _ in 0..draws {
        let x = forward_noise_graph(&g, &s, s.steps(), &mut r).map_err(err)?;
        roles[x.roles[0].index()] += 1;
        edges += x.edge(0, 1) as usize;
    }
    let uniform = roles.iter().all(|&c| within_3_sigma(c, draws, 1.0 / 3.0)) && within_3_sigma(edges, draws, 0.5);
    Ok((
        worst <= 1e-12 && uniform,
        format!("row-sum error {worst:.1e}; t=T roles {roles:?}, edges on {edges}/{draws}"),
    ))
}

fn moments(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
}

fn gaussian_dataset(signals: Vec<Vec<f64>>) -> SafeguardDataset {
    SafeguardDataset {
        window: signals[0].len(),
        sample_rate: 100.0,
        conditions: vec![vec![0.0]; signals.len()],
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

fn c8_continuous_diffusion() -> Outcome {
    let s = NoiseSchedule::default();
    let x0 = [1.5];
    let n = 10_000;
    let mut moments_ok = true;
    for &t in &[1usize, 50, 250, 500] {
        let mut r = rng::stream(108, t as u64);
        let stepped: Vec<f64> = (0..n)
            .map(|_| {
                let mut x = x0.to_vec();
                for k in 1..=t {
                    x = forward_step(&x, &s, k, &mut r).expect("valid step");
                }
                x[0]
            })
            .collect();
        let (m, v) = moments(&stepped);
        let a = s.alpha_bar(t);
        let (em, ev) = (a.sqrt() * x0[0], 1.0 - a);
        moments_ok &= (m - em).abs() <= 3.0 * (ev / n as f64).sqrt();
        moments_ok &= (v - ev).abs() <= 3.0 * ev * (2.0 / n as f64).sqrt();
    }
    let w = 16;
    let mu: Vec<f64> = (0..w).map(|i| 2.0 + (i as f64 * 0.4).sin()).collect();
    let mut r = rng::stream(108, 0);
    let signals: Vec<Vec<f64>> = (0..2000)
        .map(|_| standard_normal_vec(w, &mut r).iter().zip(&mu).map(|(z, m)| m + 0.3 * z).collect())
        .collect();
    let cfg = TrainConfig {
        epochs: 60,
        batch_size: 32,
        hidden: 64,
        embed_dim: 16,
        ..TrainConfig::default()
    };
    let (model, _) = train_denoiser(&gaussian_dataset(signals), &cfg, 5, ExecMode::available(), |_, _| {}).map_err(err)?;
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
            sims.push(cosine(&model.score(&x, &[0.0], t).map_err(err)?, &truth));
        }
    }
    let mean = sims.iter().sum::<f64>() / sims.len() as f64;
    Ok((
        moments_ok && mean >= 0.95,
        format!("stepwise moments within 3 sigma: {moments_ok}; mean score cosine {mean:.3}"),
    ))
}

fn c9_gradcheck() -> Outcome {
    let checks = gradcheck_suite(109).map_err(err)?;
    let worst = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    let names: Vec<String> = checks.iter().map(|c| format!("{} {:.1e}", c.name, c.max_rel_error)).collect();
    Ok((worst <= 1e-4, names.join(", ")))
}

fn c10_generation(model: &SafeguardModel, ds: &SafeguardDataset, seconds: f64) -> Outcome {
    let count = 128;
    let generated: Vec<Vec<f64>> = dfss_core::exec::try_map_indexed(ExecMode::available(), count, |i| {
        sample_signal(model, &ds.conditions[i], 9000 + i as u64).map(|s| s.samples)
    })
    .map_err(err)?;
    let mut ssim: Vec<f64> = generated
        .iter()
        .map(|g| nearest_ssim(g, &ds.signals).map(|v| v.0))
        .collect::<dfss_core::Result<_>>()
        .map_err(err)?;
    ssim.sort_by(f64::total_cmp);
    let median = 0.5 * (ssim[count / 2 - 1] + ssim[count / 2]);
    let max = ssim[count - 1];
    let (mean, var) = moments(&ds.signals.concat());
    let noise = Normal::new(mean, var.sqrt()).map_err(err)?;
    let mut r = rng::stream(110, 0);
    let white: Vec<Vec<f64>> = (0..count)
        .map(|_| (0..ds.window).map(|_| noise.sample(&mut r)).collect())
        .collect();
    let fid_gen = fid_1d(&ds.signals, &generated, 1).map_err(err)?;
    let fid_white = fid_1d(&ds.signals, &white, 1).map_err(err)?;
    Ok((
        (0.5..=0.95).contains(&median) && max < 0.999 && fid_gen < fid_white && seconds <= 3600.0,
        format!(
            "nearest SSIM median {median:.3} max {max:.3}; FID generated {fid_gen:.3} vs white noise {fid_white:.3}; training {seconds:.0} s"
        ),
    ))
}

const PROTECTION_SEEDS: [u64; 3] = [311, 312, 313];

fn protection_config(rate: f64, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        packet_rate: rate,
        ..ExperimentConfig::default()
    }
}

fn c11_protection(m: &Metrics) -> Outcome {
    let ok = m.unprotected.accuracy >= 0.9
        && m.adr >= 0.5
        && m.unauthorized.accuracy <= 0.45
        && (m.authorized.accuracy - m.unprotected.accuracy).abs() <= 0.02;
    Ok((
        ok,
        format!(
            "link {:?}: accuracy unprotected {:.3}, unauthorized {:.3}, authorized {:.3}; ADR {:.3}",
            m.target_link, m.unprotected.accuracy, m.unauthorized.accuracy, m.authorized.accuracy, m.adr
        ),
    ))
}

fn c12_rates(adr: &[(f64, Vec<f64>)]) -> Outcome {
    let means: Vec<(f64, f64)> = adr.iter().map(|(r, v)| (*r, v.iter().sum::<f64>() / v.len() as f64)).collect();
    let hi = means.iter().map(|a| a.1).fold(f64::MIN, f64::max);
    let lo = means.iter().map(|a| a.1).fold(f64::MAX, f64::min);
    let list: Vec<String> = means.iter().map(|(r, a)| format!("{r:.0} Hz {a:.3}")).collect();
    Ok((
        hi - lo <= 0.1,
        format!(
            "mean ADR over {} layouts: {}; spread {:.3}",
            PROTECTION_SEEDS.len(),
            list.join(", "),
            hi - lo
        ),
    ))
}

fn run_cli(bin: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(bin).args(args).output().map_err(err)?;
    if !out.status.success() {
        return Err(format!("dfss {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(())
}

fn dir_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files = Vec::new();
    for e in std::fs::read_dir(dir).map_err(err)? {
        let p = e.map_err(err)?.path();
        files.push((p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).map_err(err)?));
    }
    files.sort();
    Ok(files)
}

fn c13_determinism(model: &SafeguardModel) -> Outcome {
    let status = Command::new(env!("CARGO"))
        .args(["build", "--offline", "--quiet", "-p", "dfss-cli"])
        .current_dir(workspace_root())
        .status()
        .map_err(err)?;
    if !status.success() {
        return Err("building the CLI failed".into());
    }
    let bin = target_dir().join("debug").join("dfss");
    let tmp = tempfile::tempdir().map_err(err)?;
    let ckpt = tmp.path().join("safeguard.ckpt");
    model.save(&ckpt).map_err(err)?;
    let cond = tmp.path().join("condition.json");
    std::fs::write(&cond, serde_json::to_string(&vec![0.25; model.net.cond_dim]).map_err(err)?).map_err(err)?;
    let run = |name: &str| -> Result<PathBuf, String> {
        let out = tmp.path().join(name);
        let (ck, co, o) = (ckpt.to_string_lossy(), cond.to_string_lossy(), out.to_string_lossy());
        run_cli(
            &bin,
            &["--seed", "42", "--out", &o, "generate", "--safeguard", &ck, "--condition", &co, "--count", "3"],
        )?;
        Ok(out)
    };
    let a = dir_files(&run("a")?.join("signals"))?;
    let b = dir_files(&run("b")?.join("signals"))?;
    let replay = tmp.path().join("replay");
    let manifest = tmp.path().join("a").join("run_manifest.json");
    run_cli(
        &bin,
        &["--out", &replay.to_string_lossy(), "replay", &manifest.to_string_lossy()],
    )?;
    let c = dir_files(&replay.join("signals"))?;
    let same_manifest_outputs = {
        let read = |p: PathBuf| -> Result<serde_json::Value, String> {
            serde_json::from_str(&std::fs::read_to_string(p).map_err(err)?).map_err(err)
        };
        read(manifest)?["outputs"] == read(replay.join("run_manifest.json"))?["outputs"]
    };
    Ok((
        a == b && a == c && a.len() == 3 && same_manifest_outputs,
        format!(
            "{} signal files byte-identical across runs: {}; replay identical: {}",
            a.len(),
            a == b,
            a == c && same_manifest_outputs
        ),
    ))
}

fn report(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f));
    let secs = t0.elapsed().as_secs_f64();
    let (pass, detail) = match result {
        Ok(Ok((pass, detail))) => (pass, detail),
        Ok(Err(e)) => (false, format!("error: {e}")),
        Err(_) => (false, "panicked".into()),
    };
    println!(
        "criterion {n:>2} {}: {name}: {detail} [{secs:.1} s]",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

fn main() {
    let mut passed = 0;
    let mut total = 0;
    let mut tally = |ok: bool| {
        total += 1;
        passed += ok as usize;
    };
    tally(report(1, "masking identity", c1_masking_identity));

    let planner = trained_planner();
    let dataset = safeguard_dataset();
    let safeguard = dataset.as_ref().map_err(Clone::clone).and_then(trained_safeguard);
    let need = |what: &str| -> Result<(), String> {
        match what {
            "planner" => planner.as_ref().map(|_| ()).map_err(|e| format!("planner unavailable: {e}")),
            _ => safeguard.as_ref().map(|_| ()).map_err(|e| format!("safeguard unavailable: {e}")),
        }
    };

    tally(report(2, "authorized transparency", || {
        need("planner")?;
        need("safeguard")?;
        c2_authorized_transparency(&safeguard.as_ref().unwrap().0, &planner.as_ref().unwrap().0)
    }));
    tally(report(3, "power expansion oracle", c3_power_expansion));
    tally(report(4, "least-squares optimality", c4_ls_optimality));

    let planner_eval = planner.as_ref().map_err(Clone::clone).and_then(|(m, _)| evaluate_planner(m));
    tally(report(5, "planner vs brute force", || {
        let e = planner_eval.as_ref().map_err(Clone::clone)?;
        c5_planner(e, planner.as_ref().unwrap().1)
    }));
    tally(report(6, "baseline ordering", || {
        c6_baseline_order(planner_eval.as_ref().map_err(Clone::clone)?)
    }));
    tally(report(7, "discrete diffusion sanity", c7_discrete_diffusion));
    tally(report(8, "continuous diffusion sanity", c8_continuous_diffusion));
    tally(report(9, "gradient checks", c9_gradcheck));
    tally(report(10, "generation quality", || {
        need("safeguard")?;
        let (m, secs) = safeguard.as_ref().unwrap();
        c10_generation(m, dataset.as_ref().unwrap(), *secs)
    }));

    let mut rate_adr = Vec::new();
    let mut base_metrics = None;
    let mut protection_error = None;
    if let (Ok((p, _)), Ok((s, _))) = (&planner, &safeguard) {
        for rate in [100.0, 200.0, 400.0, 600.0] {
            let models = ExperimentModels {
                planner: Some(p),
                safeguard: Some(s),
                reference: None,
            };
            let mut adr = Vec::new();
            for seed in PROTECTION_SEEDS {
                match run_experiment(&protection_config(rate, seed), &models) {
                    Ok(out) => {
                        adr.push(out.metrics.adr);
                        if rate == 100.0 && seed == PROTECTION_SEEDS[0] {
                            base_metrics = Some(out.metrics);
                        }
                    }
                    Err(e) => protection_error = Some(format!("{rate} Hz seed {seed}: {e}")),
                }
            }
            rate_adr.push((rate, adr));
        }
    } else {
        protection_error = Some("trained models unavailable".into());
    }
    tally(report(11, "protection effect", || match &base_metrics {
        Some(m) => c11_protection(m),
        None => Err(protection_error.clone().unwrap_or_default()),
    }));
    tally(report(12, "rate robustness", || match &protection_error {
        Some(e) => Err(e.clone()),
        None => c12_rates(&rate_adr),
    }));
    tally(report(13, "determinism", || {
        need("safeguard")?;
        c13_determinism(&safeguard.as_ref().unwrap().0)
    }));
    println!("{passed}/{total} criteria passed");
}
