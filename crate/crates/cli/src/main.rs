use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dfss_core::channel::{synth_csi, ActivityKind, ChannelParams, CsiMatrix, Layout};
use dfss_core::csi::{extract_authorized, extract_unauthorized, received_symbols, BasePilot};
use dfss_core::eval::{run_experiment, write_outputs, ExperimentConfig, ExperimentModels};
use dfss_core::exec::ExecMode;
use dfss_core::modulator::{modulate, resample_signal, SeedHandshake};
use dfss_core::planner::{
    best_of, plan, train_policy_gradient, PlannerModel, PlannerTrainConfig, RewardParams, TrainingLayouts,
};
use dfss_core::rng;
use dfss_core::safeguard::{
    build_dataset, sample_signal, train_denoiser, DatasetConfig, SafeguardDataset, SafeguardModel, SafeguardSignal,
    SignalCondition, TrainConfig,
};
use dfss_core::verify::gradcheck_suite;

#[derive(Parser, Debug)]
#[command(name = "dfss", version, about = "Secure CSI sensing: link planning, safeguard generation and evaluation")]
struct Cli {
    /// TOML configuration; omitted sections take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `seed` in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum Command {
    /// Simulate CSI traces of one link for one activity.
    Simulate(SimulateArgs),
    /// Simulate the composite safeguard training set.
    BuildDataset(BuildDatasetArgs),
    /// Train the link planner with reward feedback.
    TrainPlanner,
    /// Plan the active links of a layout.
    Plan(PlanArgs),
    /// Train the safeguard denoiser on a dataset.
    TrainSafeguard(TrainSafeguardArgs),
    /// Generate safeguards and the handshakes that reproduce them.
    Generate(GenerateArgs),
    /// Mask a CSI trace with a safeguard and extract both receivers' estimates.
    Modulate(ModulateArgs),
    /// Run the protection experiment.
    Evaluate(EvaluateArgs),
    /// Finite-difference check of every network layer.
    Gradcheck,
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct SimulateArgs {
    /// Layout JSON; a random layout from the seed when omitted.
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    tx: usize,
    #[arg(long, default_value_t = 1)]
    rx: usize,
    /// Activity code (WK, WH, ST, SQ, FL, SI, RN).
    #[arg(long, default_value = "WK")]
    activity: String,
    #[arg(long, default_value_t = 1)]
    trials: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct BuildDatasetArgs {
    /// Layout JSON files to draw records from; random layouts when omitted.
    #[arg(long)]
    layouts: Vec<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct PlanArgs {
    #[arg(long)]
    planner: Option<PathBuf>,
    #[arg(long)]
    layout: Option<PathBuf>,
    /// Keep the best of this many samples instead of the first valid one.
    #[arg(long)]
    best_of: Option<usize>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct TrainSafeguardArgs {
    #[arg(long)]
    dataset: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct GenerateArgs {
    #[arg(long)]
    safeguard: PathBuf,
    /// Condition as JSON (a `SignalCondition` or a raw encoded vector).
    #[arg(long, conflicts_with = "layout")]
    condition: Option<PathBuf>,
    /// Layout JSON; the condition is built from `--link` pairs.
    #[arg(long)]
    layout: Option<PathBuf>,
    /// Link `tx:rx`; the first is the sensed link.
    #[arg(long, value_parser = parse_link)]
    link: Vec<(usize, usize)>,
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Packet rate to resample to.
    #[arg(long)]
    rate: Option<f64>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct ModulateArgs {
    /// CSI matrix written by `simulate`.
    #[arg(long)]
    csi: PathBuf,
    /// Safeguard CSV written by `generate`.
    #[arg(long)]
    signal: PathBuf,
    /// Seed of the BPSK base pilot.
    #[arg(long, default_value_t = 0)]
    pilot_seed: u64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct EvaluateArgs {
    #[arg(long)]
    planner: Option<PathBuf>,
    #[arg(long)]
    safeguard: Option<PathBuf>,
    /// Training dataset used as the reference for SSIM and FID.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct ReplayArgs {
    manifest: PathBuf,
}

fn parse_link(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected tx:rx")?;
    Ok((
        a.trim().parse().map_err(|_| "bad tx index")?,
        b.trim().parse().map_err(|_| "bad rx index")?,
    ))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct Config {
    seed: u64,
    exec: Option<ExecMode>,
    channel: ChannelParams,
    reward: RewardParams,
    dataset: DatasetConfig,
    planner: PlannerTrainConfig,
    safeguard: TrainConfig,
    experiment: ExperimentConfig,
}

impl Config {
    fn mode(&self) -> ExecMode {
        self.exec.unwrap_or_else(ExecMode::available)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: String,
    command: Command,
    seed: u64,
    config_sha256: String,
    config: String,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path).with_context(|| format!("reading {}", path.display()))?)))
}

struct Run {
    out: PathBuf,
    inputs: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    fn write(&mut self, name: impl AsRef<Path>, body: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.out.join(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    fn record(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }
}

fn load_layout(path: Option<&Path>, cfg: &Config, run: &mut Run) -> Result<Layout> {
    Ok(match path {
        Some(p) => {
            run.input(p)?;
            Layout::load(p)?
        }
        None => Layout::random(
            cfg.dataset.devices,
            cfg.dataset.arena,
            &mut rng::stream(cfg.seed, rng::streams::LAYOUT),
        ),
    })
}

fn simulate(a: &SimulateArgs, cfg: &Config, run: &mut Run) -> Result<()> {
    let kind = ActivityKind::from_code(&a.activity).with_context(|| format!("unknown activity {}", a.activity))?;
    let layout = load_layout(a.layout.as_deref(), cfg, run)?;
    run.write("layout.json", serde_json::to_string_pretty(&layout)?)?;
    for i in 0..a.trials {
        let seed = rng::derive_seed(cfg.seed, i as u64);
        let m = synth_csi(&layout, a.tx, a.rx, kind, &cfg.channel, seed)?.to_matrix();
        let stem = format!("csi/{}_{i:04}", kind.code());
        run.write(format!("{stem}.bin"), m.to_bytes())?;
        run.write(format!("{stem}_power.csv"), m.power_csv())?;
    }
    println!("simulated {} {} trace(s) on link {} -> {}", a.trials, kind.code(), a.tx, a.rx);
    Ok(())
}

fn build(a: &BuildDatasetArgs, cfg: &Config, run: &mut Run) -> Result<()> {
    let mut layouts = Vec::new();
    for p in &a.layouts {
        run.input(p)?;
        layouts.push(Layout::load(p)?);
    }
    let ds = build_dataset(&layouts, &cfg.channel, &cfg.dataset, cfg.seed, cfg.mode())?;
    run.write("dataset.bin", ds.to_bytes()?)?;
    println!("dataset: {} records, {} skipped", ds.len(), ds.provenance.skipped);
    Ok(())
}

fn train_planner(cfg: &Config, run: &mut Run) -> Result<()> {
    let mut pc = cfg.planner.clone();
    pc.abort_checkpoint.get_or_insert_with(|| run.out.join("planner_abort.ckpt"));
    let (model, curve) = train_policy_gradient(&TrainingLayouts::Random, &cfg.reward, &pc, cfg.seed, cfg.mode(), |s| {
        log::info!("epoch {} mean reward {:.3}", s.epoch, s.mean);
    })?;
    let path = run.out.join("planner.ckpt");
    model.save(&path)?;
    run.record(path);
    run.write("reward_curve.csv", curve.to_csv())?;
    println!(
        "planner trained: final mean reward {:.3}",
        curve.rows.last().map_or(f64::NAN, |r| r.mean)
    );
    Ok(())
}

fn plan_cmd(a: &PlanArgs, cfg: &Config, run: &mut Run) -> Result<()> {
    let layout = load_layout(a.layout.as_deref(), cfg, run)?;
    let (graph, value) = match &a.planner {
        Some(p) => {
            run.input(p)?;
            let model = PlannerModel::load(p)?;
            let plan = match a.best_of {
                Some(k) => best_of(&model, &layout, &cfg.reward, k, cfg.seed)?,
                None => plan(&model, &layout, &cfg.reward, cfg.seed)?,
            };
            (plan.graph, plan.reward)
        }
        None => dfss_core::planner::brute_force_optimum(&layout, &cfg.reward)?,
    };
    let path = run.out.join("plan.json");
    fs::create_dir_all(&run.out)?;
    graph.save(&path)?;
    run.record(path);
    run.write("layout.json", serde_json::to_string_pretty(&layout)?)?;
    println!("reward {value:.4}; links {:?}", graph.links());
    Ok(())
}

fn train_safeguard(a: &TrainSafeguardArgs, cfg: &Config, run: &mut Run) -> Result<()> {
    run.input(&a.dataset)?;
    let ds = SafeguardDataset::load(&a.dataset)?;
    let mut tc = cfg.safeguard.clone();
    tc.abort_checkpoint.get_or_insert_with(|| run.out.join("safeguard_abort.ckpt"));
    let (model, report) = train_denoiser(&ds, &tc, cfg.seed, cfg.mode(), |e, l| {
        log::info!("epoch {e} loss {l:.5}");
    })?;
    let path = run.out.join("safeguard.ckpt");
    fs::create_dir_all(&run.out)?;
    model.save(&path)?;
    run.record(path);
    let mut csv = String::from("epoch,loss\n");
    for (e, l) in report.loss_curve.iter().enumerate() {
        csv.push_str(&format!("{e},{l}\n"));
    }
    run.write("loss_curve.csv", csv)?;
    println!("safeguard trained: final loss {:.5}", report.loss_curve.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

fn read_condition(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    if let Ok(c) = serde_json::from_str::<SignalCondition>(&text) {
        return Ok(c.encode());
    }
    serde_json::from_str::<Vec<f64>>(&text).context("condition is neither a SignalCondition nor a vector")
}

fn generate(a: &GenerateArgs, cfg: &Config, run: &mut Run) -> Result<()> {
    run.input(&a.safeguard)?;
    let model = SafeguardModel::load(&a.safeguard)?;
    let condition = match (&a.condition, &a.layout) {
        (Some(p), _) => {
            run.input(p)?;
            read_condition(p)?
        }
        (None, Some(p)) => {
            run.input(p)?;
            let layout = Layout::load(p)?;
            let (target, rest) = a.link.split_first().context("--layout needs at least one --link")?;
            SignalCondition::from_plan(&layout, *target, rest, cfg.dataset.arena)?.encode()
        }
        (None, None) => bail!("generate needs --condition or --layout"),
    };
    for i in 0..a.count {
        let seed = rng::derive_seed(cfg.seed, i as u64);
        let mut signal = sample_signal(&model, &condition, seed)?;
        let mut hs = SeedHandshake::new(&model, condition.clone(), seed);
        if let Some(rate) = a.rate {
            signal = resample_signal(&signal, rate)?;
            hs.packet_rate = Some(rate);
        }
        run.write(format!("signals/signal_{i:04}.csv"), signal.to_csv())?;
        run.write(format!("handshakes/signal_{i:04}.json"), serde_json::to_string_pretty(&hs)?)?;
    }
    println!("generated {} safeguard(s)", a.count);
    Ok(())
}

fn modulate_cmd(a: &ModulateArgs, run: &mut Run) -> Result<()> {
    run.input(&a.csi)?;
    run.input(&a.signal)?;
    let h = CsiMatrix::load(&a.csi)?;
    let mut s = SafeguardSignal::load(&a.signal)?;
    if s.sample_rate != h.packet_rate {
        s = resample_signal(&s, h.packet_rate)?;
    }
    let base = BasePilot::random(h.subcarriers, &mut rng::stream(a.pilot_seed, rng::streams::TRIAL));
    let y = received_symbols(&modulate(&base, &s, h.packets)?, &h)?;
    let seen = extract_unauthorized(&y, &base)?;
    let auth = extract_authorized(&y, &base, &s)?;
    run.write("unauthorized.bin", seen.to_bytes())?;
    run.write("unauthorized_power.csv", seen.power_csv())?;
    run.write("authorized.bin", auth.to_bytes())?;
    run.write("authorized_power.csv", auth.power_csv())?;
    let err = auth
        .h
        .iter()
        .zip(&h.h)
        .map(|(a, b)| (a - b).norm() / b.norm().max(1e-300))
        .fold(0.0, f64::max);
    println!("authorized max relative error {err:.3e}");
    Ok(())
}

fn evaluate(a: &EvaluateArgs, cfg: &Config, run: &mut Run) -> Result<()> {
    let mut ec = cfg.experiment.clone();
    ec.seed = cfg.seed;
    ec.reward = cfg.reward.clone();
    ec.mode = cfg.mode();
    if let Some(p) = &ec.layout {
        run.input(p)?;
    }
    let planner = match &a.planner {
        Some(p) => {
            run.input(p)?;
            Some(PlannerModel::load(p)?)
        }
        None => None,
    };
    let safeguard = match &a.safeguard {
        Some(p) => {
            run.input(p)?;
            Some(SafeguardModel::load(p)?)
        }
        None => None,
    };
    let reference = match &a.dataset {
        Some(p) => {
            run.input(p)?;
            Some(SafeguardDataset::load(p)?.signals)
        }
        None => None,
    };
    let models = ExperimentModels {
        planner: planner.as_ref(),
        safeguard: safeguard.as_ref(),
        reference: reference.as_deref(),
    };
    let out = run_experiment(&ec, &models)?;
    for p in write_outputs(&run.out, &out.metrics, &out.signals)? {
        run.record(p);
    }
    let m = &out.metrics;
    println!(
        "accuracy unprotected {:.3} unauthorized {:.3} authorized {:.3}; ADR {:.3}",
        m.unprotected.accuracy, m.unauthorized.accuracy, m.authorized.accuracy, m.adr
    );
    if let Some(reason) = &m.partial {
        eprintln!("warning: partial results ({reason})");
    }
    Ok(())
}

fn gradcheck_cmd(cfg: &Config, run: &mut Run) -> Result<()> {
    let checks = gradcheck_suite(cfg.seed)?;
    let mut csv = String::from("layer,max_rel_error,coords\n");
    let mut failed = Vec::new();
    for c in &checks {
        println!("{:<20} {:.3e} ({} coords)", c.name, c.max_rel_error, c.coords_checked);
        csv.push_str(&format!("{},{},{}\n", c.name, c.max_rel_error, c.coords_checked));
        if !(c.max_rel_error <= 1e-4) {
            failed.push(c.name);
        }
    }
    run.write("gradcheck.csv", csv)?;
    if !failed.is_empty() {
        bail!("gradient check failed for {failed:?}");
    }
    Ok(())
}

fn execute(command: &Command, cfg: &Config, config_text: &str, out: &Path) -> Result<()> {
    if let Command::Replay(r) = command {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&r.manifest)?)?;
        let cfg: Config = toml::from_str(&manifest.config)?;
        let digest = hex::encode(Sha256::digest(manifest.config.as_bytes()));
        if digest != manifest.config_sha256 {
            bail!("manifest config hash mismatch");
        }
        for (path, hash) in &manifest.inputs {
            let now = sha256_file(Path::new(path))?;
            if &now != hash {
                bail!("input {path} changed since the recorded run");
            }
        }
        return execute(&manifest.command, &cfg, &manifest.config, out);
    }
    let mut run = Run {
        out: out.to_path_buf(),
        inputs: BTreeMap::new(),
        outputs: Vec::new(),
    };
    fs::create_dir_all(out)?;
    match command {
        Command::Simulate(a) => simulate(a, cfg, &mut run)?,
        Command::BuildDataset(a) => build(a, cfg, &mut run)?,
        Command::TrainPlanner => train_planner(cfg, &mut run)?,
        Command::Plan(a) => plan_cmd(a, cfg, &mut run)?,
        Command::TrainSafeguard(a) => train_safeguard(a, cfg, &mut run)?,
        Command::Generate(a) => generate(a, cfg, &mut run)?,
        Command::Modulate(a) => modulate_cmd(a, &mut run)?,
        Command::Evaluate(a) => evaluate(a, cfg, &mut run)?,
        Command::Gradcheck => gradcheck_cmd(cfg, &mut run)?,
        Command::Replay(_) => unreachable!("handled above"),
    }
    let mut outputs = BTreeMap::new();
    for p in &run.outputs {
        let rel = p.strip_prefix(out).unwrap_or(p);
        outputs.insert(rel.display().to_string(), sha256_file(p)?);
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.clone(),
        seed: cfg.seed,
        config_sha256: hex::encode(Sha256::digest(config_text.as_bytes())),
        config: config_text.to_string(),
        inputs: run.inputs,
        outputs,
    };
    fs::write(out.join("run_manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut cfg: Config = match &cli.config {
        Some(p) => toml::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let config_text = toml::to_string(&cfg)?;
    execute(&cli.command, &cfg, &config_text, &cli.out)
}
