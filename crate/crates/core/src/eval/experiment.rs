//! End-to-end protection experiment: plan links, simulate activities on the
//! chosen link, mask the pilots with a safeguard, and compare recognition on
//! the unprotected, unauthorized and authorized channel estimates.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::classifier::{argmax, ActivityClassifier, ClassifierConfig};
use super::features::{FeatureConfig, FeatureExtractor};
use super::metrics::{compute_adr, fid_1d, nearest_ssim};
use crate::channel::{synth_csi, ActivityKind, ChannelParams, CsiMatrix, Layout, NoiseLevel};
use crate::csi::{extract_authorized, extract_unauthorized, received_symbols, BasePilot};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, try_map_indexed, ExecMode};
use crate::modulator::{modulate, resample_signal};
use crate::planner::{brute_force_optimum, plan, ssnr_link, ActivationGraph, PlannerModel, RewardParams};
use crate::rng::{self, streams};
use crate::safeguard::{composite_for_link, sample_signal, DatasetConfig, SafeguardModel, SafeguardSignal, SignalCondition};

/// Where the pilot safeguard of each trial comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafeguardMode {
    /// Pilots are not modulated.
    Off,
    /// Drawn from the trained diffusion model.
    Generated,
    /// Simulated composite of the dataset definition, drawn fresh per trial.
    Composite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Layout file; a random layout from `seed` when absent.
    pub layout: Option<PathBuf>,
    pub devices: usize,
    pub arena: f64,
    /// Activity codes in class order.
    pub activities: Vec<String>,
    pub trials_per_class: usize,
    /// Unprotected traces per class used to fit the classifier.
    pub train_trials_per_class: usize,
    pub packet_rate: f64,
    /// Observation window in seconds; packets = duration * rate.
    pub duration: f64,
    /// `None` for noiseless channels.
    pub snr_db: Option<f64>,
    pub seed: u64,
    pub safeguard: SafeguardMode,
    /// Generated signals written to `signals/` (first trials only).
    pub saved_signals: usize,
    pub features: FeatureConfig,
    pub classifier: ClassifierConfig,
    pub reward: RewardParams,
    pub mode: ExecMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            layout: None,
            devices: 5,
            arena: 4.0,
            activities: ActivityKind::RECOGNIZED.iter().map(|k| k.code().to_string()).collect(),
            trials_per_class: 50,
            train_trials_per_class: 60,
            packet_rate: 100.0,
            duration: 2.56,
            snr_db: Some(20.0),
            seed: 1,
            safeguard: SafeguardMode::Generated,
            saved_signals: 5,
            features: FeatureConfig::default(),
            classifier: ClassifierConfig::default(),
            reward: RewardParams::default(),
            mode: ExecMode::available(),
        }
    }
}

impl ExperimentConfig {
    pub fn classes(&self) -> Result<Vec<ActivityKind>> {
        let classes = self
            .activities
            .iter()
            .map(|c| ActivityKind::from_code(c).ok_or_else(|| Error::InvalidArgument(format!("unknown activity `{c}`"))))
            .collect::<Result<Vec<_>>>()?;
        if classes.len() < 2 {
            return Err(Error::InvalidArgument("need at least two activities".into()));
        }
        if let Some(k) = classes.iter().find(|k| !ActivityKind::RECOGNIZED.contains(k)) {
            return Err(Error::InvalidArgument(format!("`{}` is not a recognized activity", k.code())));
        }
        Ok(classes)
    }

    pub fn packets(&self) -> usize {
        (self.duration * self.packet_rate).round() as usize
    }

    pub fn channel(&self) -> ChannelParams {
        ChannelParams {
            packets: self.packets(),
            packet_rate: self.packet_rate,
            noise: self.snr_db.map_or(NoiseLevel::None, NoiseLevel::SnrDb),
            ..ChannelParams::default()
        }
    }

    pub fn load_layout(&self) -> Result<Layout> {
        match &self.layout {
            Some(p) => Layout::load(p),
            None => Ok(Layout::random(
                self.devices,
                self.arena,
                &mut rng::stream(self.seed, streams::LAYOUT),
            )),
        }
    }

    fn validate(&self) -> Result<()> {
        self.classes()?;
        if self.trials_per_class == 0 || self.train_trials_per_class == 0 {
            return Err(Error::InvalidArgument("trial counts must be positive".into()));
        }
        if !(self.packet_rate > 0.0 && self.duration > 0.0) {
            return Err(Error::InvalidArgument("packet rate and duration must be positive".into()));
        }
        Ok(())
    }
}

/// Trained components an experiment draws on. Without a planner the
/// brute-force optimum of the layout is used.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExperimentModels<'a> {
    pub planner: Option<&'a PlannerModel>,
    pub safeguard: Option<&'a SafeguardModel>,
    /// Training signals for nearest-SSIM and FID of the generated safeguards.
    pub reference: Option<&'a [Vec<f64>]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathMetrics {
    pub accuracy: f64,
    pub per_class: Vec<f64>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl PathMetrics {
    fn from_predictions(classes: usize, truth: &[usize], pred: &[usize]) -> Self {
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&t, &p) in truth.iter().zip(pred) {
            confusion[t][p] += 1;
        }
        let per_class = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| row[c] as f64 / row.iter().sum::<usize>().max(1) as f64)
            .collect();
        let hits = truth.iter().zip(pred).filter(|(t, p)| t == p).count();
        PathMetrics {
            accuracy: hits as f64 / truth.len().max(1) as f64,
            per_class,
            confusion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationMetrics {
    /// Nearest-training SSIM of each saved trial's safeguard.
    pub nearest_ssim: Vec<f64>,
    pub fid: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub classes: Vec<String>,
    pub layout: Layout,
    pub graph: ActivationGraph,
    pub plan_reward: f64,
    /// `(tx, rx)` of the sensed link.
    pub target_link: (usize, usize),
    pub packet_rate: f64,
    pub train_accuracy: f64,
    pub unprotected: PathMetrics,
    pub unauthorized: PathMetrics,
    pub authorized: PathMetrics,
    /// Accuracy degradation of the unauthorized path.
    pub adr: f64,
    pub generation: Option<GenerationMetrics>,
    /// Set when any stage failed; metrics cover the finished trials only.
    pub partial: Option<String>,
}

impl Metrics {
    /// `metric,path,class,value` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,path,class,value\n");
        for (name, m) in self.paths() {
            for (c, a) in self.classes.iter().zip(&m.per_class) {
                let _ = writeln!(s, "accuracy,{name},{c},{a}");
            }
            let _ = writeln!(s, "accuracy,{name},all,{}", m.accuracy);
        }
        let _ = writeln!(s, "adr,unauthorized,all,{}", self.adr);
        let _ = writeln!(s, "train_accuracy,unprotected,all,{}", self.train_accuracy);
        let _ = writeln!(s, "plan_reward,planner,all,{}", self.plan_reward);
        if let Some(g) = &self.generation {
            if !g.nearest_ssim.is_empty() {
                let _ = writeln!(s, "ssim_median,generated,all,{}", median(&g.nearest_ssim));
            }
            if let Some(f) = g.fid {
                let _ = writeln!(s, "fid,generated,all,{f}");
            }
        }
        s
    }

    /// `path,true,<predicted classes..>` rows.
    pub fn confusion_csv(&self) -> String {
        let mut s = format!("path,true,{}\n", self.classes.join(","));
        for (name, m) in self.paths() {
            for (c, row) in self.classes.iter().zip(&m.confusion) {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(s, "{name},{c},{}", cells.join(","));
            }
        }
        s
    }

    fn paths(&self) -> [(&'static str, &PathMetrics); 3] {
        [
            ("unprotected", &self.unprotected),
            ("unauthorized", &self.unauthorized),
            ("authorized", &self.authorized),
        ]
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 0 {
        0.5 * (s[m - 1] + s[m])
    } else {
        s[m]
    }
}

/// Plan for the layout and pick the active link with the highest SSNR.
pub fn choose_link(
    layout: &Layout,
    planner: Option<&PlannerModel>,
    reward: &RewardParams,
    seed: u64,
) -> Result<(ActivationGraph, f64, (usize, usize))> {
    let (graph, value) = match planner {
        Some(m) => {
            let p = plan(m, layout, reward, seed)?;
            (p.graph, p.reward)
        }
        None => brute_force_optimum(layout, reward)?,
    };
    let mut best: Option<((usize, usize), f64)> = None;
    for (tx, rx) in graph.links() {
        let s = ssnr_link(layout, tx, rx, reward)?;
        if best.is_none_or(|(_, b)| s > b) {
            best = Some(((tx, rx), s));
        }
    }
    let (link, _) = best.ok_or_else(|| Error::Degenerate("plan activates no Tx-Rx link".into()))?;
    Ok((graph, value, link))
}

struct TrialOutcome {
    truth: usize,
    unprotected: usize,
    unauthorized: usize,
    authorized: usize,
    signal: Option<SafeguardSignal>,
}

/// Per-trial seed; training trials use a disjoint index range.
pub fn trial_seed(seed: u64, index: u64) -> u64 {
    rng::derive_seed(rng::derive_seed(seed, streams::TRIAL), index)
}

const TRAIN_OFFSET: u64 = 1 << 40;

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub metrics: Metrics,
    /// Safeguards of the first `saved_signals` trials.
    pub signals: Vec<SafeguardSignal>,
}

/// Run the full pipeline. A failing trial stops the run; metrics then cover
/// the trials before it and [`Metrics::partial`] records the failure.
pub fn run_experiment(cfg: &ExperimentConfig, models: &ExperimentModels) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let classes = cfg.classes()?;
    let k = classes.len();
    let layout = cfg.load_layout()?;
    let (graph, plan_reward, link) = choose_link(&layout, models.planner, &cfg.reward, rng::derive_seed(cfg.seed, 1))?;
    let params = cfg.channel();
    let extractor = FeatureExtractor::new(cfg.features.clone())?;
    let condition = SignalCondition::from_plan(&layout, link, &graph.links(), cfg.arena)?.encode();
    let safeguard_model = match cfg.safeguard {
        SafeguardMode::Generated => Some(models.safeguard.ok_or_else(|| {
            Error::InvalidArgument("generated safeguards need a trained safeguard model".into())
        })?),
        _ => None,
    };
    let base = BasePilot::random(params.subcarriers, &mut rng::stream(cfg.seed, streams::TRIAL));

    let train_n = k * cfg.train_trials_per_class;
    let train = try_map_indexed(cfg.mode, train_n, |i| {
        let c = i % k;
        let t = synth_csi(&layout, link.0, link.1, classes[c], &params, trial_seed(cfg.seed, TRAIN_OFFSET + i as u64))?;
        extractor.extract(&t.to_matrix().power(), t.subcarriers, t.packets)
    })?;
    let train_labels: Vec<usize> = (0..train_n).map(|i| i % k).collect();
    let clf = ActivityClassifier::train(classes.clone(), &train, &train_labels, &cfg.classifier, cfg.seed)?;
    let train_accuracy = clf.accuracy(&train, &train_labels)?;

    let test_n = k * cfg.trials_per_class;
    let trial = |i: usize| -> Result<TrialOutcome> {
        let c = i % k;
        let seed = trial_seed(cfg.seed, i as u64);
        let trace = synth_csi(&layout, link.0, link.1, classes[c], &params, seed)?;
        let h = trace.to_matrix();
        let predict = |m: &CsiMatrix| -> Result<usize> {
            let f = extractor.extract(&m.power(), m.subcarriers, m.packets)?;
            Ok(argmax(&clf.log_probs(std::slice::from_ref(&f))?[0]))
        };
        let unprotected = predict(&h)?;
        let signal = match cfg.safeguard {
            SafeguardMode::Off => None,
            SafeguardMode::Generated => {
                let m = safeguard_model.expect("checked above");
                let s = sample_signal(m, &condition, seed)?;
                Some(if s.sample_rate != params.packet_rate {
                    resample_signal(&s, params.packet_rate)?
                } else {
                    s
                })
            }
            SafeguardMode::Composite => Some(SafeguardSignal::new(
                composite_for_link(&layout, link, &params, &DatasetConfig::default(), rng::derive_seed(seed, 7))?,
                params.packet_rate,
            )),
        };
        let (unauthorized, authorized) = match &signal {
            None => (unprotected, unprotected),
            Some(s) => {
                let y = received_symbols(&modulate(&base, s, params.packets)?, &h)?;
                (
                    predict(&extract_unauthorized(&y, &base)?)?,
                    predict(&extract_authorized(&y, &base, s)?)?,
                )
            }
        };
        Ok(TrialOutcome {
            truth: c,
            unprotected,
            unauthorized,
            authorized,
            signal,
        })
    };
    let results: Vec<Result<TrialOutcome>> = map_indexed(cfg.mode, test_n, trial);
    let mut outcomes = Vec::with_capacity(test_n);
    let mut partial = None;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                partial = Some(format!("trial {i}: {e}"));
                break;
            }
        }
    }
    if outcomes.is_empty() {
        return Err(Error::Degenerate(partial.unwrap_or_else(|| "no trials ran".into())));
    }
    let truth: Vec<usize> = outcomes.iter().map(|o| o.truth).collect();
    let path = |f: fn(&TrialOutcome) -> usize| {
        let pred: Vec<usize> = outcomes.iter().map(f).collect();
        PathMetrics::from_predictions(k, &truth, &pred)
    };
    let unprotected = path(|o| o.unprotected);
    let unauthorized = path(|o| o.unauthorized);
    let authorized = path(|o| o.authorized);
    let adr = compute_adr(unprotected.accuracy, unauthorized.accuracy)?;

    let generation = match (cfg.safeguard, models.reference) {
        (SafeguardMode::Generated, Some(reference)) => {
            let model = safeguard_model.expect("checked above");
            let signals: Vec<Vec<f64>> = outcomes
                .iter()
                .filter_map(|o| o.signal.as_ref())
                .map(|s| {
                    if s.sample_rate == model.sample_rate {
                        Ok(s.samples.clone())
                    } else {
                        resample_signal(s, model.sample_rate).map(|r| r.samples)
                    }
                })
                .collect::<Result<_>>()?;
            let nearest = signals
                .iter()
                .take(cfg.saved_signals.max(1))
                .map(|s| nearest_ssim(s, reference).map(|v| v.0))
                .collect::<Result<Vec<_>>>()?;
            let fid = if signals.len() >= 32 && reference.len() >= 32 {
                Some(fid_1d(reference, &signals, cfg.seed)?)
            } else {
                None
            };
            Some(GenerationMetrics {
                nearest_ssim: nearest,
                fid,
            })
        }
        _ => None,
    };
    let signals = outcomes
        .into_iter()
        .filter_map(|o| o.signal)
        .take(cfg.saved_signals)
        .collect();
    let metrics = Metrics {
        classes: classes.iter().map(|c| c.code().to_string()).collect(),
        layout,
        graph,
        plan_reward,
        target_link: link,
        packet_rate: cfg.packet_rate,
        train_accuracy,
        unprotected,
        unauthorized,
        authorized,
        adr,
        generation,
        partial,
    };
    Ok(ExperimentOutput { metrics, signals })
}

/// Write `metrics.csv`, `confusion.csv`, `metrics.json` and `signals/*.csv`.
pub fn write_outputs(dir: &Path, metrics: &Metrics, signals: &[SafeguardSignal]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir.join("signals"))?;
    let mut written = Vec::new();
    let mut put = |name: PathBuf, body: String| -> Result<()> {
        std::fs::write(&name, body)?;
        written.push(name);
        Ok(())
    };
    put(dir.join("metrics.csv"), metrics.to_csv())?;
    put(dir.join("confusion.csv"), metrics.confusion_csv())?;
    put(dir.join("metrics.json"), serde_json::to_string_pretty(metrics)?)?;
    for (i, s) in signals.iter().enumerate() {
        put(dir.join("signals").join(format!("trial_{i:04}.csv")), s.to_csv())?;
    }
    Ok(written)
}
