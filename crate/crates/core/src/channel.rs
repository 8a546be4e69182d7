//! Multipath CSI synthesis for a device layout and a user activity.
//!
//! The channel of one Tx/Rx link at subcarrier `f_n` and packet time `t` is
//!
//! ```text
//! H(f_n, t) = e^{-j eps_t} ( H_s(f_n) + sum_l a_l e^{-j 2 pi f_n d_l(t) / c} + noise )
//! ```
//!
//! where `H_s` collects the line-of-sight path and a few fixed reflectors,
//! and each dynamic path reflects off the moving user with a length that
//! changes at a piecewise-constant rate.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, streams};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Device positions and the user position, in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub devices: Vec<Point>,
    pub user: Point,
}

impl Layout {
    pub const MIN_DEVICE_SEPARATION: f64 = 0.1;

    pub fn new(devices: Vec<Point>, user: Point) -> Result<Self> {
        let l = Layout { devices, user };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<()> {
        if self.devices.len() < 2 {
            return Err(Error::InvalidLayout(format!(
                "need at least 2 devices, got {}",
                self.devices.len()
            )));
        }
        let finite = |p: &Point| p.x.is_finite() && p.y.is_finite();
        if !self.devices.iter().all(finite) || !finite(&self.user) {
            return Err(Error::InvalidLayout("non-finite coordinate".into()));
        }
        for i in 0..self.devices.len() {
            for j in i + 1..self.devices.len() {
                if self.devices[i].dist(self.devices[j]) <= Self::MIN_DEVICE_SEPARATION {
                    return Err(Error::InvalidLayout(format!("devices {i} and {j} are closer than 0.1 m")));
                }
            }
            if self.devices[i].dist(self.user) == 0.0 {
                return Err(Error::InvalidLayout(format!("user coincides with device {i}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn user_distance(&self, device: usize) -> f64 {
        self.devices[device].dist(self.user)
    }

    /// Uniform random layout in an `arena x arena` square. Devices keep at
    /// least `arena / 10` between each other and `min_user_gap` from the user.
    pub fn random(devices: usize, arena: f64, rng: &mut impl Rng) -> Self {
        let min_sep = (arena / 10.0).max(Self::MIN_DEVICE_SEPARATION * 1.01);
        let min_user_gap = (arena / 20.0).max(0.05);
        loop {
            let user = Point::new(rng.random_range(0.0..arena), rng.random_range(0.0..arena));
            let mut pts: Vec<Point> = Vec::with_capacity(devices);
            let mut attempts = 0;
            while pts.len() < devices && attempts < 10_000 {
                attempts += 1;
                let p = Point::new(rng.random_range(0.0..arena), rng.random_range(0.0..arena));
                if p.dist(user) < min_user_gap || pts.iter().any(|q| q.dist(p) < min_sep) {
                    continue;
                }
                pts.push(p);
            }
            if pts.len() == devices {
                return Layout { devices: pts, user };
            }
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let l: Layout = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        l.validate()?;
        Ok(l)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActivityKind {
    Walk,
    WaveHand,
    Sit,
    Squat,
    Fall,
    Run,
    Static,
}

impl ActivityKind {
    pub const ALL: [ActivityKind; 7] = [
        ActivityKind::Walk,
        ActivityKind::WaveHand,
        ActivityKind::Sit,
        ActivityKind::Squat,
        ActivityKind::Fall,
        ActivityKind::Run,
        ActivityKind::Static,
    ];

    /// The five activities used for recognition experiments, in class order.
    pub const RECOGNIZED: [ActivityKind; 5] = [
        ActivityKind::Walk,
        ActivityKind::WaveHand,
        ActivityKind::Sit,
        ActivityKind::Squat,
        ActivityKind::Fall,
    ];

    /// The four activities whose reciprocal channels form a composite safeguard.
    pub const COMPOSITE: [ActivityKind; 4] = [
        ActivityKind::Sit,
        ActivityKind::Walk,
        ActivityKind::Run,
        ActivityKind::Fall,
    ];

    pub fn code(self) -> &'static str {
        match self {
            ActivityKind::Walk => "WK",
            ActivityKind::WaveHand => "WH",
            ActivityKind::Sit => "ST",
            ActivityKind::Squat => "SQ",
            ActivityKind::Fall => "FL",
            ActivityKind::Run => "RN",
            ActivityKind::Static => "NONE",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code().eq_ignore_ascii_case(code))
    }
}

/// How motion is distributed over the observation window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MotionPattern {
    /// Moving for the whole window with a fixed direction per path.
    Continuous,
    /// Moving for the whole window, reversing direction every segment.
    Oscillating,
    /// One burst of the given duration range (seconds), fixed direction.
    Burst { min_s: f64, max_s: f64 },
    /// One burst that reverses direction halfway (down then up).
    ReturnBurst { min_s: f64, max_s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivityProfile {
    /// Range of `|v_l|` in m/s.
    pub speed: (f64, f64),
    /// Inclusive range of dynamic path counts.
    pub paths: (usize, usize),
    /// Scale of the reflected amplitude relative to free-space bistatic loss.
    pub reflectivity: f64,
    pub motion: MotionPattern,
}

/// Per-activity kinematic parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActivityTable {
    pub walk: ActivityProfile,
    pub wave_hand: ActivityProfile,
    pub sit: ActivityProfile,
    pub squat: ActivityProfile,
    pub fall: ActivityProfile,
    pub run: ActivityProfile,
}

impl Default for ActivityTable {
    fn default() -> Self {
        ActivityTable {
            walk: ActivityProfile {
                speed: (0.8, 2.2),
                paths: (2, 4),
                reflectivity: 0.35,
                motion: MotionPattern::Continuous,
            },
            wave_hand: ActivityProfile {
                speed: (0.2, 2.0),
                paths: (1, 2),
                reflectivity: 0.12,
                motion: MotionPattern::Oscillating,
            },
            sit: ActivityProfile {
                speed: (0.2, 1.0),
                paths: (1, 3),
                reflectivity: 0.3,
                motion: MotionPattern::Burst { min_s: 0.8, max_s: 1.2 },
            },
            squat: ActivityProfile {
                speed: (0.3, 1.2),
                paths: (1, 3),
                reflectivity: 0.3,
                motion: MotionPattern::ReturnBurst { min_s: 1.6, max_s: 2.4 },
            },
            fall: ActivityProfile {
                speed: (0.8, 1.5),
                paths: (1, 3),
                reflectivity: 0.35,
                motion: MotionPattern::Burst { min_s: 0.5, max_s: 1.0 },
            },
            run: ActivityProfile {
                speed: (2.0, 5.5),
                paths: (2, 4),
                reflectivity: 0.35,
                motion: MotionPattern::Continuous,
            },
        }
    }
}

impl ActivityTable {
    pub fn profile(&self, kind: ActivityKind) -> Option<&ActivityProfile> {
        match kind {
            ActivityKind::Walk => Some(&self.walk),
            ActivityKind::WaveHand => Some(&self.wave_hand),
            ActivityKind::Sit => Some(&self.sit),
            ActivityKind::Squat => Some(&self.squat),
            ActivityKind::Fall => Some(&self.fall),
            ActivityKind::Run => Some(&self.run),
            ActivityKind::Static => None,
        }
    }
}

/// A reflection off the moving user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicPath {
    /// Complex gain, frequency-flat.
    pub attenuation: Complex64,
    /// Path length at `t = 0`, meters.
    pub initial_length: f64,
    /// Length-change rate per segment of the motion interval, m/s.
    pub rates: Vec<f64>,
    pub segment_duration: f64,
    /// Motion interval `[start, end)` in seconds; the length is frozen outside it.
    pub motion_start: f64,
    pub motion_end: f64,
}

impl DynamicPath {
    /// A path moving at constant rate `v` for all time.
    pub fn constant(attenuation: Complex64, initial_length: f64, v: f64) -> Self {
        DynamicPath {
            attenuation,
            initial_length,
            rates: vec![v],
            segment_duration: f64::INFINITY,
            motion_start: 0.0,
            motion_end: f64::INFINITY,
        }
    }

    pub fn length_at(&self, t: f64) -> f64 {
        let end = t.min(self.motion_end);
        if end <= self.motion_start {
            return self.initial_length;
        }
        let mut travelled = 0.0;
        let mut seg_start = self.motion_start;
        for &v in &self.rates {
            let seg_end = seg_start + self.segment_duration;
            if end <= seg_start {
                break;
            }
            travelled += v * (end.min(seg_end) - seg_start);
            seg_start = seg_end;
        }
        self.initial_length + travelled
    }
}

/// A time-invariant propagation path (line of sight or fixed reflector).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticPath {
    pub gain: Complex64,
    pub length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum NoiseLevel {
    /// Noise variance set from the mean noiseless power and an SNR in dB.
    SnrDb(f64),
    Variance(f64),
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    pub subcarriers: usize,
    pub packets: usize,
    pub packet_rate: f64,
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub noise: NoiseLevel,
    /// Random common phase offset per packet.
    pub phase_offset: bool,
    pub reflectors: usize,
    /// Seed that fixes reflector positions and gains (the room).
    pub environment_seed: u64,
    pub room_size: f64,
    pub segment_duration: f64,
    pub activities: ActivityTable,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            subcarriers: 64,
            packets: 256,
            packet_rate: 100.0,
            carrier_hz: 2.8e9,
            bandwidth_hz: 100e6,
            noise: NoiseLevel::SnrDb(20.0),
            phase_offset: true,
            reflectors: 3,
            environment_seed: 0x5EED,
            room_size: 4.0,
            segment_duration: 0.5,
            activities: ActivityTable::default(),
        }
    }
}

impl ChannelParams {
    pub fn noiseless(mut self) -> Self {
        self.noise = NoiseLevel::None;
        self
    }

    pub fn subcarrier_freq(&self, n: usize) -> f64 {
        let spacing = self.bandwidth_hz / self.subcarriers as f64;
        self.carrier_hz + (n as f64 - self.subcarriers as f64 / 2.0) * spacing
    }

    pub fn duration(&self) -> f64 {
        self.packets as f64 / self.packet_rate
    }

    fn validate(&self) -> Result<()> {
        if self.subcarriers == 0 || self.packets == 0 {
            return Err(Error::InvalidArgument("need at least one subcarrier and one packet".into()));
        }
        if !(self.packet_rate > 0.0 && self.carrier_hz > 0.0 && self.bandwidth_hz >= 0.0) {
            return Err(Error::InvalidArgument("rates and frequencies must be positive".into()));
        }
        Ok(())
    }
}

/// Sample the dynamic paths caused by `kind` on the `tx -> user -> rx` link.
pub fn sample_activity_paths(
    kind: ActivityKind,
    layout: &Layout,
    tx: usize,
    rx: usize,
    params: &ChannelParams,
    rng: &mut impl Rng,
) -> Vec<DynamicPath> {
    let Some(profile) = params.activities.profile(kind) else {
        return Vec::new();
    };
    let d_tx = layout.devices[tx].dist(layout.user);
    let d_rx = layout.devices[rx].dist(layout.user);
    let min_len = d_tx + d_rx;
    let duration = params.duration();
    let seg = params.segment_duration;
    let count = rng.random_range(profile.paths.0..=profile.paths.1.max(profile.paths.0)).max(1);

    let (start, end, reversal) = match profile.motion {
        MotionPattern::Continuous | MotionPattern::Oscillating => (0.0, duration, None),
        MotionPattern::Burst { min_s, max_s } | MotionPattern::ReturnBurst { min_s, max_s } => {
            let len = rng.random_range(min_s..=max_s).min(duration);
            let start = rng.random_range(0.0..=(duration - len).max(0.0));
            let rev = matches!(profile.motion, MotionPattern::ReturnBurst { .. }).then_some(len / 2.0);
            (start, start + len, rev)
        }
    };
    let segments = (((end - start) / seg).ceil() as usize).max(1);

    (0..count)
        .map(|_| {
            let initial_length = min_len * (1.0 + rng.random_range(0.0..0.15));
            let amp = profile.reflectivity * rng.random_range(0.6..1.0) / (d_tx * d_rx);
            let attenuation = Complex64::from_polar(amp, rng.random_range(0.0..2.0 * PI));
            let mut sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let mut length = initial_length;
            let mut rates = Vec::with_capacity(segments);
            for k in 0..segments {
                let seg_start = start + k as f64 * seg;
                let seg_len = (end - seg_start).min(seg);
                if matches!(profile.motion, MotionPattern::Oscillating) && k > 0 {
                    sign = -sign;
                }
                let mut s = sign;
                if let Some(r) = reversal {
                    if seg_start - start >= r {
                        s = -sign;
                    }
                }
                let speed = rng.random_range(profile.speed.0..=profile.speed.1);
                if length - speed * seg_len < min_len {
                    s = 1.0;
                }
                length += s * speed * seg_len;
                rates.push(s * speed);
            }
            DynamicPath {
                attenuation,
                initial_length,
                rates,
                segment_duration: seg,
                motion_start: start,
                motion_end: end,
            }
        })
        .collect()
}

/// Line-of-sight path plus fixed reflectors of the room.
pub fn static_paths(layout: &Layout, tx: usize, rx: usize, params: &ChannelParams) -> Vec<StaticPath> {
    let a = layout.devices[tx];
    let b = layout.devices[rx];
    let los = a.dist(b);
    let mut paths = vec![StaticPath {
        gain: Complex64::new(1.0 / los, 0.0),
        length: los,
    }];
    let mut env = rng::stream(params.environment_seed, streams::CHANNEL);
    for _ in 0..params.reflectors {
        let p = Point::new(
            env.random_range(-0.25..1.25) * params.room_size,
            env.random_range(-0.25..1.25) * params.room_size,
        );
        let phase = env.random_range(0.0..2.0 * PI);
        let strength = env.random_range(0.1..0.4);
        let length = (a.dist(p) + p.dist(b)).max(los);
        paths.push(StaticPath {
            gain: Complex64::from_polar(strength / length, phase),
            length,
        });
    }
    paths
}

fn path_phase(freq: f64, length: f64) -> Complex64 {
    Complex64::from_polar(1.0, -2.0 * PI * freq * length / SPEED_OF_LIGHT)
}

/// Simulated CSI of one link together with its ground-truth decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiTrace {
    pub subcarriers: usize,
    pub packets: usize,
    /// `h[n * packets + w]`.
    pub h: Vec<Complex64>,
    /// `H_s(f_n)` per subcarrier.
    pub static_component: Vec<Complex64>,
    pub static_paths: Vec<StaticPath>,
    pub dynamic_paths: Vec<DynamicPath>,
    /// Per-packet common phase offset `eps_w`.
    pub phase_offsets: Vec<f64>,
    /// Additive noise before the phase rotation, same layout as `h`.
    pub noise: Vec<Complex64>,
    pub noise_variance: f64,
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub subcarrier_freqs: Vec<f64>,
    pub packet_rate: f64,
    pub seed: u64,
}

impl CsiTrace {
    pub fn at(&self, n: usize, w: usize) -> Complex64 {
        self.h[n * self.packets + w]
    }

    pub fn time(&self, w: usize) -> f64 {
        w as f64 / self.packet_rate
    }

    /// Noiseless, offset-free channel `H_s + sum_l a_l e^{-j phi_l}`.
    pub fn clean_at(&self, n: usize, w: usize) -> Complex64 {
        let f = self.subcarrier_freqs[n];
        let t = self.time(w);
        self.dynamic_paths
            .iter()
            .fold(self.static_component[n], |acc, p| acc + p.attenuation * path_phase(f, p.length_at(t)))
    }

    /// Recompute `H` from the stored components.
    pub fn reconstruct(&self) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.h.len());
        for n in 0..self.subcarriers {
            for w in 0..self.packets {
                let rot = Complex64::from_polar(1.0, -self.phase_offsets[w]);
                out.push(rot * (self.clean_at(n, w) + self.noise[n * self.packets + w]));
            }
        }
        out
    }

    pub fn to_matrix(&self) -> CsiMatrix {
        CsiMatrix {
            kind: CsiKind::Channel,
            subcarriers: self.subcarriers,
            packets: self.packets,
            carrier_hz: self.carrier_hz,
            bandwidth_hz: self.bandwidth_hz,
            packet_rate: self.packet_rate,
            seed: self.seed,
            h: self.h.clone(),
        }
    }
}

/// Render a trace from explicit paths. `phase_seed` and `noise_seed` drive
/// the per-packet offsets and the additive noise independently.
pub fn render(
    static_paths: Vec<StaticPath>,
    dynamic_paths: Vec<DynamicPath>,
    params: &ChannelParams,
    seed: u64,
    phase_seed: u64,
    noise_seed: u64,
) -> Result<CsiTrace> {
    params.validate()?;
    let n_sc = params.subcarriers;
    let w_len = params.packets;
    let freqs: Vec<f64> = (0..n_sc).map(|n| params.subcarrier_freq(n)).collect();
    let static_component: Vec<Complex64> = freqs
        .iter()
        .map(|&f| static_paths.iter().map(|p| p.gain * path_phase(f, p.length)).sum())
        .collect();

    let mut phase_rng = rng::stream(phase_seed, streams::PHASE);
    let phase_offsets: Vec<f64> = (0..w_len)
        .map(|_| {
            if params.phase_offset {
                phase_rng.random_range(0.0..2.0 * PI)
            } else {
                0.0
            }
        })
        .collect();

    let mut trace = CsiTrace {
        subcarriers: n_sc,
        packets: w_len,
        h: Vec::new(),
        static_component,
        static_paths,
        dynamic_paths,
        phase_offsets,
        noise: vec![Complex64::new(0.0, 0.0); n_sc * w_len],
        noise_variance: 0.0,
        carrier_hz: params.carrier_hz,
        bandwidth_hz: params.bandwidth_hz,
        subcarrier_freqs: freqs,
        packet_rate: params.packet_rate,
        seed,
    };

    let mut clean = Vec::with_capacity(n_sc * w_len);
    for n in 0..n_sc {
        for w in 0..w_len {
            clean.push(trace.clean_at(n, w));
        }
    }
    let variance = match params.noise {
        NoiseLevel::None => 0.0,
        NoiseLevel::Variance(v) => v,
        NoiseLevel::SnrDb(db) => {
            let mean_power = clean.iter().map(|c| c.norm_sqr()).sum::<f64>() / clean.len() as f64;
            mean_power / 10f64.powf(db / 10.0)
        }
    };
    if variance > 0.0 {
        let sd = (variance / 2.0).sqrt();
        let mut noise_rng = rng::stream(noise_seed, streams::NOISE);
        for v in trace.noise.iter_mut() {
            let re: f64 = StandardNormal.sample(&mut noise_rng);
            let im: f64 = StandardNormal.sample(&mut noise_rng);
            *v = Complex64::new(re * sd, im * sd);
        }
    }
    trace.noise_variance = variance;
    trace.h = clean
        .into_iter()
        .enumerate()
        .map(|(i, c)| Complex64::from_polar(1.0, -trace.phase_offsets[i % w_len]) * (c + trace.noise[i]))
        .collect();
    Ok(trace)
}

/// Simulate the CSI of link `tx -> rx` while the user performs `kind`.
pub fn synth_csi(
    layout: &Layout,
    tx: usize,
    rx: usize,
    kind: ActivityKind,
    params: &ChannelParams,
    seed: u64,
) -> Result<CsiTrace> {
    if tx == rx || tx >= layout.len() || rx >= layout.len() {
        return Err(Error::InvalidArgument(format!(
            "invalid link {tx} -> {rx} for {} devices",
            layout.len()
        )));
    }
    let mut path_rng = rng::stream(seed, streams::CHANNEL);
    let dynamic = sample_activity_paths(kind, layout, tx, rx, params, &mut path_rng);
    let statics = static_paths(layout, tx, rx, params);
    render(
        statics,
        dynamic,
        params,
        seed,
        rng::derive_seed(seed, streams::PHASE),
        rng::derive_seed(seed, streams::NOISE),
    )
}

/// `|H[n, w]|^2`, laid out like the trace.
pub fn csi_power(trace: &CsiTrace) -> Vec<f64> {
    trace.h.iter().map(|c| c.norm_sqr()).collect()
}

/// Closed-form expansion of `|H|^2` into constants, static-by-dynamic
/// cosines and dynamic-by-dynamic cosines. Only defined without noise.
pub fn expand_power_terms(trace: &CsiTrace) -> Result<Vec<f64>> {
    if trace.noise_variance > 0.0 || trace.noise.iter().any(|c| c.norm_sqr() > 0.0) {
        return Err(Error::InvalidArgument(
            "power expansion is only defined for noiseless traces".into(),
        ));
    }
    let two_pi_over_c = 2.0 * PI / SPEED_OF_LIGHT;
    let paths = &trace.dynamic_paths;
    let const_dyn: f64 = paths.iter().map(|p| p.attenuation.norm_sqr()).sum();
    let mut out = Vec::with_capacity(trace.h.len());
    for n in 0..trace.subcarriers {
        let f = trace.subcarrier_freqs[n];
        let hs = trace.static_component[n];
        // theta_sl = arg(H_s) - arg(a_l)
        let theta_s: Vec<f64> = paths.iter().map(|p| hs.arg() - p.attenuation.arg()).collect();
        for w in 0..trace.packets {
            let t = trace.time(w);
            let lens: Vec<f64> = paths.iter().map(|p| p.length_at(t)).collect();
            let mut v = const_dyn + hs.norm_sqr();
            for (l, p) in paths.iter().enumerate() {
                v += 2.0 * (hs.norm() * p.attenuation.norm()) * (two_pi_over_c * f * lens[l] + theta_s[l]).cos();
            }
            for l in 0..paths.len() {
                for m in l + 1..paths.len() {
                    let al = paths[l].attenuation;
                    let am = paths[m].attenuation;
                    let theta = am.arg() - al.arg();
                    let delta = lens[l] - lens[m];
                    v += 2.0 * (al.norm() * am.norm()) * (two_pi_over_c * f * delta + theta).cos();
                }
            }
            out.push(v);
        }
    }
    Ok(out)
}

/// What a [`CsiMatrix`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CsiKind {
    Channel = 0,
    Received = 1,
    Authorized = 2,
    Unauthorized = 3,
}

/// Bare CSI matrix with its acquisition header; the on-disk exchange format.
///
/// ```text
/// magic      8 bytes  "DFSSCSI1"
/// kind       u8       0 channel, 1 received symbols, 2 authorized, 3 unauthorized
/// N          u32      subcarriers
/// W          u32      packets
/// f_c        f64      carrier, Hz
/// bandwidth  f64      Hz
/// rate       f64      packets per second
/// seed       u64
/// body       for n in 0..N, for w in 0..W: re f64, im f64
/// ```
///
/// All fields little-endian.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiMatrix {
    pub kind: CsiKind,
    pub subcarriers: usize,
    pub packets: usize,
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub packet_rate: f64,
    pub seed: u64,
    pub h: Vec<Complex64>,
}

const CSI_MAGIC: &[u8; 8] = b"DFSSCSI1";
const CSI_HEADER: usize = 49;

impl CsiMatrix {
    pub fn at(&self, n: usize, w: usize) -> Complex64 {
        self.h[n * self.packets + w]
    }

    pub fn power(&self) -> Vec<f64> {
        self.h.iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn with_data(&self, kind: CsiKind, h: Vec<Complex64>) -> CsiMatrix {
        CsiMatrix {
            kind,
            h,
            ..self.clone()
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(CSI_HEADER + self.h.len() * 16);
        out.extend_from_slice(CSI_MAGIC);
        out.push(self.kind as u8);
        out.extend_from_slice(&(self.subcarriers as u32).to_le_bytes());
        out.extend_from_slice(&(self.packets as u32).to_le_bytes());
        out.extend_from_slice(&self.carrier_hz.to_le_bytes());
        out.extend_from_slice(&self.bandwidth_hz.to_le_bytes());
        out.extend_from_slice(&self.packet_rate.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for c in &self.h {
            out.extend_from_slice(&c.re.to_le_bytes());
            out.extend_from_slice(&c.im.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() < CSI_HEADER || &b[..8] != CSI_MAGIC {
            return Err(Error::Format("not a CSI file".into()));
        }
        let kind = match b[8] {
            0 => CsiKind::Channel,
            1 => CsiKind::Received,
            2 => CsiKind::Authorized,
            3 => CsiKind::Unauthorized,
            k => return Err(Error::Format(format!("unknown CSI kind {k}"))),
        };
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap()) as usize;
        let f64_at = |o: usize| f64::from_le_bytes(b[o..o + 8].try_into().unwrap());
        let subcarriers = u32_at(9);
        let packets = u32_at(13);
        let body = subcarriers * packets * 16;
        if b.len() != CSI_HEADER + body {
            return Err(Error::Format(format!(
                "CSI body has {} bytes, expected {body}",
                b.len() - CSI_HEADER
            )));
        }
        let h = (0..subcarriers * packets)
            .map(|i| Complex64::new(f64_at(CSI_HEADER + 16 * i), f64_at(CSI_HEADER + 8 + 16 * i)))
            .collect();
        Ok(CsiMatrix {
            kind,
            subcarriers,
            packets,
            carrier_hz: f64_at(17),
            bandwidth_hz: f64_at(25),
            packet_rate: f64_at(33),
            seed: u64::from_le_bytes(b[41..49].try_into().unwrap()),
            h,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut b = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut b)?;
        Self::from_bytes(&b)
    }

    /// `|H|^2` as CSV: one row per packet, one column per subcarrier.
    pub fn power_csv(&self) -> String {
        let mut s = String::from("packet,time_s");
        for n in 0..self.subcarriers {
            s.push_str(&format!(",sc{n}"));
        }
        s.push('\n');
        for w in 0..self.packets {
            s.push_str(&format!("{w},{}", w as f64 / self.packet_rate));
            for n in 0..self.subcarriers {
                s.push_str(&format!(",{}", self.at(n, w).norm_sqr()));
            }
            s.push('\n');
        }
        s
    }
}
