use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use dfss_core::channel::{ChannelParams, Layout};
use dfss_core::exec::ExecMode;
use dfss_core::planner::model::{rollouts, LayoutContext};
use dfss_core::planner::{PlannerArch, PlannerModel, RewardParams};
use dfss_core::rng;
use dfss_core::safeguard::{build_dataset, DatasetConfig};

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn dataset(c: &mut Criterion) {
    let params = ChannelParams::default();
    let cfg = DatasetConfig {
        count: 32,
        ..DatasetConfig::default()
    };
    let mut group = c.benchmark_group("build_dataset");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| build_dataset(&[], &params, &cfg, 3, mode).unwrap())
        });
    }
    group.finish();
}

fn planner_rollouts(c: &mut Criterion) {
    let reward = RewardParams::default();
    let model = PlannerModel::new(&PlannerArch::default(), 30, 4.0, 1).unwrap();
    let mut r = rng::stream(2, 0);
    let contexts: Vec<LayoutContext> = (0..8)
        .map(|_| LayoutContext::new(&Layout::random(5, 4.0, &mut r), &reward, 4.0).unwrap())
        .collect();
    let mut group = c.benchmark_group("planner_rollouts");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| rollouts(&model, &contexts, 4, &reward, 5, mode).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, dataset, planner_rollouts);
criterion_main!(benches);
