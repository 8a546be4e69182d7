//! Link and node activation planning with a reward-trained discrete graph
//! diffusion model.

pub mod diffusion;
pub mod graph;
pub mod model;
pub mod oracle;
pub mod reward;

pub use diffusion::{forward_noise_graph, TransitionSchedule};
pub use graph::{ActivationGraph, NodeRole};
pub use model::{
    best_of, denoise_step, plan, sample_graph, train_policy_gradient, Baseline, Plan, PlannerArch, PlannerCondition,
    PlannerModel, PlannerTrainConfig, RewardCurve, RewardStats, SampledGraph, TrainingLayouts,
};
pub use oracle::{baseline_greedy, baseline_random, brute_force_optimum, BaselineMode};
pub use reward::{reward, ssnr_from_paths, ssnr_link, violations, LinkTable, RewardParams};
