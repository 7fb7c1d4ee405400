use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::eval::DEFAULT_BUDGET_STEPS;
use crate::llm::RemoteConfig;
use crate::skill::{DEFAULT_DELTA_MAX, DEFAULT_POOL_THRESHOLD};

use super::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    ColdStart,
    TransferWithRef,
    TransferSkillOnly,
    GaOnly,
}

impl RunMode {
    pub fn is_transfer(self) -> bool {
        matches!(self, RunMode::TransferWithRef | RunMode::TransferSkillOnly)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    pub no_diagnose: bool,
    pub no_merge: bool,
    pub pure_llm: bool,
    pub no_l2_l3: bool,
}

/// Everything that determines a run. Saved verbatim as the run's
/// `config.snapshot`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: String,
    pub scale: usize,
    pub budget: u64,
    pub master_seed: u64,
    pub mode: RunMode,
    #[serde(default = "defaults::generation_size")]
    pub generation_size: usize,
    #[serde(default = "defaults::path_a_slots")]
    pub path_a_slots: usize,
    #[serde(default = "defaults::path_b_slots")]
    pub path_b_slots: usize,
    #[serde(default = "defaults::elite_pool_k")]
    pub elite_pool_k: usize,
    pub mutation_range: (usize, usize),
    #[serde(default = "defaults::delta_max")]
    pub delta_max: f64,
    #[serde(default = "defaults::pool_threshold")]
    pub pool_threshold: usize,
    #[serde(default = "defaults::prior_only_k")]
    pub prior_only_k: u64,
    #[serde(default = "defaults::static_elite_pool")]
    pub static_elite_pool: usize,
    /// Per-voxel resampling rate of GA mutation.
    #[serde(default = "defaults::mutation_rate")]
    pub mutation_rate: f64,
    /// Fraction of the cumulative population kept as GA parents in
    /// `ga_only` mode.
    #[serde(default = "defaults::ga_survival_rate")]
    pub ga_survival_rate: f64,
    #[serde(default)]
    pub ablations: Ablations,
    /// `surrogate`, `surrogate:<profile>` or `external:<endpoint>`.
    #[serde(default = "defaults::evaluator")]
    pub evaluator: String,
    /// `heuristic`, `scripted:<dir>` or `remote`.
    #[serde(default = "defaults::backend")]
    pub backend: String,
    #[serde(default = "defaults::budget_steps")]
    pub budget_steps: u64,
    #[serde(default = "defaults::parallelism")]
    pub parallelism: usize,
    #[serde(default = "defaults::evaluator_timeout")]
    pub evaluator_timeout_secs: f64,
    /// Run directory whose library seeds a transfer run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_run: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_desc: Option<String>,
    #[serde(default)]
    pub remote: RemoteConfig,
}

mod defaults {
    pub fn generation_size() -> usize {
        25
    }
    pub fn path_a_slots() -> usize {
        15
    }
    pub fn path_b_slots() -> usize {
        10
    }
    pub fn elite_pool_k() -> usize {
        5
    }
    pub fn delta_max() -> f64 {
        super::DEFAULT_DELTA_MAX
    }
    pub fn pool_threshold() -> usize {
        super::DEFAULT_POOL_THRESHOLD
    }
    pub fn prior_only_k() -> u64 {
        5
    }
    pub fn static_elite_pool() -> usize {
        5
    }
    pub fn mutation_rate() -> f64 {
        crate::voxel::DEFAULT_MUTATION_RATE
    }
    pub fn ga_survival_rate() -> f64 {
        0.5
    }
    pub fn evaluator() -> String {
        "surrogate".into()
    }
    pub fn backend() -> String {
        "heuristic".into()
    }
    pub fn budget_steps() -> u64 {
        super::DEFAULT_BUDGET_STEPS
    }
    pub fn parallelism() -> usize {
        4
    }
    pub fn evaluator_timeout() -> f64 {
        3600.0
    }
}

/// Morphology-evaluation budget for a task at a grid scale.
pub fn default_budget(task: &str, scale: usize) -> u64 {
    if scale != 5 {
        return 1000;
    }
    match task {
        "Walker" | "BridgeWalker" => 250,
        "Jumper" | "Pusher" => 750,
        _ => 500,
    }
}

pub fn default_mutation_range(scale: usize) -> (usize, usize) {
    match scale {
        5 => (1, 3),
        10 => (1, 10),
        n => (1, n.max(1)),
    }
}

pub fn default_task_desc(task: &str) -> String {
    match task {
        "Walker" => "Walk as far as possible to the right on flat ground.",
        "BridgeWalker" => "Walk to the right across a soft, deformable bridge.",
        "Balancer" => "Stay balanced on top of a narrow pole without falling off.",
        "Carrier" => "Carry a box on top of the body while moving to the right.",
        "Climber" => "Climb upward through a vertical channel.",
        "Jumper" => "Jump as high as possible from flat ground.",
        "Pusher" => "Push a box to the right along flat ground.",
        other => return format!("Maximize task reward in {other}."),
    }
    .to_string()
}

impl RunConfig {
    pub fn new(task: &str, scale: usize) -> Self {
        RunConfig {
            task: task.to_string(),
            scale,
            budget: default_budget(task, scale),
            master_seed: 0,
            mode: RunMode::ColdStart,
            generation_size: defaults::generation_size(),
            path_a_slots: defaults::path_a_slots(),
            path_b_slots: defaults::path_b_slots(),
            elite_pool_k: defaults::elite_pool_k(),
            mutation_range: default_mutation_range(scale),
            delta_max: defaults::delta_max(),
            pool_threshold: defaults::pool_threshold(),
            prior_only_k: defaults::prior_only_k(),
            static_elite_pool: defaults::static_elite_pool(),
            mutation_rate: defaults::mutation_rate(),
            ga_survival_rate: defaults::ga_survival_rate(),
            ablations: Ablations::default(),
            evaluator: defaults::evaluator(),
            backend: defaults::backend(),
            budget_steps: defaults::budget_steps(),
            parallelism: defaults::parallelism(),
            evaluator_timeout_secs: defaults::evaluator_timeout(),
            source_run: None,
            task_desc: None,
            remote: RemoteConfig::default(),
        }
    }

    /// Path A and Path B slot counts after mode and ablation switches.
    pub fn effective_slots(&self) -> (usize, usize) {
        if self.mode == RunMode::GaOnly {
            (0, self.generation_size)
        } else if self.ablations.pure_llm {
            (self.generation_size, 0)
        } else {
            (self.path_a_slots, self.path_b_slots)
        }
    }

    pub fn task_description(&self) -> String {
        self.task_desc.clone().unwrap_or_else(|| default_task_desc(&self.task))
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::ConfigInvalid(m));
        if self.task.trim().is_empty() {
            return bad("task is empty".into());
        }
        if self.scale < 2 {
            return bad(format!("scale {} is too small", self.scale));
        }
        if self.budget == 0 || self.generation_size == 0 {
            return bad("budget and generation_size must be positive".into());
        }
        if self.path_a_slots + self.path_b_slots != self.generation_size {
            return bad(format!(
                "path_a_slots ({}) + path_b_slots ({}) must equal generation_size ({})",
                self.path_a_slots, self.path_b_slots, self.generation_size
            ));
        }
        if self.elite_pool_k == 0 {
            return bad("elite_pool_k must be at least 1".into());
        }
        let (lo, hi) = self.mutation_range;
        if lo == 0 || lo > hi || hi > self.scale * self.scale {
            return bad(format!("mutation_range ({lo}, {hi}) is not a valid edit-count range"));
        }
        if !(self.delta_max > 0.0) {
            return bad("delta_max must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) || !(self.ga_survival_rate > 0.0 && self.ga_survival_rate <= 1.0) {
            return bad("mutation_rate and ga_survival_rate must lie in (0, 1]".into());
        }
        if self.mode.is_transfer() && self.source_run.is_none() {
            return bad("transfer modes need source_run".into());
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| RunError::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}
