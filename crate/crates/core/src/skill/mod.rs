//! The three-level skill memory.
//!
//! A [`Skill`] pairs an L1 archetype (a named structural concept) with L2
//! rule leaves and the L3 observations that ground them. Skills are scored
//! by smoothed usefulness over their attributed gains and sampled in
//! proportion to that score when conditioning proposals.

mod maintenance;
mod store;

pub use maintenance::{
    apply_add, apply_attribution, apply_diagnose, apply_merge, AddAction, AddDecision,
    AttributionDecision, DescriptionMode, DescriptionUpdate, DiagnoseOutcome, LeafAssignment,
    LeafDecision, MergeCluster, NewSkillSpec, StandaloneLeaf,
};
pub use store::{
    export_for_transfer, import_for_transfer, LibraryCounters, LibraryDocument, SCHEMA_VERSION,
};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;
use thiserror::Error;

use crate::voxel::Body;

/// Saturation cap on a single gain's contribution to a skill weight.
pub const DEFAULT_DELTA_MAX: f64 = 2.0;
/// Pool size at which unassigned evidence is re-submitted to attribution.
pub const DEFAULT_POOL_THRESHOLD: usize = 30;
/// Diagnose attempts before an observation is frozen.
pub const MAX_NO_LEAF_ATTEMPTS: u8 = 3;

pub type ObsId = u64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkillError {
    #[error("no candidate skills to sample from")]
    EmptyCandidates,
    #[error("unknown skill id `{0}`")]
    UnknownSkillId(String),
    #[error("observation {0} has more than one decision")]
    DuplicateDecision(ObsId),
    #[error("observation {0} has no decision")]
    MissingDecision(ObsId),
    #[error("skill id `{0}` already exists")]
    DuplicateSkillId(String),
    #[error("malformed skill id `{0}`")]
    MalformedSkillId(String),
    #[error("more than one Add in generation {0}")]
    AddLimitExceeded(u64),
    #[error("unknown leaf id `{0}`")]
    UnknownLeafId(String),
    #[error("unknown observation id {0}")]
    UnknownObsId(ObsId),
    #[error("observation {0} is not awaiting a leaf decision")]
    ObservationNotPending(ObsId),
    #[error("merge cluster `{0}` has fewer than two skills")]
    SingletonCluster(String),
    #[error("skill `{0}` appears in more than one merge cluster")]
    OverlappingClusters(String),
    #[error("library schema violation: {0}")]
    SchemaViolation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn prefix(self) -> &'static str {
        match self {
            Polarity::Positive => "pos",
            Polarity::Negative => "neg",
        }
    }
}

/// Source-run statistics carried by an imported leaf. They inform prompts
/// but never count as target-scale evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorStats {
    pub support_count: usize,
    pub mean_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleLeaf {
    pub leaf_id: String,
    pub polarity: Polarity,
    pub claim: String,
    pub description: String,
    pub support_count: usize,
    pub mean_gain: f64,
    #[serde(default)]
    pub supporting_obs_ids: Vec<ObsId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<PriorStats>,
}

impl RuleLeaf {
    pub fn new(leaf_id: String, polarity: Polarity, claim: String, description: String) -> Self {
        RuleLeaf {
            leaf_id,
            polarity,
            claim,
            description,
            support_count: 0,
            mean_gain: 0.0,
            supporting_obs_ids: Vec::new(),
            prior: None,
        }
    }

    /// Adds one supporting observation and folds its gain into the running mean.
    pub fn absorb(&mut self, obs_id: ObsId, gain: f64) {
        let (m, mean) = update_rule_mean(self.support_count, self.mean_gain, gain);
        self.support_count = m;
        self.mean_gain = mean;
        self.supporting_obs_ids.push(obs_id);
    }
}

/// One incremental step of a rule's running mean gain.
pub fn update_rule_mean(support_count: usize, mean_gain: f64, gain: f64) -> (usize, f64) {
    let m = support_count + 1;
    (m, mean_gain + (gain - mean_gain) / m as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProposalPath {
    #[serde(rename = "init")]
    Init,
    A,
    B,
}

/// One evaluated child. `obs_id` is the child's run-wide evaluation index,
/// so ids never collide across skills, merges, or the unassigned pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub obs_id: ObsId,
    pub generation: u64,
    pub child_body: Body,
    pub parent_body: Body,
    pub task: String,
    pub scale: usize,
    pub fitness: f64,
    pub parent_fitness: f64,
    pub gain: f64,
    pub valid: bool,
    pub proposal_path: ProposalPath,
    #[serde(default)]
    pub fallback: bool,
    pub attributed_skill: Option<String>,
    pub intended_leaf_id: Option<String>,
    pub assigned_leaf_id: Option<String>,
    #[serde(default)]
    pub no_leaf_attempts: u8,
}

impl Observation {
    pub fn is_frozen(&self) -> bool {
        self.no_leaf_attempts >= MAX_NO_LEAF_ATTEMPTS
    }

    /// Still awaiting a leaf decision from Diagnose.
    pub fn is_pending(&self) -> bool {
        self.assigned_leaf_id.is_none() && !self.is_frozen()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L1 {
    pub structure: String,
    pub condition: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct L2 {
    pub positive: Vec<RuleLeaf>,
    pub negative: Vec<RuleLeaf>,
    pub next_leaf_id_counter: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct L3 {
    pub observations: Vec<Observation>,
    pub next_obs_id_counter: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skill {
    pub skill_id: String,
    pub task_family: Vec<String>,
    pub l1: L1,
    pub l2: L2,
    pub l3: L3,
    pub imported: bool,
}

impl Skill {
    pub fn new(skill_id: &str, task_family: Vec<String>, structure: &str, condition: &str) -> Self {
        Skill {
            skill_id: skill_id.to_string(),
            task_family,
            l1: L1 { structure: structure.to_string(), condition: condition.to_string() },
            l2: L2::default(),
            l3: L3::default(),
            imported: false,
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = &RuleLeaf> {
        self.l2.positive.iter().chain(self.l2.negative.iter())
    }

    pub fn leaves_mut(&mut self) -> impl Iterator<Item = &mut RuleLeaf> {
        self.l2.positive.iter_mut().chain(self.l2.negative.iter_mut())
    }

    pub fn leaf(&self, leaf_id: &str) -> Option<&RuleLeaf> {
        self.leaves().find(|l| l.leaf_id == leaf_id)
    }

    pub fn leaf_mut(&mut self, leaf_id: &str) -> Option<&mut RuleLeaf> {
        self.leaves_mut().find(|l| l.leaf_id == leaf_id)
    }

    pub fn leaf_count(&self) -> usize {
        self.l2.positive.len() + self.l2.negative.len()
    }

    pub fn observation(&self, obs_id: ObsId) -> Option<&Observation> {
        self.l3.observations.iter().find(|o| o.obs_id == obs_id)
    }

    pub fn observation_mut(&mut self, obs_id: ObsId) -> Option<&mut Observation> {
        self.l3.observations.iter_mut().find(|o| o.obs_id == obs_id)
    }

    /// Issues the next leaf id for `polarity` (`pos_k` / `neg_k`).
    pub fn issue_leaf_id(&mut self, polarity: Polarity) -> String {
        let id = format!("{}_{}", polarity.prefix(), self.l2.next_leaf_id_counter);
        self.l2.next_leaf_id_counter += 1;
        id
    }

    pub fn push_leaf(&mut self, leaf: RuleLeaf) {
        match leaf.polarity {
            Polarity::Positive => self.l2.positive.push(leaf),
            Polarity::Negative => self.l2.negative.push(leaf),
        }
    }

    pub fn push_observation(&mut self, mut obs: Observation) {
        obs.attributed_skill = Some(self.skill_id.clone());
        self.l3.observations.push(obs);
        self.l3.next_obs_id_counter += 1;
    }

    pub fn gains(&self) -> impl Iterator<Item = f64> + '_ {
        self.l3.observations.iter().map(|o| o.gain)
    }

    pub fn weight(&self, delta_max: f64) -> f64 {
        skill_weight(self, delta_max)
    }
}

/// Evidence pool for observations no skill has claimed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UnassignedPool {
    pub entries: Vec<Observation>,
}

impl UnassignedPool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, obs_id: ObsId) -> Option<&Observation> {
        self.entries.iter().find(|o| o.obs_id == obs_id)
    }
}

pub fn pool_pressure(pool: &UnassignedPool, threshold: usize) -> bool {
    assert!(threshold > 0, "pool threshold must be positive");
    pool.len() >= threshold
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SkillLibrary {
    pub task: String,
    pub scale: usize,
    pub skills: Vec<Skill>,
    pub pool: UnassignedPool,
    pub counters: LibraryCounters,
}

impl SkillLibrary {
    pub fn new(task: &str, scale: usize) -> Self {
        SkillLibrary { task: task.to_string(), scale, ..Default::default() }
    }

    pub fn skill(&self, skill_id: &str) -> Option<&Skill> {
        self.skills.iter().find(|s| s.skill_id == skill_id)
    }

    pub fn skill_mut(&mut self, skill_id: &str) -> Option<&mut Skill> {
        self.skills.iter_mut().find(|s| s.skill_id == skill_id)
    }

    pub fn total_observations(&self) -> usize {
        self.skills.iter().map(|s| s.l3.observations.len()).sum()
    }

    pub fn total_leaves(&self) -> usize {
        self.skills.iter().map(Skill::leaf_count).sum()
    }

    pub fn total_positive_leaves(&self) -> usize {
        self.skills.iter().map(|s| s.l2.positive.len()).sum()
    }

    pub fn total_negative_leaves(&self) -> usize {
        self.skills.iter().map(|s| s.l2.negative.len()).sum()
    }
}

/// Smoothed usefulness of a skill:
/// `(1 + sum(clip(g / delta_max, 0, 1))) / (2 + n)` over its attributed gains.
pub fn skill_weight(skill: &Skill, delta_max: f64) -> f64 {
    assert!(delta_max > 0.0, "delta_max must be positive");
    let mut n = 0usize;
    let mut total = 0.0;
    for g in skill.gains() {
        total += (g / delta_max).clamp(0.0, 1.0);
        n += 1;
    }
    (1.0 + total) / (2.0 + n as f64)
}

/// Draws one skill with probability proportional to its weight.
pub fn sample_skill<'a>(
    candidates: &[&'a Skill],
    delta_max: f64,
    seed: u64,
) -> Result<&'a Skill, SkillError> {
    if candidates.is_empty() {
        return Err(SkillError::EmptyCandidates);
    }
    let weights: Vec<f64> = candidates.iter().map(|s| skill_weight(s, delta_max)).collect();
    let dist = WeightedIndex::new(&weights).expect("weights are strictly positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(candidates[dist.sample(&mut rng)])
}

/// Skills relevant to `task`. While `generation < prior_only_horizon` and any
/// imported skill matches, only imported skills are returned.
pub fn retrieve<'a>(
    skills: &'a [Skill],
    task: &str,
    _scale: usize,
    generation: u64,
    prior_only_horizon: u64,
) -> Vec<&'a Skill> {
    let matches: Vec<&Skill> =
        skills.iter().filter(|s| s.task_family.iter().any(|t| t == task)).collect();
    if generation < prior_only_horizon && matches.iter().any(|s| s.imported) {
        matches.into_iter().filter(|s| s.imported).collect()
    } else {
        matches
    }
}

/// snake_case, one to `max_words` words, no trailing version marker.
pub fn is_snake_case_id(id: &str, max_words: usize) -> bool {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"^[a-z][a-z0-9]*(_[a-z0-9]+)*$").unwrap());
    if !re.is_match(id) {
        return false;
    }
    let words: Vec<&str> = id.split('_').collect();
    if words.len() > max_words {
        return false;
    }
    let last = words[words.len() - 1];
    let versioned = last.chars().all(|c| c.is_ascii_digit())
        || (last.len() > 1 && last.starts_with('v') && last[1..].chars().all(|c| c.is_ascii_digit()));
    !(words.len() > 1 && versioned)
}

/// True when text names absolute cells: "row 0", "column 4", "(5,4)", ...
pub fn mentions_coordinates(text: &str) -> bool {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"(?i)\b(rows?|columns?|cols?|cells?)\s*(#|no\.?|index)?\s*\d|\(\s*\d+\s*,\s*\d+\s*\)|\[\s*\d+\s*\]\s*\[\s*\d+\s*\]")
            .unwrap()
    });
    re.is_match(text)
}
