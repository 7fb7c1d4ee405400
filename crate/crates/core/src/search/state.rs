use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::llm::TransferContext;
use crate::skill::{MergeCluster, ObsId, ProposalPath, SkillLibrary};
use crate::voxel::Body;

/// One evaluated body. `eval_index` starts at 1 and doubles as the body's
/// observation id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluated {
    pub eval_index: u64,
    pub generation: u64,
    pub body: Body,
    pub fitness: Option<f64>,
    pub parent: Option<u64>,
    pub path: ProposalPath,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    /// Next generation to run; 0 means the initial population is pending.
    pub generation: u64,
    pub population: Vec<Evaluated>,
    /// Eval indices of the elite pool, best first.
    pub elite_pool: Vec<u64>,
    pub evals_used: u64,
    /// `(eval_index, best fitness so far)`, one point per successful
    /// evaluation from the first success on.
    pub best_curve: Vec<(u64, f64)>,
    pub library: SkillLibrary,
    /// Source elites shown in with-reference transfer prompts.
    pub references: Vec<(Body, f64)>,
    pub transfer: Option<TransferContext>,
}

impl RunState {
    pub fn new(library: SkillLibrary) -> Self {
        RunState {
            generation: 0,
            population: Vec::new(),
            elite_pool: Vec::new(),
            evals_used: 0,
            best_curve: Vec::new(),
            library,
            references: Vec::new(),
            transfer: None,
        }
    }

    pub fn member(&self, eval_index: u64) -> &Evaluated {
        &self.population[(eval_index - 1) as usize]
    }

    pub fn best(&self) -> Option<&Evaluated> {
        self.population
            .iter()
            .filter(|e| e.fitness.is_some())
            .min_by(|a, b| b.fitness.unwrap().total_cmp(&a.fitness.unwrap()).then(a.eval_index.cmp(&b.eval_index)))
    }

    pub fn best_fitness(&self) -> Option<f64> {
        self.best_curve.last().map(|p| p.1)
    }

    /// Earlier children of `parent`, oldest first.
    pub fn children_of(&self, parent: u64) -> Vec<&Evaluated> {
        self.population.iter().filter(|e| e.parent == Some(parent)).collect()
    }

    /// Appends an evaluated body, extending the best-so-far curve.
    pub fn push(&mut self, e: Evaluated) {
        debug_assert_eq!(e.eval_index, self.population.len() as u64 + 1);
        if let Some(f) = e.fitness {
            let best = self.best_fitness().map_or(f, |b| b.max(f));
            self.best_curve.push((e.eval_index, best));
        }
        self.evals_used += 1;
        self.population.push(e);
    }
}

/// Top-`k` eval indices by fitness; equal fitness keeps the older body.
pub fn update_elites(population: &[Evaluated], k: usize) -> Vec<u64> {
    assert!(k >= 1, "elite pool size must be positive");
    let mut ranked: Vec<&Evaluated> = population.iter().filter(|e| e.fitness.is_some()).collect();
    ranked.sort_by(|a, b| b.fitness.unwrap().total_cmp(&a.fitness.unwrap()).then(a.eval_index.cmp(&b.eval_index)));
    ranked.into_iter().take(k).map(|e| e.eval_index).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub eval_index: u64,
    pub slot_index: usize,
    pub path: ProposalPath,
    /// A Path A slot filled by GA mutation.
    #[serde(default)]
    pub fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_reason: Option<String>,
    pub parent: Option<u64>,
    pub skill_id: Option<String>,
    pub intended_leaf_id: Option<String>,
    pub body: Body,
    pub repaired: bool,
    #[serde(default)]
    pub out_of_range: bool,
    pub fitness: Option<f64>,
    pub parent_fitness: Option<f64>,
    pub gain: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseRecord {
    pub skill_id: String,
    /// Targeted children matched to their intended leaf without a prompt.
    pub auto_matched: usize,
    pub matched: usize,
    pub new_leaves: Vec<String>,
    pub no_leaf: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropped: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MaintenanceRecord {
    /// `(obs_id, skill)` for every routed child; `None` went to the pool.
    pub attributed: Vec<(ObsId, Option<String>)>,
    pub reattributed: Vec<(ObsId, Option<String>)>,
    pub added_skill: Option<String>,
    pub add_inspired: Vec<ObsId>,
    pub diagnose: Vec<DiagnoseRecord>,
    pub merged: Vec<MergeCluster>,
    /// Decisions dropped for parse or schema failures.
    pub dropped: Vec<String>,
    pub skills_after: usize,
    pub positive_leaves_after: usize,
    pub negative_leaves_after: usize,
    pub observations_after: usize,
    pub pool_after: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: u64,
    /// Fewer slots than a full generation because the budget ran out.
    pub partial: bool,
    pub slots: Vec<SlotRecord>,
    pub maintenance: Option<MaintenanceRecord>,
    pub evals_used: u64,
    pub best_fitness: Option<f64>,
    pub elite_pool: Vec<u64>,
    /// Wall-clock data; excluded from comparisons between runs.
    pub timing: Timing,
}

impl GenerationRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// A run-log line with wall-clock fields removed, for comparing runs.
pub fn comparable_payload(line: &str) -> Result<String, serde_json::Error> {
    let mut v: serde_json::Value = serde_json::from_str(line)?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("timing");
    }
    serde_json::to_string(&v)
}

/// Slot counts per path across records, for audits.
pub fn path_counts(records: &[GenerationRecord]) -> BTreeMap<&'static str, usize> {
    let mut out = BTreeMap::new();
    for s in records.iter().flat_map(|r| &r.slots) {
        let key = match s.path {
            ProposalPath::Init => "init",
            ProposalPath::A => "A",
            ProposalPath::B => "B",
        };
        *out.entry(key).or_insert(0) += 1;
    }
    out
}
