//! Versioned JSON persistence and cross-scale import.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    is_snake_case_id, Observation, PriorStats, RuleLeaf, Skill, SkillError, SkillLibrary,
    UnassignedPool, L1, L2, L3,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LibraryCounters {
    pub adds: u64,
    pub merges: u64,
    pub observations_routed: u64,
    pub last_add_generation: Option<u64>,
}

/// A skill exactly as it appears in the library file and in prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillRecord {
    pub skill_id: String,
    pub task_family: Vec<String>,
    pub condition: String,
    pub l1: L1,
    pub l2: L2,
    pub l3: L3,
    #[serde(default)]
    pub imported: bool,
}

impl From<&Skill> for SkillRecord {
    fn from(s: &Skill) -> Self {
        SkillRecord {
            skill_id: s.skill_id.clone(),
            task_family: s.task_family.clone(),
            condition: s.l1.condition.clone(),
            l1: s.l1.clone(),
            l2: s.l2.clone(),
            l3: s.l3.clone(),
            imported: s.imported,
        }
    }
}

impl From<SkillRecord> for Skill {
    fn from(r: SkillRecord) -> Self {
        Skill { skill_id: r.skill_id, task_family: r.task_family, l1: r.l1, l2: r.l2, l3: r.l3, imported: r.imported }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryDocument {
    pub schema_version: u32,
    pub task: String,
    pub scale: usize,
    pub skills: Vec<SkillRecord>,
    pub unassigned_pool: Vec<Observation>,
    pub counters: LibraryCounters,
}

impl LibraryDocument {
    pub fn from_library(lib: &SkillLibrary) -> Self {
        LibraryDocument {
            schema_version: SCHEMA_VERSION,
            task: lib.task.clone(),
            scale: lib.scale,
            skills: lib.skills.iter().map(SkillRecord::from).collect(),
            unassigned_pool: lib.pool.entries.clone(),
            counters: lib.counters.clone(),
        }
    }

    pub fn into_library(self) -> Result<SkillLibrary, SkillError> {
        self.validate()?;
        Ok(SkillLibrary {
            task: self.task,
            scale: self.scale,
            skills: self.skills.into_iter().map(Skill::from).collect(),
            pool: UnassignedPool { entries: self.unassigned_pool },
            counters: self.counters,
        })
    }

    pub fn validate(&self) -> Result<(), SkillError> {
        let bad = |m: String| Err(SkillError::SchemaViolation(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {}", self.schema_version));
        }
        let mut ids = HashSet::new();
        for s in &self.skills {
            if !is_snake_case_id(&s.skill_id, 3) {
                return bad(format!("skill id `{}` is not short snake_case", s.skill_id));
            }
            if !ids.insert(&s.skill_id) {
                return bad(format!("duplicate skill id `{}`", s.skill_id));
            }
            let mut leaf_ids = HashSet::new();
            for (leaves, prefix) in [(&s.l2.positive, "pos_"), (&s.l2.negative, "neg_")] {
                for leaf in leaves.iter() {
                    if !leaf.leaf_id.starts_with(prefix) || !leaf_ids.insert(&leaf.leaf_id) {
                        return bad(format!("bad leaf id `{}` in `{}`", leaf.leaf_id, s.skill_id));
                    }
                    if leaf.prior.is_none() && leaf.support_count != leaf.supporting_obs_ids.len() {
                        return bad(format!("leaf `{}` support count disagrees with its evidence", leaf.leaf_id));
                    }
                }
            }
            let mut obs_ids = HashSet::new();
            for o in &s.l3.observations {
                if !obs_ids.insert(o.obs_id) {
                    return bad(format!("duplicate obs id {} in `{}`", o.obs_id, s.skill_id));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SkillError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SkillError::SchemaViolation(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| SkillError::SchemaViolation(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("library serializes");
        std::fs::write(path, text + "\n")
    }
}

/// Transfer-ready copy: L1 and L2 kept, raw observations and pool dropped.
pub fn export_for_transfer(lib: &SkillLibrary) -> LibraryDocument {
    let mut doc = LibraryDocument::from_library(lib);
    for s in doc.skills.iter_mut() {
        s.l3 = L3::default();
    }
    doc.unassigned_pool.clear();
    doc
}

/// Loads a source library as priors for a new run. Each leaf's source
/// statistics move into [`RuleLeaf::prior`]; live statistics restart at
/// zero so only target-scale evidence drives weights and running means.
pub fn import_for_transfer(source: &LibraryDocument) -> Result<SkillLibrary, SkillError> {
    source.validate()?;
    let skills = source
        .skills
        .iter()
        .map(|r| {
            let mut s = Skill::from(r.clone());
            s.l3 = L3::default();
            s.imported = true;
            for leaf in s.leaves_mut() {
                *leaf = as_prior(leaf);
            }
            s
        })
        .collect();
    Ok(SkillLibrary {
        task: source.task.clone(),
        scale: source.scale,
        skills,
        pool: UnassignedPool::default(),
        counters: Default::default(),
    })
}

fn as_prior(leaf: &RuleLeaf) -> RuleLeaf {
    let prior = leaf
        .prior
        .clone()
        .unwrap_or(PriorStats { support_count: leaf.support_count, mean_gain: leaf.mean_gain });
    RuleLeaf {
        support_count: 0,
        mean_gain: 0.0,
        supporting_obs_ids: Vec::new(),
        prior: Some(prior),
        ..leaf.clone()
    }
}
