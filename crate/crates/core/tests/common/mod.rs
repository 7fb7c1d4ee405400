#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use morphoskill::llm::{
    validate_add, validate_attribute, validate_diagnose, validate_merge, BackendResponse, TemplateId,
};
use morphoskill::skill::{
    apply_add, apply_attribution, apply_diagnose, apply_merge, pool_pressure, AttributionDecision, Observation,
    ProposalPath, SkillError, SkillLibrary,
};
use morphoskill::voxel::Body;
use rand::Rng;
use serde_json::{json, Value};

pub fn body(rows: &[&[i64]]) -> Body {
    Body::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
}

pub fn walker_body() -> Body {
    body(&[&[0, 0, 0, 0, 0], &[0, 0, 0, 0, 0], &[1, 1, 1, 1, 1], &[1, 3, 3, 3, 1], &[1, 0, 0, 0, 1]])
}

pub fn observation(obs_id: u64, generation: u64, gain: f64) -> Observation {
    Observation {
        obs_id,
        generation,
        child_body: walker_body(),
        parent_body: walker_body(),
        task: "Walker".into(),
        scale: 5,
        fitness: 5.0 + gain,
        parent_fitness: 5.0,
        gain,
        valid: true,
        proposal_path: ProposalPath::B,
        fallback: false,
        attributed_skill: None,
        intended_leaf_id: None,
        assigned_leaf_id: None,
        no_leaf_attempts: 0,
    }
}

/// Uniform random grid over codes `0..=max_code`.
pub fn random_grid<R: Rng>(rng: &mut R, n: usize, max_code: i64) -> Vec<Vec<i64>> {
    (0..n).map(|_| (0..n).map(|_| rng.random_range(0..=max_code)).collect()).collect()
}

/// Recursive flood fill over a plain matrix; the reference for validity.
pub fn oracle_valid(grid: &[Vec<i64>]) -> bool {
    let n = grid.len();
    if grid.iter().flatten().any(|&c| !(0..=4).contains(&c)) {
        return false;
    }
    if !grid.iter().flatten().any(|&c| c == 3 || c == 4) {
        return false;
    }
    fn fill(grid: &[Vec<i64>], seen: &mut Vec<Vec<bool>>, r: usize, c: usize) {
        if seen[r][c] || grid[r][c] == 0 {
            return;
        }
        seen[r][c] = true;
        let n = grid.len();
        if r > 0 {
            fill(grid, seen, r - 1, c);
        }
        if r + 1 < n {
            fill(grid, seen, r + 1, c);
        }
        if c > 0 {
            fill(grid, seen, r, c - 1);
        }
        if c + 1 < n {
            fill(grid, seen, r, c + 1);
        }
    }
    let mut seen = vec![vec![false; n]; n];
    let mut components = 0;
    for r in 0..n {
        for c in 0..n {
            if grid[r][c] != 0 && !seen[r][c] {
                components += 1;
                fill(grid, &mut seen, r, c);
            }
        }
    }
    components == 1
}

pub fn prompt_records(dir: &Path) -> Vec<Value> {
    std::fs::read_to_string(dir.join("prompts.log.jsonl"))
        .unwrap_or_default()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

pub fn propose_prompts(dir: &Path) -> Vec<String> {
    prompt_records(dir)
        .into_iter()
        .filter(|r| r["op_kind"] == "propose")
        .map(|r| r["prompt"].as_str().unwrap().to_string())
        .collect()
}

// Scripted maintenance sequence.
//
// Every generation brings 8 observations with deterministic gains, then runs
// Attribute, pool re-attribution, Add, Diagnose and Merge with fixture
// responses derived from the rules below. The ledger model tracks the same
// rules with plain counters and lists, independently of the library code.

pub const GENERATIONS: u64 = 50;
pub const OBS_PER_GENERATION: u64 = 8;
const POOL_THRESHOLD: usize = 30;
const NAMES: &[&str] = &[
    "amber", "birch", "cedar", "dune", "ember", "fjord", "grove", "heath", "inlet", "jade", "kelp", "larch", "moss",
];
const MERGE_LABELS: &[&str] = &["merged_one", "merged_two", "merged_three", "merged_four", "merged_five"];
const CONDITION: &str = "rigid frame around every actuator with a wide grounded base and soft pads under the feet";

pub fn scripted_gain(obs_id: u64) -> f64 {
    ((obs_id * 37) % 11) as f64 * 0.4 - 2.0
}

#[derive(Debug, Clone, Default)]
struct ModelObs {
    id: u64,
    gain: f64,
    attempts: u8,
    assigned: bool,
}

#[derive(Debug, Clone, Default)]
struct ModelLeaf {
    positive: bool,
    support: usize,
}

#[derive(Debug, Clone, Default)]
struct ModelSkill {
    obs: Vec<ModelObs>,
    leaves: Vec<ModelLeaf>,
}

/// Expected end state of the scripted sequence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ledger {
    pub skills: usize,
    pub observations_in_skills: usize,
    pub pool: usize,
    pub positive_leaves: usize,
    pub negative_leaves: usize,
    pub total_support: usize,
    pub adds: usize,
    pub merges: usize,
    pub per_skill: BTreeMap<String, (usize, usize)>,
}

#[derive(Default)]
struct Model {
    skills: BTreeMap<String, ModelSkill>,
    pool: Vec<ModelObs>,
    adds: usize,
    merges: usize,
}

impl Model {
    fn ledger(&self) -> Ledger {
        let leaves = || self.skills.values().flat_map(|s| &s.leaves);
        Ledger {
            skills: self.skills.len(),
            observations_in_skills: self.skills.values().map(|s| s.obs.len()).sum(),
            pool: self.pool.len(),
            positive_leaves: leaves().filter(|l| l.positive).count(),
            negative_leaves: leaves().filter(|l| !l.positive).count(),
            total_support: leaves().map(|l| l.support).sum(),
            adds: self.adds,
            merges: self.merges,
            per_skill: self.skills.iter().map(|(k, s)| (k.clone(), (s.obs.len(), s.leaves.len()))).collect(),
        }
    }
}

/// Outcome of the scripted sequence on the real library.
pub struct ScriptOutcome {
    pub library: SkillLibrary,
    pub expected: Ledger,
    pub adds_per_generation: Vec<usize>,
    pub second_add_rejections: usize,
    pub add_born_empty: bool,
}

fn respond(template: TemplateId, v: Value) -> BackendResponse {
    BackendResponse::from_text(template, format!("Here is my answer.\n{v}\n"))
}

pub fn run_scripted_maintenance() -> ScriptOutcome {
    let mut lib = SkillLibrary::new("Walker", 5);
    let mut model = Model::default();
    let mut adds_per_generation = Vec::new();
    let mut second_add_rejections = 0;
    let mut add_born_empty = true;

    for g in 1..=GENERATIONS {
        let ids: Vec<u64> = ((g - 1) * OBS_PER_GENERATION + 1..=g * OBS_PER_GENERATION).collect();
        let fresh: Vec<Observation> = ids.iter().map(|&id| observation(id, g, scripted_gain(id))).collect();

        // Attribute.
        let names: Vec<String> = model.skills.keys().cloned().collect();
        let choice: Vec<Option<String>> = ids
            .iter()
            .enumerate()
            .map(|(k, &id)| (!names.is_empty() && k % 4 != 3).then(|| names[id as usize % names.len()].clone()))
            .collect();
        let decisions: Vec<Option<String>> = if names.is_empty() {
            vec![None; ids.len()]
        } else {
            let fixture = json!({"assignments": choice.iter().enumerate()
                .map(|(k, c)| json!({"local_index": k, "skill_id": c, "reason": "scripted"})).collect::<Vec<_>>()});
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            validate_attribute(respond(TemplateId::Attribute, fixture).value(), ids.len(), &refs).unwrap()
        };
        assert_eq!(decisions, choice);
        let routed: Vec<AttributionDecision> = ids
            .iter()
            .zip(&decisions)
            .map(|(&obs_id, s)| AttributionDecision { obs_id, skill_id: s.clone(), reason: String::new() })
            .collect();
        apply_attribution(&mut lib, fresh, &routed).unwrap();
        for (&id, c) in ids.iter().zip(&choice) {
            let o = ModelObs { id, gain: scripted_gain(id), ..Default::default() };
            match c {
                Some(name) => model.skills.get_mut(name).unwrap().obs.push(o),
                None => model.pool.push(o),
            }
        }

        // Pool pressure: everything goes to the first skill.
        if pool_pressure(&lib.pool, POOL_THRESHOLD) && !names.is_empty() {
            let drained = std::mem::take(&mut lib.pool.entries);
            let first = names[0].clone();
            let decisions: Vec<AttributionDecision> = drained
                .iter()
                .map(|o| AttributionDecision { obs_id: o.obs_id, skill_id: Some(first.clone()), reason: String::new() })
                .collect();
            apply_attribution(&mut lib, drained, &decisions).unwrap();
            let moved = std::mem::take(&mut model.pool);
            model.skills.get_mut(&first).unwrap().obs.extend(moved);
        }

        // Add every fourth generation; a second Add in the same generation is refused.
        let mut adds_now = 0;
        if g % 4 == 1 && model.adds < NAMES.len() {
            let name = format!("skill_{}", NAMES[model.adds]);
            let candidates: Vec<u64> = lib.pool.entries.iter().filter(|o| o.generation == g).map(|o| o.obs_id).collect();
            let fixture = json!({"decision": {
                "action": "add",
                "inspired_obs_ids": candidates.iter().take(2).collect::<Vec<_>>(),
                "skill": {
                    "skill_id": name,
                    "task_family": ["Walker"],
                    "l1": {"structure": "frame", "condition": CONDITION},
                    "l2": {"positive": [], "negative": []},
                    "l3": {"observations": []}
                }
            }});
            let d = validate_add(respond(TemplateId::Add, fixture).value(), "Walker", &candidates).unwrap();
            assert!(apply_add(&mut lib, g, &d).unwrap());
            let born = lib.skill(&name).unwrap();
            add_born_empty &= born.leaf_count() == 0 && born.l3.observations.is_empty();
            adds_now += 1;
            model.skills.insert(name.clone(), ModelSkill::default());
            model.adds += 1;
            if g % 8 == 1 {
                let mut again = d.clone();
                again.skill.as_mut().unwrap().skill_id = "skill_extra".into();
                match apply_add(&mut lib, g, &again) {
                    Err(SkillError::AddLimitExceeded(_)) => second_add_rejections += 1,
                    other => panic!("second Add in generation {g} was not refused: {other:?}"),
                }
            }
        }
        adds_per_generation.push(adds_now);

        // Diagnose each skill's pending observations.
        let names: Vec<String> = model.skills.keys().cloned().collect();
        for name in &names {
            let m = model.skills.get_mut(name).unwrap();
            let pending: Vec<usize> =
                (0..m.obs.len()).filter(|&i| !m.obs[i].assigned && m.obs[i].attempts < 3).collect();
            if pending.is_empty() {
                continue;
            }
            let skill = lib.skill(name).unwrap();
            let first_leaf = skill.leaves().next().map(|l| l.leaf_id.clone());
            let mut assignments = Vec::new();
            let mut standalone_ids = Vec::new();
            for &i in &pending {
                let o = m.obs[i].clone();
                let polarity = if o.gain > 0.0 { "positive" } else { "negative" };
                let new_leaf = json!({"obs_id": o.id, "decision": "new_leaf", "polarity": polarity,
                    "claim": "side_brace", "description": "stiff material beside the actuator"});
                match o.id % 3 {
                    0 => {
                        assignments.push(new_leaf);
                        m.leaves.push(ModelLeaf { positive: o.gain > 0.0, support: 1 });
                        m.obs[i].assigned = true;
                    }
                    1 => {
                        assignments.push(json!({"obs_id": o.id, "decision": "no_leaf"}));
                        m.obs[i].attempts += 1;
                        if g % 7 == 0 && o.attempts < 2 && standalone_ids.len() < 2 {
                            standalone_ids.push((i, o.id));
                        }
                    }
                    _ => {
                        if let (Some(leaf), true) = (&first_leaf, m.leaves.first().is_some()) {
                            assignments.push(json!({"obs_id": o.id, "decision": "match_existing",
                                "leaf_id": leaf, "description_update": {"mode": null, "text": null}}));
                            m.leaves[0].support += 1;
                        } else {
                            assignments.push(new_leaf);
                            m.leaves.push(ModelLeaf { positive: o.gain > 0.0, support: 1 });
                        }
                        m.obs[i].assigned = true;
                    }
                }
            }
            let standalone: Vec<Value> = if standalone_ids.len() == 2 {
                for &(i, _) in &standalone_ids {
                    m.obs[i].assigned = true;
                }
                m.leaves.push(ModelLeaf { positive: true, support: 2 });
                vec![json!({"polarity": "positive", "claim": "shared_rail", "description": "continuous bottom rail",
                    "supporting_obs_ids": standalone_ids.iter().map(|p| p.1).collect::<Vec<_>>()})]
            } else {
                Vec::new()
            };
            let fixture = json!({"leaf_assignments": assignments, "standalone_new_leaves": standalone});
            let (a, s) = validate_diagnose(respond(TemplateId::Diagnose, fixture).value()).unwrap();
            apply_diagnose(lib.skill_mut(name).unwrap(), &a, &s).unwrap();
        }

        // Merge the two smallest ids every tenth generation.
        if g % 10 == 0 && model.skills.len() >= 3 {
            let pair: Vec<String> = model.skills.keys().take(2).cloned().collect();
            let label = MERGE_LABELS[model.merges].to_string();
            let fixture = json!({"clusters": [{"group_label": label, "skill_ids": pair, "reason": "same frame"}]});
            let clusters = validate_merge(respond(TemplateId::Merge, fixture).value()).unwrap();
            apply_merge(&mut lib, &clusters).unwrap();
            let mut merged = ModelSkill::default();
            for id in &pair {
                let s = model.skills.remove(id).unwrap();
                merged.obs.extend(s.obs);
                merged.leaves.extend(s.leaves);
            }
            model.skills.insert(label, merged);
            model.merges += 1;
        }
    }

    ScriptOutcome { library: lib, expected: model.ledger(), adds_per_generation, second_add_rejections, add_born_empty }
}

/// The same ledger read from a real library.
pub fn library_ledger(lib: &SkillLibrary) -> Ledger {
    Ledger {
        skills: lib.skills.len(),
        observations_in_skills: lib.total_observations(),
        pool: lib.pool.len(),
        positive_leaves: lib.total_positive_leaves(),
        negative_leaves: lib.total_negative_leaves(),
        total_support: lib.skills.iter().flat_map(|s| s.leaves()).map(|l| l.support_count).sum(),
        adds: lib.counters.adds as usize,
        merges: lib.counters.merges as usize,
        per_skill: lib.skills.iter().map(|s| (s.skill_id.clone(), (s.l3.observations.len(), s.leaf_count()))).collect(),
    }
}
