//! Library state transitions: attribution routing, Add, Diagnose, Merge.
//!
//! Every operation validates its whole decision before mutating anything, so
//! a rejected decision leaves the library untouched.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{
    is_snake_case_id, mentions_coordinates, ObsId, Observation, Polarity, RuleLeaf, Skill,
    SkillError, SkillLibrary, L2, L3,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionDecision {
    pub obs_id: ObsId,
    pub skill_id: Option<String>,
    #[serde(default)]
    pub reason: String,
}

/// Routes each observation to the named skill's L3 or, on a null decision, to
/// the unassigned pool. Routing never inspects fitness.
pub fn apply_attribution(
    library: &mut SkillLibrary,
    observations: Vec<Observation>,
    decisions: &[AttributionDecision],
) -> Result<(), SkillError> {
    let mut by_obs: HashMap<ObsId, Option<&str>> = HashMap::new();
    for d in decisions {
        if by_obs.insert(d.obs_id, d.skill_id.as_deref()).is_some() {
            return Err(SkillError::DuplicateDecision(d.obs_id));
        }
        if let Some(id) = &d.skill_id {
            if library.skill(id).is_none() {
                return Err(SkillError::UnknownSkillId(id.clone()));
            }
        }
    }
    let known: HashSet<ObsId> = observations.iter().map(|o| o.obs_id).collect();
    for o in &observations {
        if !by_obs.contains_key(&o.obs_id) {
            return Err(SkillError::MissingDecision(o.obs_id));
        }
    }
    if let Some(extra) = decisions.iter().find(|d| !known.contains(&d.obs_id)) {
        return Err(SkillError::UnknownObsId(extra.obs_id));
    }

    for mut o in observations {
        match by_obs[&o.obs_id] {
            Some(skill_id) => {
                let skill = library.skill_mut(skill_id).expect("validated above");
                skill.push_observation(o);
            }
            None => {
                o.attributed_skill = None;
                library.pool.entries.push(o);
            }
        }
        library.counters.observations_routed += 1;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddAction {
    Add,
    NoAdd,
}

/// The L1 identity proposed by an Add decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewSkillSpec {
    pub skill_id: String,
    pub task_family: Vec<String>,
    pub structure: String,
    pub condition: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddDecision {
    pub action: AddAction,
    #[serde(default)]
    pub inspired_obs_ids: Vec<ObsId>,
    pub skill: Option<NewSkillSpec>,
}

impl AddDecision {
    pub fn no_add() -> Self {
        AddDecision { action: AddAction::NoAdd, inspired_obs_ids: Vec::new(), skill: None }
    }
}

/// Creates at most one new L1 per generation. The new skill is born with
/// empty L2 and L3; inspiring observations stay in the pool.
pub fn apply_add(
    library: &mut SkillLibrary,
    generation: u64,
    decision: &AddDecision,
) -> Result<bool, SkillError> {
    if decision.action == AddAction::NoAdd {
        return Ok(false);
    }
    let spec = decision
        .skill
        .as_ref()
        .ok_or_else(|| SkillError::MalformedSkillId("<missing skill>".into()))?;
    if library.counters.last_add_generation == Some(generation) {
        return Err(SkillError::AddLimitExceeded(generation));
    }
    if !is_snake_case_id(&spec.skill_id, 3) {
        return Err(SkillError::MalformedSkillId(spec.skill_id.clone()));
    }
    if library.skill(&spec.skill_id).is_some() {
        return Err(SkillError::DuplicateSkillId(spec.skill_id.clone()));
    }
    let mut family = spec.task_family.clone();
    if family.is_empty() {
        family.push(library.task.clone());
    }
    library.skills.push(Skill::new(&spec.skill_id, family, &spec.structure, &spec.condition));
    library.counters.last_add_generation = Some(generation);
    library.counters.adds += 1;
    Ok(true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptionMode {
    Overwrite,
    Append,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionUpdate {
    pub mode: DescriptionMode,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum LeafDecision {
    MatchExisting {
        leaf_id: String,
        #[serde(default)]
        description_update: Option<DescriptionUpdate>,
    },
    NewLeaf {
        polarity: Polarity,
        claim: String,
        description: String,
    },
    NoLeaf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafAssignment {
    pub obs_id: ObsId,
    #[serde(flatten)]
    pub decision: LeafDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandaloneLeaf {
    pub polarity: Polarity,
    pub claim: String,
    pub description: String,
    pub supporting_obs_ids: Vec<ObsId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseOutcome {
    pub matched: usize,
    pub new_leaves: Vec<String>,
    pub no_leaf: usize,
    pub frozen: Vec<ObsId>,
    /// Observations whose proposed text named absolute coordinates.
    pub coordinate_leakage: Vec<ObsId>,
    /// Standalone leaves dropped for thin support or coordinate text.
    pub rejected_standalone: usize,
}

/// Applies leaf decisions for one skill's pending observations.
pub fn apply_diagnose(
    skill: &mut Skill,
    assignments: &[LeafAssignment],
    standalone: &[StandaloneLeaf],
) -> Result<DiagnoseOutcome, SkillError> {
    let mut seen = HashSet::new();
    for a in assignments {
        if !seen.insert(a.obs_id) {
            return Err(SkillError::DuplicateDecision(a.obs_id));
        }
        let obs = skill.observation(a.obs_id).ok_or(SkillError::UnknownObsId(a.obs_id))?;
        if !obs.is_pending() {
            return Err(SkillError::ObservationNotPending(a.obs_id));
        }
        if let LeafDecision::MatchExisting { leaf_id, .. } = &a.decision {
            if skill.leaf(leaf_id).is_none() {
                return Err(SkillError::UnknownLeafId(leaf_id.clone()));
            }
        }
    }
    for s in standalone {
        if let Some(&missing) = s.supporting_obs_ids.iter().find(|&&id| skill.observation(id).is_none()) {
            return Err(SkillError::UnknownObsId(missing));
        }
    }

    let mut out = DiagnoseOutcome::default();
    for a in assignments {
        let gain = skill.observation(a.obs_id).expect("validated").gain;
        let leaks = match &a.decision {
            LeafDecision::MatchExisting { description_update: Some(u), .. } => mentions_coordinates(&u.text),
            LeafDecision::NewLeaf { claim, description, .. } => {
                mentions_coordinates(claim) || mentions_coordinates(description)
            }
            _ => false,
        };
        if leaks {
            log::warn!("coordinate text in leaf decision for obs {}; treated as no_leaf", a.obs_id);
            out.coordinate_leakage.push(a.obs_id);
        }
        let decision = if leaks { &LeafDecision::NoLeaf } else { &a.decision };
        match decision {
            LeafDecision::MatchExisting { leaf_id, description_update } => {
                let leaf = skill.leaf_mut(leaf_id).expect("validated");
                leaf.absorb(a.obs_id, gain);
                if let Some(u) = description_update {
                    match u.mode {
                        DescriptionMode::Overwrite => leaf.description = u.text.clone(),
                        DescriptionMode::Append => {
                            leaf.description = format!("{} {}", leaf.description.trim_end(), u.text.trim())
                        }
                    }
                }
                skill.observation_mut(a.obs_id).expect("validated").assigned_leaf_id = Some(leaf_id.clone());
                out.matched += 1;
            }
            LeafDecision::NewLeaf { polarity, claim, description } => {
                let id = skill.issue_leaf_id(*polarity);
                let mut leaf = RuleLeaf::new(id.clone(), *polarity, claim.clone(), description.clone());
                leaf.absorb(a.obs_id, gain);
                skill.push_leaf(leaf);
                skill.observation_mut(a.obs_id).expect("validated").assigned_leaf_id = Some(id.clone());
                out.new_leaves.push(id);
            }
            LeafDecision::NoLeaf => {
                let obs = skill.observation_mut(a.obs_id).expect("validated");
                obs.no_leaf_attempts += 1;
                if obs.is_frozen() {
                    out.frozen.push(a.obs_id);
                }
                out.no_leaf += 1;
            }
        }
    }

    for s in standalone {
        let ids: Vec<ObsId> = {
            let mut seen = HashSet::new();
            s.supporting_obs_ids.iter().copied().filter(|id| seen.insert(*id)).collect()
        };
        if ids.len() < 2 || mentions_coordinates(&s.claim) || mentions_coordinates(&s.description) {
            out.rejected_standalone += 1;
            continue;
        }
        let id = skill.issue_leaf_id(s.polarity);
        let mut leaf = RuleLeaf::new(id.clone(), s.polarity, s.claim.clone(), s.description.clone());
        for obs_id in ids {
            let obs = skill.observation_mut(obs_id).expect("validated");
            leaf.absorb(obs_id, obs.gain);
            if obs.is_pending() {
                obs.assigned_leaf_id = Some(id.clone());
            }
        }
        skill.push_leaf(leaf);
        out.new_leaves.push(id);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeCluster {
    pub group_label: String,
    pub skill_ids: Vec<String>,
    #[serde(default)]
    pub reason: String,
}

/// Collapses each cluster into one skill named by its group label. Rules and
/// observations of absorbed skills are all kept; leaf ids are re-issued.
pub fn apply_merge(library: &mut SkillLibrary, clusters: &[MergeCluster]) -> Result<(), SkillError> {
    let mut claimed = HashSet::new();
    for c in clusters {
        let unique: HashSet<&str> = c.skill_ids.iter().map(String::as_str).collect();
        if unique.len() < 2 {
            return Err(SkillError::SingletonCluster(c.group_label.clone()));
        }
        if !is_snake_case_id(&c.group_label, 3) {
            return Err(SkillError::MalformedSkillId(c.group_label.clone()));
        }
        for id in &unique {
            if library.skill(id).is_none() {
                return Err(SkillError::UnknownSkillId(id.to_string()));
            }
            if !claimed.insert(id.to_string()) {
                return Err(SkillError::OverlappingClusters(id.to_string()));
            }
        }
    }
    let mut labels = HashSet::new();
    for c in clusters {
        let clashes_outside = library.skill(&c.group_label).is_some() && !claimed.contains(&c.group_label);
        if clashes_outside || !labels.insert(c.group_label.clone()) {
            return Err(SkillError::DuplicateSkillId(c.group_label.clone()));
        }
    }

    for c in clusters {
        let members: BTreeMap<String, Skill> = {
            let mut m = BTreeMap::new();
            for id in &c.skill_ids {
                if let Some(pos) = library.skills.iter().position(|s| &s.skill_id == id) {
                    let s = library.skills.remove(pos);
                    m.insert(s.skill_id.clone(), s);
                }
            }
            m
        };
        let insert_at = library.skills.len();
        let merged = merge_skills(&c.group_label, members);
        library.skills.insert(insert_at, merged);
        library.counters.merges += 1;
    }
    Ok(())
}

fn merge_skills(label: &str, members: BTreeMap<String, Skill>) -> Skill {
    // BTreeMap iteration is lexicographic, so max_by keeps the smallest id on ties.
    let anchor = members
        .values()
        .fold(None::<&Skill>, |best, s| match best {
            Some(b) if b.l3.observations.len() >= s.l3.observations.len() => Some(b),
            _ => Some(s),
        })
        .expect("cluster has members");
    let mut merged = Skill {
        skill_id: label.to_string(),
        task_family: Vec::new(),
        l1: anchor.l1.clone(),
        l2: L2::default(),
        l3: L3::default(),
        imported: members.values().all(|s| s.imported),
    };
    let mut leaf_map: HashMap<(String, String), String> = HashMap::new();
    for (old_skill, skill) in &members {
        for t in &skill.task_family {
            if !merged.task_family.contains(t) {
                merged.task_family.push(t.clone());
            }
        }
        for leaf in skill.leaves() {
            let new_id = merged.issue_leaf_id(leaf.polarity);
            leaf_map.insert((old_skill.clone(), leaf.leaf_id.clone()), new_id.clone());
            let mut l = leaf.clone();
            l.leaf_id = new_id;
            merged.push_leaf(l);
        }
    }
    let mut observations = Vec::new();
    for (old_skill, skill) in members {
        for mut o in skill.l3.observations {
            let remap = |id: &Option<String>| {
                id.as_ref().and_then(|l| leaf_map.get(&(old_skill.clone(), l.clone())).cloned())
            };
            o.assigned_leaf_id = remap(&o.assigned_leaf_id);
            o.intended_leaf_id = remap(&o.intended_leaf_id);
            observations.push(o);
        }
    }
    observations.sort_by_key(|o| o.obs_id);
    for o in observations {
        merged.push_observation(o);
    }
    merged
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skill::tests::obs;
    use crate::skill::{skill_weight, ProposalPath};

    fn library_with(ids: &[&str]) -> SkillLibrary {
        let mut lib = SkillLibrary::new("Walker", 5);
        for id in ids {
            lib.skills.push(Skill::new(id, vec!["Walker".into()], "frame", "rigid frame around the actuators"));
        }
        lib
    }

    fn decide(obs_id: ObsId, skill: Option<&str>) -> AttributionDecision {
        AttributionDecision { obs_id, skill_id: skill.map(str::to_string), reason: String::new() }
    }

    #[test]
    fn null_attribution_fills_pool() {
        let mut lib = library_with(&["skill_a"]);
        apply_attribution(&mut lib, vec![obs(1, 0.5)], &[decide(1, None)]).unwrap();
        assert_eq!(lib.pool.len(), 1);
        assert_eq!(lib.total_observations(), 0);
    }

    #[test]
    fn attribution_changes_weight() {
        let mut lib = library_with(&["skill_a", "skill_b"]);
        let before = skill_weight(lib.skill("skill_a").unwrap(), 2.0);
        apply_attribution(&mut lib, vec![obs(1, 1.0), obs(2, 0.0)], &[decide(1, Some("skill_a")), decide(2, Some("skill_b"))])
            .unwrap();
        let a = lib.skill("skill_a").unwrap();
        assert_eq!(a.l3.observations.len(), 1);
        assert_eq!(a.l3.observations[0].attributed_skill.as_deref(), Some("skill_a"));
        assert_eq!(before, 0.5);
        assert_eq!(skill_weight(a, 2.0), (1.0 + 0.5) / 3.0);
        assert_eq!(lib.skill("skill_b").unwrap().l3.observations.len(), 1);
    }

    #[test]
    fn attribution_errors_leave_library_untouched() {
        let mut lib = library_with(&["skill_a"]);
        let err = apply_attribution(&mut lib, vec![obs(1, 1.0)], &[decide(1, Some("nope"))]);
        assert_eq!(err, Err(SkillError::UnknownSkillId("nope".into())));
        let err = apply_attribution(&mut lib, vec![obs(1, 1.0)], &[decide(1, None), decide(1, None)]);
        assert_eq!(err, Err(SkillError::DuplicateDecision(1)));
        let err = apply_attribution(&mut lib, vec![obs(1, 1.0), obs(2, 1.0)], &[decide(1, None)]);
        assert_eq!(err, Err(SkillError::MissingDecision(2)));
        assert!(lib.pool.is_empty());
    }

    fn add(id: &str) -> AddDecision {
        AddDecision {
            action: AddAction::Add,
            inspired_obs_ids: vec![3],
            skill: Some(NewSkillSpec {
                skill_id: id.into(),
                task_family: vec!["Walker".into()],
                structure: "frame".into(),
                condition: "load-bearing rigid arch spanning over a central actuator column with two grounded feet".into(),
            }),
        }
    }

    #[test]
    fn add_creates_one_empty_skill() {
        let mut lib = library_with(&[]);
        lib.pool.entries.push(obs(3, 1.0));
        assert!(!apply_add(&mut lib, 1, &AddDecision::no_add()).unwrap());
        assert!(lib.skills.is_empty());
        assert!(apply_add(&mut lib, 1, &add("portal_frame")).unwrap());
        let s = lib.skill("portal_frame").unwrap();
        assert_eq!(s.leaf_count(), 0);
        assert!(s.l3.observations.is_empty());
        assert_eq!(skill_weight(s, 2.0), 0.5);
        // inspiring observation stays in the pool
        assert_eq!(lib.pool.len(), 1);
        assert_eq!(apply_add(&mut lib, 1, &add("second_frame")), Err(SkillError::AddLimitExceeded(1)));
        assert_eq!(apply_add(&mut lib, 2, &add("portal_frame")), Err(SkillError::DuplicateSkillId("portal_frame".into())));
        assert_eq!(apply_add(&mut lib, 2, &add("a_b_c_d")), Err(SkillError::MalformedSkillId("a_b_c_d".into())));
    }

    fn skill_with_pending(gains: &[f64]) -> Skill {
        let mut s = Skill::new("frame", vec!["Walker".into()], "frame", "frame");
        for (i, &g) in gains.iter().enumerate() {
            s.push_observation(obs(i as u64, g));
        }
        s
    }

    #[test]
    fn diagnose_match_and_new_leaf() {
        let mut s = skill_with_pending(&[1.5, -2.0, 0.7]);
        let mut seed = RuleLeaf::new("pos_0".into(), Polarity::Positive, "side_support".into(), "rigid beside actuators".into());
        seed.absorb(100, 0.5);
        s.push_leaf(seed);
        s.l2.next_leaf_id_counter = 1;

        let out = apply_diagnose(
            &mut s,
            &[
                LeafAssignment {
                    obs_id: 0,
                    decision: LeafDecision::MatchExisting {
                        leaf_id: "pos_0".into(),
                        description_update: Some(DescriptionUpdate { mode: DescriptionMode::Append, text: "on both flanks".into() }),
                    },
                },
                LeafAssignment {
                    obs_id: 1,
                    decision: LeafDecision::NewLeaf {
                        polarity: Polarity::Negative,
                        claim: "brittle_bottom_row".into(),
                        description: "a thin soft lower edge buckles under load".into(),
                    },
                },
                LeafAssignment { obs_id: 2, decision: LeafDecision::NoLeaf },
            ],
            &[],
        )
        .unwrap();
        let pos = s.leaf("pos_0").unwrap();
        assert_eq!(pos.support_count, 2);
        assert_eq!(pos.mean_gain, 1.0); // 0.5 + (1.5 - 0.5) / 2
        assert_eq!(pos.description, "rigid beside actuators on both flanks");
        let neg = s.leaf("neg_1").unwrap();
        assert_eq!((neg.support_count, neg.mean_gain), (1, -2.0));
        assert_eq!(out.new_leaves, ["neg_1"]);
        assert_eq!(s.observation(2).unwrap().no_leaf_attempts, 1);
        assert_eq!(s.observation(0).unwrap().assigned_leaf_id.as_deref(), Some("pos_0"));
    }

    #[test]
    fn third_no_leaf_freezes() {
        let mut s = skill_with_pending(&[0.1]);
        let nl = [LeafAssignment { obs_id: 0, decision: LeafDecision::NoLeaf }];
        apply_diagnose(&mut s, &nl, &[]).unwrap();
        apply_diagnose(&mut s, &nl, &[]).unwrap();
        let out = apply_diagnose(&mut s, &nl, &[]).unwrap();
        assert_eq!(out.frozen, [0]);
        assert!(s.observation(0).unwrap().is_frozen());
        assert_eq!(apply_diagnose(&mut s, &nl, &[]), Err(SkillError::ObservationNotPending(0)));
    }

    #[test]
    fn coordinate_text_downgrades_to_no_leaf() {
        let mut s = skill_with_pending(&[1.0]);
        let out = apply_diagnose(
            &mut s,
            &[LeafAssignment {
                obs_id: 0,
                decision: LeafDecision::NewLeaf {
                    polarity: Polarity::Positive,
                    claim: "rigid_corner".into(),
                    description: "set voxel at (4,2) to rigid".into(),
                },
            }],
            &[],
        )
        .unwrap();
        assert_eq!(out.coordinate_leakage, [0]);
        assert_eq!(s.leaf_count(), 0);
        assert_eq!(s.observation(0).unwrap().no_leaf_attempts, 1);
    }

    #[test]
    fn diagnose_rejects_unknown_ids() {
        let mut s = skill_with_pending(&[1.0]);
        let bad_leaf = [LeafAssignment {
            obs_id: 0,
            decision: LeafDecision::MatchExisting { leaf_id: "pos_9".into(), description_update: None },
        }];
        assert_eq!(apply_diagnose(&mut s, &bad_leaf, &[]), Err(SkillError::UnknownLeafId("pos_9".into())));
        let bad_obs = [LeafAssignment { obs_id: 42, decision: LeafDecision::NoLeaf }];
        assert_eq!(apply_diagnose(&mut s, &bad_obs, &[]), Err(SkillError::UnknownObsId(42)));
    }

    #[test]
    fn standalone_needs_two_observations() {
        let mut s = skill_with_pending(&[1.0, 3.0]);
        let thin = StandaloneLeaf {
            polarity: Polarity::Positive,
            claim: "wide_base".into(),
            description: "material spans the full lower edge".into(),
            supporting_obs_ids: vec![0],
        };
        let out = apply_diagnose(&mut s, &[], &[thin.clone()]).unwrap();
        assert_eq!(out.rejected_standalone, 1);
        let ok = StandaloneLeaf { supporting_obs_ids: vec![0, 1], ..thin };
        apply_diagnose(&mut s, &[], &[ok]).unwrap();
        let leaf = s.leaf("pos_0").unwrap();
        assert_eq!((leaf.support_count, leaf.mean_gain), (2, 2.0));
    }

    #[test]
    fn merge_preserves_everything() {
        let mut lib = library_with(&["arch_a", "arch_b", "other"]);
        for (i, id) in [(0u64, "arch_a"), (1, "arch_a"), (2, "arch_b"), (3, "arch_b"), (4, "arch_b")] {
            let mut o = obs(i, i as f64 - 1.0);
            o.proposal_path = ProposalPath::A;
            lib.skill_mut(id).unwrap().push_observation(o);
        }
        {
            let a = lib.skill_mut("arch_a").unwrap();
            let id = a.issue_leaf_id(Polarity::Positive);
            let mut leaf = RuleLeaf::new(id, Polarity::Positive, "x".into(), "y".into());
            leaf.absorb(0, -1.0);
            a.push_leaf(leaf);
            a.observation_mut(0).unwrap().assigned_leaf_id = Some("pos_0".into());
            let b = lib.skill_mut("arch_b").unwrap();
            let id = b.issue_leaf_id(Polarity::Negative);
            b.push_leaf(RuleLeaf::new(id, Polarity::Negative, "z".into(), "w".into()));
            b.l1.condition = "arch b condition".into();
        }
        let gains: Vec<f64> = (0..5).map(|i| i as f64 - 1.0).collect();
        apply_merge(&mut lib, &[]).unwrap();
        assert_eq!(lib.skills.len(), 3);

        apply_merge(
            &mut lib,
            &[MergeCluster { group_label: "arch".into(), skill_ids: vec!["arch_b".into(), "arch_a".into()], reason: String::new() }],
        )
        .unwrap();
        assert_eq!(lib.skills.len(), 2);
        let m = lib.skill("arch").unwrap();
        assert_eq!(m.l3.observations.len(), 5);
        assert_eq!(m.leaf_count(), 2);
        assert_eq!(m.l1.condition, "arch b condition");
        assert_eq!(m.observation(0).unwrap().assigned_leaf_id.as_deref(), Some("pos_0"));
        assert!(m.l3.observations.iter().all(|o| o.attributed_skill.as_deref() == Some("arch")));
        let direct = (1.0 + gains.iter().map(|g| (g / 2.0).clamp(0.0, 1.0)).sum::<f64>()) / 7.0;
        assert_eq!(skill_weight(m, 2.0), direct);
    }

    #[test]
    fn merge_validation() {
        let mut lib = library_with(&["a", "b", "c"]);
        let c = |label: &str, ids: &[&str]| MergeCluster {
            group_label: label.into(),
            skill_ids: ids.iter().map(|s| s.to_string()).collect(),
            reason: String::new(),
        };
        assert_eq!(apply_merge(&mut lib, &[c("x", &["a"])]), Err(SkillError::SingletonCluster("x".into())));
        assert_eq!(
            apply_merge(&mut lib, &[c("x", &["a", "b"]), c("y", &["b", "c"])]),
            Err(SkillError::OverlappingClusters("b".into()))
        );
        assert_eq!(apply_merge(&mut lib, &[c("x", &["a", "q"])]), Err(SkillError::UnknownSkillId("q".into())));
        assert_eq!(apply_merge(&mut lib, &[c("c", &["a", "b"])]), Err(SkillError::DuplicateSkillId("c".into())));
        assert_eq!(lib.skills.len(), 3);
        // Reusing a member's own id as the label is allowed.
        apply_merge(&mut lib, &[c("a", &["a", "b"])]).unwrap();
        assert_eq!(lib.skills.len(), 2);
    }
}
