//! Library maintenance by hand: Attribute, Add, Diagnose and Merge, with the
//! weight and retrieval rules that drive sampling.

use morphoskill::llm::{validate_add, validate_diagnose, validate_merge, BackendResponse, TemplateId};
use morphoskill::skill::{
    apply_add, apply_attribution, apply_diagnose, apply_merge, retrieve, sample_skill, AttributionDecision,
    Observation, ProposalPath, SkillLibrary,
};
use morphoskill::voxel::Body;
use serde_json::json;

fn observation(obs_id: u64, gain: f64) -> Observation {
    let body = Body::from_rows(vec![vec![1, 1, 1], vec![3, 0, 3], vec![3, 0, 3]]).unwrap();
    Observation {
        obs_id,
        generation: 1,
        child_body: body.clone(),
        parent_body: body,
        task: "Walker".into(),
        scale: 3,
        fitness: 4.0 + gain,
        parent_fitness: 4.0,
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

fn reply(template: TemplateId, value: serde_json::Value) -> BackendResponse {
    BackendResponse::from_text(template, value.to_string())
}

fn main() {
    let mut lib = SkillLibrary::new("Walker", 5);
    let obs: Vec<Observation> = (1..=4).map(|i| observation(i, [1.5, -0.5, 0.8, 2.4][i as usize - 1])).collect();
    let none: Vec<AttributionDecision> =
        obs.iter().map(|o| AttributionDecision { obs_id: o.obs_id, skill_id: None, reason: "new".into() }).collect();
    apply_attribution(&mut lib, obs, &none).unwrap();
    println!("pool after Attribute: {}", lib.pool.len());

    for (gen, id) in [(1, "arch_legs"), (2, "flat_sled")] {
        let add = reply(TemplateId::Add, json!({"decision": {"action": "add", "inspired_obs_ids": [1, 4], "skill": {
            "skill_id": id, "task_family": ["Walker"],
            "l1": {"structure": "legs", "condition": "two actuated legs hang below a stiff passive deck that spans the full body width"},
            "l2": {"positive": [], "negative": []}, "l3": {"observations": []}}}}));
        let decision = validate_add(add.value(), "Walker", &[1, 2, 3, 4]).unwrap();
        println!("Add {id}: {}", apply_add(&mut lib, gen, &decision).unwrap());
    }

    let moved: Vec<Observation> = lib.pool.entries.drain(..).collect();
    let to_arch: Vec<AttributionDecision> = moved
        .iter()
        .map(|o| AttributionDecision { obs_id: o.obs_id, skill_id: Some("arch_legs".into()), reason: String::new() })
        .collect();
    apply_attribution(&mut lib, moved, &to_arch).unwrap();

    let skill = lib.skill_mut("arch_legs").unwrap();
    let first = reply(TemplateId::Diagnose, json!({"leaf_assignments": [
        {"obs_id": 1, "decision": "new_leaf", "polarity": "positive", "claim": "wide_stance",
         "description": "legs spread to the outer edges keep the deck level"},
        {"obs_id": 2, "decision": "new_leaf", "polarity": "negative", "claim": "hollow_deck",
         "description": "gaps in the deck let it fold"}], "standalone_new_leaves": []}));
    let (assignments, standalone) = validate_diagnose(first.value()).unwrap();
    let outcome = apply_diagnose(skill, &assignments, &standalone).unwrap();
    println!("Diagnose round 1: {outcome:?}");
    let wide = outcome.new_leaves[0].clone();
    let second = reply(TemplateId::Diagnose, json!({"leaf_assignments": [
        {"obs_id": 3, "decision": "match_existing", "leaf_id": wide},
        {"obs_id": 4, "decision": "no_leaf"}]}));
    let (assignments, standalone) = validate_diagnose(second.value()).unwrap();
    println!("Diagnose round 2: {:?}", apply_diagnose(skill, &assignments, &standalone).unwrap());
    for leaf in skill.leaves() {
        println!("  {} {:?} n={} mean={:.3} {:?}", leaf.leaf_id, leaf.polarity, leaf.support_count, leaf.mean_gain, leaf.supporting_obs_ids);
    }

    for s in &lib.skills {
        println!("weight {} = {:.4}", s.skill_id, s.weight(2.0));
    }
    let candidates = retrieve(&lib.skills, "Walker", 5, 3, 5);
    let picks: Vec<&str> = (0..10).map(|seed| sample_skill(&candidates, 2.0, seed).unwrap().skill_id.as_str()).collect();
    println!("ten weighted draws: {picks:?}");

    let merge = reply(TemplateId::Merge, json!({"clusters": [
        {"group_label": "legged_deck", "skill_ids": ["arch_legs", "flat_sled"], "reason": "same frame"}]}));
    apply_merge(&mut lib, &validate_merge(merge.value()).unwrap()).unwrap();
    let merged = &lib.skills[0];
    println!("after Merge: {} skill `{}` with {} leaves, {} observations", lib.skills.len(), merged.skill_id, merged.leaf_count(), lib.total_observations());
}
