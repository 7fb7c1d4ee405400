//! Response parsing. Every failure maps to a degraded decision: Propose
//! slots fall back to GA mutation, maintenance decisions become no-ops.

use std::collections::HashSet;

use serde_json::Value;

use crate::skill::{
    is_snake_case_id, mentions_coordinates, AddAction, AddDecision, LeafAssignment, LeafDecision, MergeCluster,
    NewSkillSpec, ObsId, Skill, StandaloneLeaf,
};
use crate::voxel::{diff, is_valid, repair, Body, BodyError};

use super::TemplateId;

/// First balanced `{...}` in `text` that parses as JSON.
pub fn extract_first_json_object(text: &str) -> Option<Value> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(off) = text[start..].find('{') {
        let open = start + off;
        let mut depth = 0usize;
        let mut in_str = false;
        let mut escaped = false;
        let mut end = None;
        for (i, &b) in bytes.iter().enumerate().skip(open) {
            if in_str {
                match (escaped, b) {
                    (true, _) => escaped = false,
                    (false, b'\\') => escaped = true,
                    (false, b'"') => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(i);
                        break;
                    }
                }
                _ => {}
            }
        }
        if let Some(end) = end {
            if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(&text[open..=end]) {
                return Some(v);
            }
        }
        start = open + 1;
    }
    None
}

/// Top-level shape check for each template's response schema.
pub fn check_schema(template: TemplateId, v: &Value) -> Result<(), String> {
    let array_at = |key: &str| match v.get(key) {
        Some(Value::Array(_)) => Ok(()),
        _ => Err(format!("`{key}` must be an array")),
    };
    match template {
        TemplateId::ColdStart | TemplateId::Propose => array_at("designs"),
        TemplateId::Attribute => array_at("assignments"),
        TemplateId::Merge => array_at("clusters"),
        TemplateId::Diagnose => array_at("leaf_assignments"),
        TemplateId::Add => match v.get("decision").and_then(|d| d.get("action")).and_then(Value::as_str) {
            Some("add") | Some("no_add") => Ok(()),
            _ => Err("`decision.action` must be \"add\" or \"no_add\"".into()),
        },
    }
}

fn body_from_value(v: &Value, grid: usize) -> Option<Body> {
    let rows: Vec<Vec<i64>> = v
        .as_array()?
        .iter()
        .map(|r| r.as_array().and_then(|cells| cells.iter().map(Value::as_i64).collect::<Option<Vec<i64>>>()))
        .collect::<Option<_>>()?;
    let body = Body::from_rows(rows).ok()?;
    (body.size() == grid).then_some(body)
}

/// Valid as given, valid after repair, or unusable.
fn gate(body: Body) -> Option<(Body, bool)> {
    if is_valid(&body) {
        return Some((body, false));
    }
    repair(&body).ok().map(|b| (b, true))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeClass {
    Within,
    Outside,
}

/// Classifies the edit count between `parent` and `child` against the
/// requested mutation range. An unchanged child is always outside.
pub fn mutation_range_check(parent: &Body, child: &Body, low: usize, high: usize) -> Result<RangeClass, BodyError> {
    let n = diff(parent, child)?.count;
    Ok(if n > 0 && (low..=high).contains(&n) { RangeClass::Within } else { RangeClass::Outside })
}

/// One requested slot: its index and assigned skill.
#[derive(Debug, Clone, Copy)]
pub struct SlotSpec<'a> {
    pub slot_index: usize,
    pub skill: Option<&'a Skill>,
}

pub struct ProposeExpectation<'a> {
    pub parent: &'a Body,
    pub slots: Vec<SlotSpec<'a>>,
    pub history: &'a [Body],
    pub mutation_range: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposedChild {
    pub slot_index: usize,
    pub body: Body,
    pub repaired: bool,
    pub reasoning: String,
    pub assigned_skill: Option<String>,
    pub intended_leaf_id: Option<String>,
    /// A non-null `intended_leaf_id` that named no leaf of the assigned skill.
    pub leaf_nulled: bool,
    pub out_of_range: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SlotOutcome {
    Accepted(ProposedChild),
    Fallback { slot_index: usize, reason: String },
}

impl SlotOutcome {
    pub fn slot_index(&self) -> usize {
        match self {
            SlotOutcome::Accepted(c) => c.slot_index,
            SlotOutcome::Fallback { slot_index, .. } => *slot_index,
        }
    }
}

/// One outcome per expected slot, in slot order. `response` is `None` when
/// nothing parseable came back, which sends every slot to fallback.
pub fn validate_propose(response: Option<&Value>, exp: &ProposeExpectation) -> Vec<SlotOutcome> {
    let grid = exp.parent.size();
    let designs: Vec<&Value> = response
        .and_then(|v| v.get("designs"))
        .and_then(Value::as_array)
        .map(|a| a.iter().collect())
        .unwrap_or_default();
    let mut seen: HashSet<Body> = exp.history.iter().cloned().collect();
    seen.insert(exp.parent.clone());
    let mut out = Vec::with_capacity(exp.slots.len());
    for (pos, spec) in exp.slots.iter().enumerate() {
        let fallback = |reason: &str| SlotOutcome::Fallback { slot_index: spec.slot_index, reason: reason.to_string() };
        let design = designs
            .iter()
            .find(|d| d.get("slot_index").and_then(Value::as_u64) == Some(spec.slot_index as u64))
            .or_else(|| designs.get(pos).filter(|d| d.get("slot_index").is_none()));
        let Some(design) = design else {
            out.push(fallback("no design returned for slot"));
            continue;
        };
        let Some(raw) = design.get("body").and_then(|b| body_from_value(b, grid)) else {
            out.push(fallback("malformed body"));
            continue;
        };
        let Some((body, repaired)) = gate(raw) else {
            out.push(fallback("invalid body could not be repaired"));
            continue;
        };
        if seen.contains(&body) {
            out.push(fallback("duplicates the parent, a history entry or another slot"));
            continue;
        }
        let (lo, hi) = exp.mutation_range;
        let out_of_range = mutation_range_check(exp.parent, &body, lo, hi).expect("same grid") == RangeClass::Outside;
        if out_of_range {
            log::info!("slot {} edit count outside {lo}-{hi}; accepted", spec.slot_index);
        }
        let raw_leaf = design.get("intended_leaf_id").and_then(Value::as_str).map(str::to_string);
        let valid_leaf = raw_leaf.clone().filter(|id| spec.skill.is_some_and(|s| s.leaf(id).is_some()));
        seen.insert(body.clone());
        out.push(SlotOutcome::Accepted(ProposedChild {
            slot_index: spec.slot_index,
            body,
            repaired,
            reasoning: design.get("reasoning").and_then(Value::as_str).unwrap_or_default().to_string(),
            assigned_skill: spec.skill.map(|s| s.skill_id.clone()),
            leaf_nulled: raw_leaf.is_some() && valid_leaf.is_none(),
            intended_leaf_id: valid_leaf,
            out_of_range,
        }));
    }
    out
}

/// Cold-start bodies, one entry per requested design; `None` entries need
/// a random replacement. Second and later copies of a body count as `None`.
pub fn validate_cold_start(response: Option<&Value>, n_designs: usize, grid: usize) -> Vec<Option<(Body, bool)>> {
    let designs = response.and_then(|v| v.get("designs")).and_then(Value::as_array);
    let mut seen = HashSet::new();
    (0..n_designs)
        .map(|i| {
            let d = designs?.get(i)?;
            let (b, repaired) = gate(body_from_value(d.get("body")?, grid)?)?;
            seen.insert(b.clone()).then_some((b, repaired))
        })
        .collect()
}

/// Skill per design. Unknown ids and missing entries map to `None`.
pub fn validate_attribute(response: Option<&Value>, n_designs: usize, skills: &[&str]) -> Result<Vec<Option<String>>, String> {
    let v = response.ok_or("no JSON object")?;
    check_schema(TemplateId::Attribute, v)?;
    let mut out = vec![None; n_designs];
    for a in v["assignments"].as_array().unwrap() {
        let Some(i) = a.get("local_index").and_then(Value::as_u64).map(|i| i as usize) else {
            return Err("assignment without local_index".into());
        };
        if i >= n_designs {
            return Err(format!("local_index {i} out of range"));
        }
        match a.get("skill_id") {
            Some(Value::String(id)) if skills.contains(&id.as_str()) => out[i] = Some(id.clone()),
            Some(Value::String(id)) => log::warn!("attribute named unknown skill `{id}`; left unassigned"),
            _ => {}
        }
    }
    Ok(out)
}

fn empty_array(v: &Value, path: &[&str]) -> Result<(), String> {
    let mut cur = v;
    for p in path {
        match cur.get(p) {
            Some(next) => cur = next,
            None => return Ok(()),
        }
    }
    match cur {
        Value::Array(a) if a.is_empty() => Ok(()),
        Value::Null => Ok(()),
        _ => Err(format!("{} must be an empty list", path.join("."))),
    }
}

fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Add decision. Inspiring ids outside `candidates` are discarded.
pub fn validate_add(response: Option<&Value>, task: &str, candidates: &[ObsId]) -> Result<AddDecision, String> {
    let v = response.ok_or("no JSON object")?;
    check_schema(TemplateId::Add, v)?;
    let d = &v["decision"];
    if d["action"] == "no_add" {
        return Ok(AddDecision::no_add());
    }
    let skill = d.get("skill").filter(|s| s.is_object()).ok_or("add without a skill")?;
    empty_array(skill, &["l2", "positive"])?;
    empty_array(skill, &["l2", "negative"])?;
    empty_array(skill, &["l3", "observations"])?;
    let skill_id = skill.get("skill_id").and_then(Value::as_str).ok_or("missing skill_id")?;
    if !is_snake_case_id(skill_id, 3) {
        return Err(format!("skill_id `{skill_id}` is not short snake_case"));
    }
    let structure = skill.pointer("/l1/structure").and_then(Value::as_str).ok_or("missing l1.structure")?.trim();
    if structure.is_empty() || structure.contains(char::is_whitespace) {
        return Err(format!("l1.structure `{structure}` is not one word"));
    }
    let condition = skill
        .pointer("/l1/condition")
        .or_else(|| skill.get("condition"))
        .and_then(Value::as_str)
        .ok_or("missing l1.condition")?
        .trim();
    if !(10..=25).contains(&word_count(condition)) {
        return Err(format!("l1.condition has {} words", word_count(condition)));
    }
    if mentions_coordinates(condition) {
        return Err("l1.condition names voxel coordinates".into());
    }
    let mut task_family: Vec<String> = skill
        .get("task_family")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_str).map(str::to_string).collect())
        .unwrap_or_default();
    if !task_family.iter().any(|t| t == task) {
        task_family.push(task.to_string());
    }
    let inspired = d
        .get("inspired_obs_ids")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_u64).filter(|id| candidates.contains(id)).collect())
        .unwrap_or_default();
    Ok(AddDecision {
        action: AddAction::Add,
        inspired_obs_ids: inspired,
        skill: Some(NewSkillSpec {
            skill_id: skill_id.to_string(),
            task_family,
            structure: structure.to_string(),
            condition: condition.to_string(),
        }),
    })
}

fn check_claim(claim: &str) -> Result<(), String> {
    let ok = claim.split('_').all(|w| !w.is_empty() && w.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit()))
        && (1..=4).contains(&claim.split('_').count());
    if ok {
        Ok(())
    } else {
        Err(format!("claim `{claim}` is not snake_case of 1 to 4 words"))
    }
}

/// Leaf assignments and standalone leaves for one skill.
pub fn validate_diagnose(response: Option<&Value>) -> Result<(Vec<LeafAssignment>, Vec<StandaloneLeaf>), String> {
    let v = response.ok_or("no JSON object")?;
    check_schema(TemplateId::Diagnose, v)?;
    let mut assignments = Vec::new();
    for raw in v["leaf_assignments"].as_array().unwrap() {
        let mut a = raw.clone();
        if let Some(obj) = a.as_object_mut() {
            let drop_update = obj
                .get("description_update")
                .is_some_and(|u| u.is_null() || u.get("mode").is_none_or(Value::is_null) || u.get("text").is_none_or(Value::is_null));
            if drop_update {
                obj.remove("description_update");
            }
        }
        let parsed: LeafAssignment = serde_json::from_value(a).map_err(|e| format!("leaf assignment: {e}"))?;
        if let LeafDecision::NewLeaf { claim, .. } = &parsed.decision {
            check_claim(claim)?;
        }
        assignments.push(parsed);
    }
    let standalone: Vec<StandaloneLeaf> = match v.get("standalone_new_leaves") {
        None | Some(Value::Null) => Vec::new(),
        Some(s) => serde_json::from_value(s.clone()).map_err(|e| format!("standalone leaves: {e}"))?,
    };
    for s in &standalone {
        check_claim(&s.claim)?;
    }
    Ok((assignments, standalone))
}

pub fn validate_merge(response: Option<&Value>) -> Result<Vec<MergeCluster>, String> {
    let v = response.ok_or("no JSON object")?;
    check_schema(TemplateId::Merge, v)?;
    serde_json::from_value(v["clusters"].clone()).map_err(|e| format!("clusters: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skill::{Polarity, RuleLeaf};
    use serde_json::json;

    #[test]
    fn extraction_skips_prose_and_broken_objects() {
        let v = extract_first_json_object("ok {not json} then {\"a\": \"}{\", \"b\": {\"c\": 1}} tail {\"z\":2}").unwrap();
        assert_eq!(v, json!({"a": "}{", "b": {"c": 1}}));
        assert!(extract_first_json_object("no braces here").is_none());
        assert!(extract_first_json_object("{\"open\": ").is_none());
    }

    #[test]
    fn range_classes() {
        let mut p = Body::empty(5);
        p.set(4, 0, 3);
        let mut c = p.clone();
        c.set(4, 1, 1);
        c.set(4, 2, 1);
        assert_eq!(mutation_range_check(&p, &c, 1, 3), Ok(RangeClass::Within));
        assert_eq!(mutation_range_check(&p, &p, 1, 3), Ok(RangeClass::Outside));
        let mut big = Body::empty(10);
        for i in 0..12 {
            big.set(i / 10, i % 10, 1);
        }
        assert_eq!(mutation_range_check(&Body::empty(10), &big, 1, 10), Ok(RangeClass::Outside));
        assert_eq!(mutation_range_check(&p, &Body::empty(3), 1, 3), Err(BodyError::SizeMismatch(5, 3)));
    }

    fn parent() -> Body {
        Body::from_rows(vec![
            vec![0, 0, 0, 0, 0],
            vec![0, 0, 0, 0, 0],
            vec![0, 0, 0, 0, 0],
            vec![1, 3, 3, 3, 1],
            vec![1, 0, 0, 0, 1],
        ])
        .unwrap()
    }

    fn skill() -> Skill {
        let mut s = Skill::new("side_frame", vec!["Walker".into()], "frame", "rigid frame");
        let id = s.issue_leaf_id(Polarity::Positive);
        s.push_leaf(RuleLeaf::new(id, Polarity::Positive, "side_support".into(), "d".into()));
        s
    }

    #[test]
    fn propose_repair_leaf_nulling_and_fallback() {
        let p = parent();
        let sk = skill();
        let mut stray = p.rows();
        stray[4][2] = 1; // connected edit
        stray[0][4] = 2; // isolated, under 20% of material
        let mut good = p.rows();
        good[4][1] = 1;
        let resp = json!({"designs": [
            {"slot_index": 0, "body": stray, "reasoning": "r", "based_on_skill": "side_frame", "intended_leaf_id": "side_support"},
            {"slot_index": 1, "body": good, "reasoning": "r", "based_on_skill": "side_frame", "intended_leaf_id": "pos_0"},
            {"slot_index": 2, "body": p.rows(), "reasoning": "same", "based_on_skill": null, "intended_leaf_id": null},
        ]});
        let exp = ProposeExpectation {
            parent: &p,
            slots: vec![
                SlotSpec { slot_index: 0, skill: Some(&sk) },
                SlotSpec { slot_index: 1, skill: Some(&sk) },
                SlotSpec { slot_index: 2, skill: None },
                SlotSpec { slot_index: 3, skill: None },
            ],
            history: &[],
            mutation_range: (1, 3),
        };
        let out = validate_propose(Some(&resp), &exp);
        let SlotOutcome::Accepted(a) = &out[0] else { panic!("{:?}", out[0]) };
        assert!(a.repaired && a.leaf_nulled && a.intended_leaf_id.is_none());
        assert_eq!(a.body.get(0, 4), 0);
        assert!(is_valid(&a.body));
        let SlotOutcome::Accepted(b) = &out[1] else { panic!() };
        assert!(!b.repaired && !b.leaf_nulled);
        assert_eq!(b.intended_leaf_id.as_deref(), Some("pos_0"));
        assert!(matches!(out[2], SlotOutcome::Fallback { slot_index: 2, .. }));
        assert!(matches!(out[3], SlotOutcome::Fallback { slot_index: 3, .. }));
        assert!(validate_propose(None, &exp).iter().all(|o| matches!(o, SlotOutcome::Fallback { .. })));
    }

    fn add_response(positive: Value) -> Value {
        json!({"decision": {
            "action": "add",
            "inspired_obs_ids": [3, 4, 99],
            "skill": {
                "skill_id": "braced_frame",
                "task_family": ["Walker"],
                "condition": "x",
                "l1": {"structure": "frame", "condition": "rigid frame wrapped around the actuators so each actuator pushes against stiff support"},
                "l2": {"positive": positive, "negative": [], "next_leaf_id_counter": 0},
                "l3": {"observations": [], "next_obs_id_counter": 0}
            },
            "reasoning": {}
        }})
    }

    #[test]
    fn add_validation() {
        let d = validate_add(Some(&add_response(json!([]))), "Walker", &[3, 4]).unwrap();
        assert_eq!(d.action, AddAction::Add);
        assert_eq!(d.inspired_obs_ids, vec![3, 4]);
        assert_eq!(d.skill.unwrap().structure, "frame");
        assert!(validate_add(Some(&add_response(json!([{"leaf_id": "pos_0"}]))), "Walker", &[]).is_err());
        let no = json!({"decision": {"action": "no_add", "inspired_obs_ids": [], "skill": null}});
        assert_eq!(validate_add(Some(&no), "Walker", &[]).unwrap(), AddDecision::no_add());
        assert!(validate_add(Some(&json!({"decision": {"action": "maybe"}})), "Walker", &[]).is_err());
    }

    #[test]
    fn diagnose_validation() {
        let v = json!({"leaf_assignments": [
            {"obs_id": 1, "decision": "match_existing", "leaf_id": "pos_0", "description_update": {"mode": null, "text": null}},
            {"obs_id": 2, "decision": "new_leaf", "polarity": "negative", "claim": "bare_top", "description": "d"},
            {"obs_id": 3, "decision": "no_leaf"}
        ], "standalone_new_leaves": []});
        let (a, s) = validate_diagnose(Some(&v)).unwrap();
        assert_eq!(a.len(), 3);
        assert!(matches!(&a[0].decision, LeafDecision::MatchExisting { description_update: None, .. }));
        assert!(s.is_empty());
        let bad = json!({"leaf_assignments": [
            {"obs_id": 2, "decision": "new_leaf", "polarity": "negative", "claim": "Bare Top", "description": "d"}
        ]});
        assert!(validate_diagnose(Some(&bad)).is_err());
    }

    #[test]
    fn attribute_and_merge_validation() {
        let v = json!({"assignments": [
            {"local_index": 0, "skill_id": "a", "reason": ""},
            {"local_index": 1, "skill_id": "ghost", "reason": ""}
        ]});
        assert_eq!(validate_attribute(Some(&v), 3, &["a"]).unwrap(), vec![Some("a".to_string()), None, None]);
        assert!(validate_attribute(None, 3, &["a"]).is_err());
        let m = json!({"clusters": [{"group_label": "g", "skill_ids": ["a", "b"], "reason": "same"}]});
        assert_eq!(validate_merge(Some(&m)).unwrap().len(), 1);
        assert!(validate_merge(Some(&json!({"clusters": [{"skill_ids": 3}]}))).is_err());
    }
}
