//! Text blocks substituted into templates, and the structured views of the
//! same data attached to requests as context.

use serde::{Deserialize, Serialize};

use crate::skill::{Observation, ObsId, Polarity, RuleLeaf, Skill};
use crate::voxel::{diff, Body};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafView {
    pub leaf_id: String,
    pub polarity: Polarity,
    pub claim: String,
    pub description: String,
    pub support_count: usize,
    pub avg_gain: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_support: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_avg_gain: Option<f64>,
}

impl From<&RuleLeaf> for LeafView {
    fn from(l: &RuleLeaf) -> Self {
        LeafView {
            leaf_id: l.leaf_id.clone(),
            polarity: l.polarity,
            claim: l.claim.clone(),
            description: l.description.clone(),
            support_count: l.support_count,
            avg_gain: l.mean_gain,
            prior_support: l.prior.as_ref().map(|p| p.support_count),
            prior_avg_gain: l.prior.as_ref().map(|p| p.mean_gain),
        }
    }
}

impl LeafView {
    /// Live mean once the leaf has target evidence, otherwise the prior.
    pub fn effective_gain(&self) -> f64 {
        if self.support_count > 0 {
            self.avg_gain
        } else {
            self.prior_avg_gain.unwrap_or(0.0)
        }
    }

    fn line(&self) -> String {
        let mut s = format!(
            "leaf_id={} claim={} avg_gain={:+.3} support={}",
            self.leaf_id, self.claim, self.avg_gain, self.support_count
        );
        if let (Some(n), Some(g)) = (self.prior_support, self.prior_avg_gain) {
            s.push_str(&format!(" prior_avg_gain={g:+.3} prior_support={n}"));
        }
        s.push_str(": ");
        s.push_str(&self.description);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillView {
    pub skill_id: String,
    pub structure: String,
    pub condition: String,
    pub weight: f64,
    pub positive: Vec<LeafView>,
    pub negative: Vec<LeafView>,
}

impl SkillView {
    /// `include_rules = false` hides every L2 leaf.
    pub fn of(skill: &Skill, delta_max: f64, include_rules: bool) -> Self {
        let leaves = |v: &[RuleLeaf]| if include_rules { v.iter().map(LeafView::from).collect() } else { Vec::new() };
        SkillView {
            skill_id: skill.skill_id.clone(),
            structure: skill.l1.structure.clone(),
            condition: skill.l1.condition.clone(),
            weight: skill.weight(delta_max),
            positive: leaves(&skill.l2.positive),
            negative: leaves(&skill.l2.negative),
        }
    }

    /// Positive leaves by descending effective gain, ties by leaf id.
    pub fn top_positive(&self, k: usize) -> Vec<&LeafView> {
        let mut v: Vec<&LeafView> = self.positive.iter().collect();
        v.sort_by(|a, b| b.effective_gain().total_cmp(&a.effective_gain()).then_with(|| a.leaf_id.cmp(&b.leaf_id)));
        v.truncate(k);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignView {
    pub obs_id: ObsId,
    pub body: Body,
    pub fitness: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub child_body: Body,
    pub child_fitness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotView {
    pub slot_index: usize,
    pub skill: Option<SkillView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColdStartContext {
    pub n_designs: usize,
    pub grid_size: usize,
    pub references: Vec<Body>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposeContext {
    pub parent: Body,
    pub parent_fitness: f64,
    pub mutation_range: (usize, usize),
    pub slots: Vec<SlotView>,
    pub history: Vec<Body>,
    pub references: Vec<Body>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeContext {
    pub skills: Vec<SkillView>,
    pub designs: Vec<Body>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddContext {
    pub task: String,
    pub high: Vec<DesignView>,
    pub low: Vec<DesignView>,
    pub existing: Vec<SkillView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseObs {
    pub obs_id: ObsId,
    pub gain: f64,
    pub parent_body: Body,
    pub child_body: Body,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseContext {
    pub skill: SkillView,
    pub unassigned: Vec<DiagnoseObs>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeContext {
    pub skills: Vec<SkillView>,
}

fn indented(body: &Body, pad: &str) -> String {
    body.render().lines().map(|l| format!("{pad}{l}")).collect::<Vec<_>>().join("\n")
}

pub fn body_block(body: &Body) -> String {
    body.render()
}

/// Per-slot skill listing for the mutation prompt.
pub fn skill_assignments_block(slots: &[SlotView]) -> String {
    let mut out = Vec::new();
    for slot in slots {
        match &slot.skill {
            None => out.push(format!(
                "slot_index={}: skill_id=null (no skill available; propose a small exploratory edit)",
                slot.slot_index
            )),
            Some(s) => {
                out.push(format!("slot_index={}: skill_id={} (weight={:.4})", slot.slot_index, s.skill_id, s.weight));
                out.push(format!("  L1 structure: {}", s.structure));
                out.push(format!("  L1 condition: {}", s.condition));
                for (title, leaves) in [("L2 positive rules", &s.positive), ("L2 negative rules", &s.negative)] {
                    if leaves.is_empty() {
                        continue;
                    }
                    out.push(format!("  {title}:"));
                    for l in leaves {
                        out.push(format!("    - {}", l.line()));
                    }
                }
            }
        }
    }
    out.join("\n")
}

pub fn history_block(entries: &[HistoryEntry], parent: &Body) -> String {
    if entries.is_empty() {
        return "(none yet)".to_string();
    }
    let mut out = Vec::new();
    for (i, e) in entries.iter().enumerate() {
        let d = diff(parent, &e.child_body).map(|d| d.render()).unwrap_or_else(|_| "(size mismatch)".into());
        out.push(format!("- entry {}: child_fitness={:.3}", i + 1, e.child_fitness));
        out.push(format!("  voxel_diff: {d}"));
        out.push("  child_body:".to_string());
        out.push(indented(&e.child_body, "    "));
    }
    out.join("\n")
}

/// Withheld history, for the no-rules ablation.
pub const HISTORY_WITHHELD: &str = "(withheld)";

/// Source elite bodies for with-reference transfer; empty otherwise.
pub fn static_reference_block(references: &[(Body, f64)]) -> String {
    if references.is_empty() {
        return String::new();
    }
    let mut out = vec!["Reference designs:".to_string()];
    for (i, (b, f)) in references.iter().enumerate() {
        out.push(format!("reference {} (source fitness={f:.3}):", i + 1));
        out.push(indented(b, "  "));
    }
    out.join("\n") + "\n"
}

/// Skills with L1 and their top two positive leaves (Attribute and Add).
pub fn skills_summary_block(skills: &[SkillView]) -> String {
    if skills.is_empty() {
        return "(none)".to_string();
    }
    let mut out = Vec::new();
    for s in skills {
        out.push(format!("- skill_id={} structure={}", s.skill_id, s.structure));
        out.push(format!("  l1_condition: {}", s.condition));
        let top = s.top_positive(2);
        if top.is_empty() {
            out.push("  top_positive_leaves: (none)".to_string());
        } else {
            out.push("  top_positive_leaves:".to_string());
            for l in top {
                out.push(format!("    - {}: {}", l.claim, l.description));
            }
        }
    }
    out.join("\n")
}

pub fn designs_block(designs: &[Body]) -> String {
    designs
        .iter()
        .enumerate()
        .map(|(i, b)| format!("design local_index={i}:\n{}", indented(b, "  ")))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn scored_designs_block(designs: &[DesignView]) -> String {
    if designs.is_empty() {
        return "(none)".to_string();
    }
    designs
        .iter()
        .map(|d| format!("obs_id={} fitness={:.3} gain={:+.3}\n{}", d.obs_id, d.fitness, d.gain, indented(&d.body, "  ")))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn leaves_json(skill: &SkillView) -> String {
    let all: Vec<&LeafView> = skill.positive.iter().chain(&skill.negative).collect();
    serde_json::to_string_pretty(&all).expect("leaves serialize")
}

#[derive(Serialize)]
struct ObsJson<'a> {
    obs_id: ObsId,
    gain: f64,
    child_fitness: f64,
    parent_fitness: f64,
    voxel_diff: String,
    child_body: &'a Body,
}

pub fn observations_json(observations: &[&Observation]) -> String {
    let rows: Vec<ObsJson> = observations
        .iter()
        .map(|o| ObsJson {
            obs_id: o.obs_id,
            gain: o.gain,
            child_fitness: o.fitness,
            parent_fitness: o.parent_fitness,
            voxel_diff: diff(&o.parent_body, &o.child_body).map(|d| d.render()).unwrap_or_default(),
            child_body: &o.child_body,
        })
        .collect();
    serde_json::to_string_pretty(&rows).expect("observations serialize")
}

/// L1 identity of every skill, one JSON object per line (Merge).
pub fn skills_full_content(skills: &[Skill]) -> String {
    if skills.is_empty() {
        return "(none)".to_string();
    }
    skills
        .iter()
        .map(|s| {
            serde_json::json!({"skill_id": s.skill_id, "task_family": s.task_family, "l1": s.l1}).to_string()
        })
        .collect::<Vec<_>>()
        .join("\n")
}
