//! Prompt templates and the placeholder renderer.
//!
//! Templates use `{name}` and `{name:.3f}` placeholders. Substitution is a
//! single pass over the template, so substituted text may itself contain
//! braces (JSON blocks, schema examples) without being re-expanded.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};

use super::{LlmError, OpKind, PromptRequest};

pub const VOXEL_LEGEND: &str = "\
Voxel type integers (robot body):
  0 = EMPTY   (no robot voxel)
  1 = RIGID   (structural, cannot actuate)
  2 = SOFT    (deformable, passive)
  3 = H_ACT   (horizontal actuator -- expands/contracts horizontally)
  4 = V_ACT   (vertical actuator -- expands/contracts vertically)
  5 = FIXED   (environment geometry only; do not use in robot bodies)";

pub const BODY_REQUIREMENTS: &str = "\
- body is a {grid_size} x {grid_size} integer grid (rows top-to-bottom, columns left-to-right)
- robot-body entries must be 0, 1, 2, 3, or 4
- the robot MUST be fully connected (all non-empty voxels reachable via 4-connectivity, no isolated groups)
- MUST contain at least one actuator (3=H_ACT or 4=V_ACT)
- do not use 5=FIXED in robot bodies";

const BODY_REQUIREMENTS_MARKER: &str = "<BODY_REQUIREMENTS>";

pub const COLD_START_TEMPLATE: &str = r#"You are an expert soft-robot morphology designer for the EvoGym simulation platform.

Task: {task_desc}

Voxel grid legend:
{voxel_legend}

Generate exactly {n_designs} diverse robot designs as a JSON object with this schema:
{
  "designs": [
    {
      "body": <{grid_size}x{grid_size} integer matrix>,
      "reasoning": "brief explanation of design choices"
    }
  ]
}

Requirements:
<BODY_REQUIREMENTS>
- Explore diverse structures -- vary leg count, body shape, actuator placement, symmetry
- Every design must be structurally different from the others
"#;

pub const PROPOSE_TEMPLATE: &str = r#"You are an expert soft-robot morphology designer for the EvoGym simulation platform.

Task: {task_desc}

{transfer_context_block}
Voxel grid legend:
{voxel_legend}

Here is the parent design to mutate (fitness={parent_fitness:.3f}):
{parent_body}

Skill assignments for this proposal batch:
{skill_assignments_block}

{static_reference_block}
Previous mutation history on this exact parent:
{history_block}

Your task:
Propose exactly {n_designs} new mutations of this parent, one for each assigned slot above,
using a two-part process:

1. Direction from the assigned skill:
   Use the skill's L1 condition as the target structural archetype for that slot.
   If the skill has no L2 rules yet, still move the parent toward the L1 condition.

2. Tactics from L2 rules and exact-parent history:
   Use L2 positive rules as helpful sub-patterns when they fit this parent.
   Avoid L2 negative rules when relevant.
   Use exact-parent history to avoid repeats and avoid edits that already failed on this parent.

Each history entry gives you raw evidence only:
- the exact child_fitness achieved on this parent
- the voxel_diff from parent to child
- the full child_body after that mutation

Use this evidence directly to judge which edits seem promising, harmful, or ambiguous.

Hard constraints:
- You must produce new child bodies distinct from all history entries listed above.
- For each slot, use the specific assigned skill for that slot only.
- For each slot, also output `intended_leaf_id`: the L2 leaf you are trying to instantiate.
  IMPORTANT: this MUST be the leaf_id (e.g. "pos_0", "neg_1") shown in the skill's L2 rules block, NOT the claim string. Look for "leaf_id=..." in the rules listing.
  If the assigned skill has no leaves yet, output null.
- If an assigned skill is not a natural fit for this parent, propose the smallest edit that still moves in that skill direction without destroying the parent's core structure.
- Do not refuse to propose. An imperfect mutation is still useful learning material.

Generate exactly {n_designs} mutated variations of this parent as a JSON object with this schema:
{
  "designs": [
    {
      "slot_index": 0,
      "body": <{grid_size}x{grid_size} integer matrix>,
      "reasoning": "what you changed from the parent and why",
      "based_on_skill": "skill_id string or null",
      "intended_leaf_id": "leaf_id string or null"
    }
  ]
}

Requirements:
<BODY_REQUIREMENTS>
- Each design should modify {mutation_range} voxels from the parent -- keep what works, change what could improve
- L1 chooses the mutation direction; L2 rules and exact-parent history choose the concrete edits
- History can veto repeated or clearly harmful edits, but it should not replace the assigned L1 direction
- Do not repeat any exact child body already present in the history block
- Return exactly one design per slot_index listed above
- Every mutation must be structurally different from the parent and from the other mutations
"#;

pub const ATTRIBUTE_TEMPLATE: &str = r#"You are classifying robot designs by their main structural archetype.

Skill library (each skill is described by its L1 archetype plus top positive sub-patterns):
{skills_block}

Designs to classify:
{designs_block}

For each design, determine which skill it structurally matches.

Use L1 condition as the PRIMARY criterion: does the design exhibit the main
load-bearing arrangement described by L1? Use top_positive_leaves as supplementary
evidence to recognize concrete instances of successful sub-patterns within
that archetype.

If the design does not clearly match any skill's L1 archetype, return null.

Constraints:
- Use structural matching only -- do not consider fitness or task performance.
- A design may match at most one skill (return the best match).
- Prefer null over a weak match. Skills that don't fit will not gain useful evidence.
- L1 dominates over L2: if a design clearly matches one skill's L1 but somewhat
  resembles another skill's positive leaves, attribute by L1.

Return JSON:
{
  "assignments": [
    {"local_index": 0, "skill_id": "skill_id" or null, "reason": "short structural reason"}
  ]
}
"#;

pub const ADD_TEMPLATE: &str = r#"You are a robot design analyst. Your job is to add useful L1 structural skill identities for robot morphology search.

High-fitness designs (top 6 from this generation, body grids + fitness):
{high_designs}

Low-fitness designs (bottom 6 from this generation, body grids + fitness):
{low_designs}

Existing skills for this task (each with L1 condition + top 2 positive L2 leaves):
{existing_skills_block}

Look for at most ONE new L1 structural archetype in this generation.
Start from the high-fitness designs. If several share a simple main structure,
you may add it as a new skill. Use the low-fitness designs only as a light contrast
signal: it is enough if the structure is absent, broken, weaker, or less coherent there.
Be willing to add a new L1 when the high designs show a reusable structure that is not
an obvious duplicate of an existing L1 condition. Return no_add only when there is no
clear nameable structure in the high designs, or the best candidate is almost the same
as an existing L1 condition.

L1 should describe the robot's main connected load-bearing arrangement. Use simple
structure words such as frame, rail, column, bridge, arch, tripod, fork, wedge, tail,
crawler, shell, or beam. Avoid both performance goals and exact voxel-level details.
The Add step creates only the L1 identity; L2 and L3 must stay empty at birth.

Return JSON:
{
  "decision": {
    "action": "add" or "no_add",
    "inspired_obs_ids": [<int>, ...],
    "skill": {
      "skill_id": "short_name (max 3 words, snake_case, no version suffix)",
      "task_family": ["{task_name}"],
      "condition": "same text as l1.condition",
      "l1": {
        "structure": "one coarse structure word",
        "condition": "10-25 words describing one concrete structural archetype"
      },
      "l2": {
        "positive": [],
        "negative": [],
        "next_leaf_id_counter": 0
      },
      "l3": {
        "observations": [],
        "next_obs_id_counter": 0
      }
    } or null,
    "reasoning": {
      "supporting_high_labels": [<int>, ...],
      "contrast_signal": "short explanation of the high-vs-low structural difference",
      "nearest_existing_skill": "skill_id string or null",
      "duplicate_risk": "none" or "low" or "high",
      "why_add_or_no_add": "short explanation"
    }
  }
}

Rules:
- This is a lightweight discovery step, not a strict filter.
- Add when high-fitness designs reveal a simple reusable L1 structure and duplicate_risk is not high.
- Reject only generation-level summaries, performance goals, local patches, voxel-coordinate descriptions, and near-duplicate L1 conditions.
- skill_id must be max 3 words in snake_case, with no version suffix.
- If action is "add", inspired_obs_ids must list the observations that best exemplify this pattern; if no_add, set skill to null and inspired_obs_ids to [].
- For any added skill, l2.positive, l2.negative, and l3.observations MUST be empty lists.
- reasoning is audit-only. It will not be shown to later stages, so be explicit and honest.
- Candidates have gain > 0 (computed as child_fitness - parent_fitness). Only consider these for new L1 archetypes.
- When evaluating duplicate_risk, compare against both L1 conditions AND top_positive_leaves of existing skills.
  Two skills with similar archetype but different positive sub-patterns may still be distinct.
- inspired_obs_ids must list the obs_ids from the input that best exemplify this pattern (use the obs_id values shown).
{low_skill_hint}
"#;

pub const DIAGNOSE_TEMPLATE: &str = r#"You are diagnosing L2 leaves for a robot design skill.

Skill L1 condition: {l1_condition}

Existing L2 leaves (with current statistics):
{leaves_json}

Unassigned observations (need leaf decisions):
{unassigned_json}

Context observations (already assigned this generation; for distribution awareness only):
{context_json}

Generation statistics: gen_mean={gen_mean:.3f}, p25={gen_p25:.3f} (context only, not primary criterion).

{cold_start_note}

For each unassigned observation, decide its leaf assignment. Optionally propose new standalone leaves
that capture cross-cutting patterns visible across multiple obs.

Decision rules:
- Primary criterion: gain (= child_fitness - parent_fitness). gen_mean / p25 are weak context.
- Positive leaf creation (lenient): obs.gain > 0 AND reusable structural sub-pattern.
- Negative leaf creation (strict): obs.gain << 0 (significantly negative) AND obvious failure structure.
- Prefer "no_leaf" when there is no clear sub-pattern; the observation will be reconsidered in future generations
  (up to a hard cap of 3 attempts).
- standalone_new_leaves: only when >= 2 obs share the same not-yet-captured sub-pattern.
- description_update applies only to "match_existing" decisions.

Refinement granularity rules (apply to all claim/description text including standalone leaves):
- ALLOWED: relative regions ("lower-right corner", "upper half", "leftmost column"),
  shape language ("U-shape opening upward", "tapered top"),
  counts and proportions ("4 H_ACT", "30% SOFT"),
  structural relations ("anchor connects to lower rail").
- FORBIDDEN: exact voxel coordinates ("voxel at (5,4)"), numeric row/column indices
  ("row 0", "column 4"), full-body matrix templates.
- Prefer "approximately N" / "at least N" over rigid "exactly N".

Return JSON:
{
  "leaf_assignments": [
    {"obs_id": <int>, "decision": "match_existing", "leaf_id": "<id>",
      "description_update": {"mode": "overwrite" | "append" | null, "text": "..." or null}},
    {"obs_id": <int>, "decision": "new_leaf", "polarity": "positive" | "negative",
      "claim": "snake_case_1_to_4_words", "description": "structural sentence"},
    {"obs_id": <int>, "decision": "no_leaf"}
  ],
  "standalone_new_leaves": [
    {"polarity": "positive" | "negative", "claim": "...", "description": "...",
      "supporting_obs_ids": [<int>, <int>, ...]}
  ]
}
"#;

pub const MERGE_TEMPLATE: &str = r#"You are checking a robot design skill library for obvious duplicate L1 skill identities.

Skills in the library (L1 identity only):
{skills_full_content}

Return merge clusters only for obvious duplicate or near-duplicate L1 skill identities.
The main comparison target is L1 condition: merge skills only when they describe the
same main structural archetype in different words.

L1 structure is only a weak hint. Two skills may both use "frame", "rail", or "column"
and still be different if their L1 conditions describe different connected layouts.

Return JSON:
{
  "clusters": [
    {"group_label": "short_name (max 3 words)", "skill_ids": ["id1", "id2"], "reason": "why these are the same mechanism"}
  ]
}

Rules:
- group_label must be max 3 words, descriptive, snake_case
- Return only multi-skill clusters that should be merged; return [] if no obvious duplicates exist
- Do not create single-skill groups
- Do not merge skills just because they share the same performance goal, same task, or same broad structure word
- If there is any meaningful doubt, keep the skills separate
"#;

pub const TRANSFER_SAME_GRID: &str = r#"=== Transfer Context ===
The skill library below comes from a prior run on the same task
({current_env}, {source_grid} grid, source experiment "{source_exp}").
Treat the L1/L2 rules as validated patterns from previous experimentation.
Note: avg_gain values reflect the prior run's parent fitness distribution;
treat them as relative ranking signals, not absolute predictions.
"#;

pub const TRANSFER_CROSS_GRID: &str = r#"=== Transfer Context ===
Current task: {current_env} ({current_grid} voxel grid).
The skill library below comes from a prior run on a related task with a
{source_grid} voxel grid (source experiment "{source_exp}").

The skills' L1/L2 rules describe abstract structural principles (e.g.
"vertical rails joined by horizontal crossbeam") that should generalize
across grid sizes. The current {current_grid} grid affords richer / more
redundant structures than {source_grid}.
"#;

pub const ELITE_ADDENDUM_SAME_GRID: &str = r#"Reference designs (top-fitness exemplars from the source run) are also
provided below. Use them as concrete examples of what the L1/L2 rules
look like in practice.
"#;

pub const ELITE_ADDENDUM_CROSS_GRID: &str = r#"Reference designs (top-fitness exemplars) are also provided below as
concrete {source_grid} examples -- extract structural patterns from them,
do NOT copy voxel-level arrangements directly.
"#;

/// Shown to Add while the task's library is still nearly empty.
pub const LOW_SKILL_HINT: &str = "- The library holds fewer than two skills for this task, so a clear recurring structure in the high designs is worth adding now.";

/// Shown to Diagnose for a skill that has no leaves yet.
pub const COLD_START_NOTE: &str = "Cold start: this skill has no L2 leaves yet. Create leaves only for clear, reusable sub-patterns; no_leaf is fine otherwise.";

/// Which template a request was rendered from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    ColdStart,
    Propose,
    Attribute,
    Add,
    Diagnose,
    Merge,
}

impl TemplateId {
    pub fn text(self) -> &'static str {
        match self {
            TemplateId::ColdStart => COLD_START_TEMPLATE,
            TemplateId::Propose => PROPOSE_TEMPLATE,
            TemplateId::Attribute => ATTRIBUTE_TEMPLATE,
            TemplateId::Add => ADD_TEMPLATE,
            TemplateId::Diagnose => DIAGNOSE_TEMPLATE,
            TemplateId::Merge => MERGE_TEMPLATE,
        }
    }

    pub fn op_kind(self) -> OpKind {
        match self {
            TemplateId::ColdStart | TemplateId::Propose => OpKind::Propose,
            TemplateId::Attribute => OpKind::Attribute,
            TemplateId::Add => OpKind::Add,
            TemplateId::Diagnose => OpKind::Diagnose,
            TemplateId::Merge => OpKind::Merge,
        }
    }

    pub fn schema_id(self) -> &'static str {
        match self {
            TemplateId::ColdStart => "cold_start.v1",
            TemplateId::Propose => "propose.v1",
            TemplateId::Attribute => "attribute.v1",
            TemplateId::Add => "add.v1",
            TemplateId::Diagnose => "diagnose.v1",
            TemplateId::Merge => "merge.v1",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SubValue {
    Text(String),
    Number(f64),
}

/// Placeholder values for one render.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Substitutions(pub BTreeMap<String, SubValue>);

impl Substitutions {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn text(mut self, key: &str, value: impl Into<String>) -> Self {
        self.0.insert(key.to_string(), SubValue::Text(value.into()));
        self
    }

    pub fn number(mut self, key: &str, value: f64) -> Self {
        self.0.insert(key.to_string(), SubValue::Number(value));
        self
    }

    fn format(&self, key: &str, spec: Option<&str>) -> Option<String> {
        let v = self.0.get(key)?;
        Some(match (v, spec) {
            (SubValue::Text(t), _) => t.clone(),
            (SubValue::Number(x), Some(spec)) => match spec.strip_prefix('.').and_then(|s| s.strip_suffix('f')) {
                Some(digits) => format!("{:.*}", digits.parse().unwrap_or(3), x),
                None => x.to_string(),
            },
            (SubValue::Number(x), None) => x.to_string(),
        })
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_][a-z0-9_]*)(?::([^{}\s]+))?\}").unwrap())
}

/// Names of every placeholder a template requires, in order of appearance.
pub fn placeholders(template: &str) -> Vec<String> {
    let expanded = template.replace(BODY_REQUIREMENTS_MARKER, BODY_REQUIREMENTS);
    let mut out: Vec<String> = Vec::new();
    for c in placeholder_re().captures_iter(&expanded) {
        let name = c[1].to_string();
        if !out.contains(&name) {
            out.push(name);
        }
    }
    out
}

/// Expands `<BODY_REQUIREMENTS>` and substitutes every placeholder.
pub fn render_text(template: &str, subs: &Substitutions) -> Result<String, LlmError> {
    let expanded = template.replace(BODY_REQUIREMENTS_MARKER, BODY_REQUIREMENTS);
    if let Some(missing) = placeholders(&expanded).into_iter().find(|p| !subs.0.contains_key(p)) {
        return Err(LlmError::MissingPlaceholder(missing));
    }
    Ok(placeholder_re()
        .replace_all(&expanded, |c: &Captures| subs.format(&c[1], c.get(2).map(|m| m.as_str())).unwrap())
        .into_owned())
}

pub fn render_prompt(template: TemplateId, subs: &Substitutions, generation: u64) -> Result<PromptRequest, LlmError> {
    render_with_preamble(template, subs, generation, "")
}

/// Like [`render_prompt`] but with `preamble` placed before the template
/// text. Transfer runs use this for the cold-start prompt, which has no
/// transfer placeholder of its own.
pub fn render_with_preamble(
    template: TemplateId,
    subs: &Substitutions,
    generation: u64,
    preamble: &str,
) -> Result<PromptRequest, LlmError> {
    let body = render_text(template.text(), subs)?;
    Ok(PromptRequest {
        op_kind: template.op_kind(),
        template,
        rendered_text: format!("{preamble}{body}"),
        expected_schema: template.schema_id().to_string(),
        generation,
        ordinal: 0,
        metadata: subs.clone(),
        context: serde_json::Value::Null,
    })
}

/// Where an imported library came from, for the transfer context block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferContext {
    pub current_env: String,
    pub current_grid: usize,
    pub source_grid: usize,
    pub source_exp: String,
    pub with_reference: bool,
}

fn grid_label(n: usize) -> String {
    format!("{n}x{n}")
}

impl TransferContext {
    pub fn same_grid(&self) -> bool {
        self.current_grid == self.source_grid
    }

    /// Transfer block followed, in with-reference mode, by the elite addendum.
    pub fn block(&self) -> String {
        let subs = Substitutions::new()
            .text("current_env", self.current_env.clone())
            .text("current_grid", grid_label(self.current_grid))
            .text("source_grid", grid_label(self.source_grid))
            .text("source_exp", self.source_exp.clone());
        let (head, addendum) = if self.same_grid() {
            (TRANSFER_SAME_GRID, ELITE_ADDENDUM_SAME_GRID)
        } else {
            (TRANSFER_CROSS_GRID, ELITE_ADDENDUM_CROSS_GRID)
        };
        let mut out = render_text(head, &subs).expect("transfer block placeholders are fixed");
        if self.with_reference {
            out.push('\n');
            out.push_str(&render_text(addendum, &subs).expect("addendum placeholders are fixed"));
        }
        out
    }
}
