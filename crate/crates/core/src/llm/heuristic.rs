//! Offline backend that answers every prompt kind from the request's
//! structured context.
//!
//! * Propose edits the parent with a small set of tactics. Each tactic is
//!   tied to keywords; L1 and positive L2 text raise a tactic's odds, and
//!   negative L2 text lowers them.
//! * Attribute picks the skill whose L1 shares the most content words with
//!   the motifs detected in a design.
//! * Add names the motif most common among the high designs that no skill
//!   covers yet.
//! * Diagnose labels each observation by the kind of edit that produced it.
//! * Merge clusters skills with the same structure word and near-identical
//!   condition wording.
//!
//! All randomness is seeded from the prompt text, so equal prompts always
//! get equal answers.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use crate::rng::text_seed;
use crate::voxel::{diff, is_valid, upsample_tiling, Body, VoxelType};

use super::blocks::{
    AddContext, AttributeContext, ColdStartContext, DiagnoseContext, MergeContext, ProposeContext, SkillView,
};
use super::{BackendError, ProposalBackend, PromptRequest, TemplateId};

#[derive(Debug, Clone, Default)]
pub struct HeuristicBackend;

impl HeuristicBackend {
    pub fn new() -> Self {
        HeuristicBackend
    }
}

impl ProposalBackend for HeuristicBackend {
    fn name(&self) -> String {
        "heuristic".into()
    }

    fn complete(&self, request: &PromptRequest) -> Result<String, BackendError> {
        let mut rng = ChaCha8Rng::seed_from_u64(text_seed(&request.rendered_text));
        let out = match request.template {
            TemplateId::ColdStart => cold_start(&context(request)?, &mut rng),
            TemplateId::Propose => propose(&context(request)?, &mut rng),
            TemplateId::Attribute => attribute(&context(request)?),
            TemplateId::Add => add(&context(request)?),
            TemplateId::Diagnose => diagnose(&context(request)?),
            TemplateId::Merge => merge(&context(request)?),
        };
        Ok(serde_json::to_string_pretty(&out).expect("response serializes"))
    }

    fn max_retries(&self) -> usize {
        0
    }
}

fn context<T: DeserializeOwned>(request: &PromptRequest) -> Result<T, BackendError> {
    serde_json::from_value(request.context.clone())
        .map_err(|e| BackendError::Unavailable(format!("heuristic backend needs structured context: {e}")))
}

const STOPWORDS: &[&str] = &[
    "the", "and", "with", "that", "for", "from", "into", "each", "every", "one", "least", "its", "while", "most",
    "both", "this", "are", "only", "has", "have", "above", "below", "beneath", "toward", "on", "at", "of", "a", "to",
    "by", "or", "so", "is", "in", "it", "as", "an", "be",
];

/// Lowercase alphabetic words of three or more letters, minus stopwords.
pub(crate) fn content_words(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_ascii_alphabetic())
        .map(str::to_ascii_lowercase)
        .filter(|w| w.len() >= 3 && !STOPWORDS.contains(&w.as_str()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Tactic {
    SideSupport,
    GroundContact,
    SoftPad,
    AddActuator,
    ExtendFrame,
    Trim,
}

const TACTICS: [Tactic; 6] =
    [Tactic::SideSupport, Tactic::GroundContact, Tactic::SoftPad, Tactic::AddActuator, Tactic::ExtendFrame, Tactic::Trim];

impl Tactic {
    fn name(self) -> &'static str {
        match self {
            Tactic::SideSupport => "rigid side support",
            Tactic::GroundContact => "wider ground contact",
            Tactic::SoftPad => "soft contact pad",
            Tactic::AddActuator => "extra actuator",
            Tactic::ExtendFrame => "frame extension",
            Tactic::Trim => "trim passive material",
        }
    }

    fn prior(self) -> f64 {
        match self {
            Tactic::SideSupport => 1.0,
            Tactic::GroundContact => 1.0,
            Tactic::SoftPad => 0.5,
            Tactic::AddActuator => 0.7,
            Tactic::ExtendFrame => 0.8,
            Tactic::Trim => 0.3,
        }
    }

    /// Word stems that point at this tactic.
    fn stems(self) -> &'static [&'static str] {
        match self {
            Tactic::SideSupport => &["brac", "support", "flank", "beside", "stiff", "wrap"],
            Tactic::GroundContact => &["bottom", "base", "ground", "rail", "foot", "feet", "lower", "wide"],
            Tactic::SoftPad => &["soft", "pad", "compliant", "cushion"],
            Tactic::AddActuator => &["drive", "muscle", "stack", "chain"],
            Tactic::ExtendFrame => &["frame", "arch", "span", "tall", "leg", "perimeter", "portal"],
            Tactic::Trim => &["trim", "lighten", "slim", "sparse"],
        }
    }

    fn hits(self, words: &BTreeSet<String>) -> usize {
        words.iter().filter(|w| self.stems().iter().any(|s| w.starts_with(s))).count()
    }

    /// Tactic a piece of rule text points at most strongly, if any.
    fn for_text(text: &str) -> Option<Tactic> {
        let words = content_words(text);
        let mut best = None;
        let mut best_hits = 0;
        for t in TACTICS {
            let h = t.hits(&words);
            if h > best_hits {
                best = Some(t);
                best_hits = h;
            }
        }
        best
    }

    /// Every single-voxel edit this tactic could make on `body`.
    fn candidates(self, body: &Body, vertical_bias: Option<bool>, rng: &mut ChaCha8Rng) -> Vec<(usize, usize, i64)> {
        let n = body.size();
        let bottom = n - 1;
        let code = |r: usize, c: usize| body.get(r, c);
        let has_neighbor = |r: usize, c: usize, pred: &dyn Fn(i64) -> bool| body.neighbors(r, c).any(|(a, b)| pred(code(a, b)));
        let is_act = |v: i64| v == 3 || v == 4;
        let filled = |v: i64| v != 0;
        let mut out = Vec::new();
        for r in 0..n {
            for c in 0..n {
                let v = code(r, c);
                match self {
                    Tactic::SideSupport => {
                        if (v == 0 || v == 2) && has_neighbor(r, c, &is_act) {
                            out.push((r, c, 1));
                        }
                    }
                    Tactic::GroundContact => {
                        if v == 0 && r == bottom && has_neighbor(r, c, &filled) {
                            out.push((r, c, 1));
                        }
                    }
                    Tactic::SoftPad => {
                        if r == bottom && ((v == 0 && has_neighbor(r, c, &filled)) || (v == 1 && !has_neighbor(r, c, &is_act))) {
                            out.push((r, c, 2));
                        }
                    }
                    Tactic::AddActuator => {
                        let share = body.actuators() as f64 / body.filled().max(1) as f64;
                        if share < 0.45 && (v == 0 || v == 2) && has_neighbor(r, c, &|x| x == 1) {
                            let vertical = vertical_bias.unwrap_or_else(|| rng.random_bool(0.5));
                            out.push((r, c, if vertical { 4 } else { 3 }));
                        }
                    }
                    Tactic::ExtendFrame => {
                        if v == 0 && has_neighbor(r, c, &|x| x == 1) {
                            out.push((r, c, 1));
                        }
                    }
                    Tactic::Trim => {
                        if v == 2 && r != bottom {
                            out.push((r, c, 0));
                        }
                    }
                }
            }
        }
        if self == Tactic::GroundContact && out.is_empty() {
            // Bottom edge already covered: grow material downward instead.
            for r in 1..n {
                for c in 0..n {
                    if code(r, c) == 0 && code(r - 1, c) != 0 {
                        out.push((r, c, 1));
                    }
                }
            }
        }
        out
    }

    /// Applies one random valid edit; `None` when no candidate keeps the
    /// body valid.
    fn apply(self, body: &Body, vertical_bias: Option<bool>, rng: &mut ChaCha8Rng) -> Option<Body> {
        let mut cands = self.candidates(body, vertical_bias, rng);
        cands.shuffle(rng);
        cands.into_iter().find_map(|(r, c, v)| {
            let mut b = body.clone();
            b.set(r, c, v);
            is_valid(&b).then_some(b)
        })
    }
}

/// Tactic odds for one slot given its skill's L1 and L2 text.
fn tactic_scores(skill: Option<&SkillView>) -> BTreeMap<Tactic, f64> {
    let mut scores: BTreeMap<Tactic, f64> = TACTICS.iter().map(|t| (*t, t.prior())).collect();
    let Some(s) = skill else { return scores };
    let l1 = content_words(&format!("{} {}", s.structure, s.condition));
    for t in TACTICS {
        *scores.get_mut(&t).unwrap() += 2.0 * t.hits(&l1) as f64;
    }
    for leaf in &s.positive {
        if let Some(t) = Tactic::for_text(&format!("{} {}", leaf.claim, leaf.description)) {
            *scores.get_mut(&t).unwrap() += 1.0 + leaf.effective_gain().clamp(0.0, 2.0);
        }
    }
    for leaf in &s.negative {
        if let Some(t) = Tactic::for_text(&format!("{} {}", leaf.claim, leaf.description)) {
            *scores.get_mut(&t).unwrap() *= 0.3;
        }
    }
    scores
}

fn sample_tactic(scores: &BTreeMap<Tactic, f64>, rng: &mut ChaCha8Rng) -> Tactic {
    let total: f64 = scores.values().sum();
    let mut x = rng.random::<f64>() * total;
    for (t, w) in scores {
        if x < *w {
            return *t;
        }
        x -= w;
    }
    *scores.keys().last().unwrap()
}

/// Positive leaf to instantiate, favouring leaves with higher gains.
fn pick_leaf<'a>(skill: &'a SkillView, rng: &mut ChaCha8Rng) -> Option<(&'a str, Tactic)> {
    let options: Vec<(&str, Tactic, f64)> = skill
        .positive
        .iter()
        .filter(|l| !(l.support_count >= 3 && l.avg_gain <= 0.0))
        .filter_map(|l| {
            Tactic::for_text(&format!("{} {}", l.claim, l.description))
                .map(|t| (l.leaf_id.as_str(), t, 0.1 + l.effective_gain().max(0.0)))
        })
        .collect();
    if options.is_empty() {
        return None;
    }
    let total: f64 = options.iter().map(|o| o.2).sum();
    let mut x = rng.random::<f64>() * total;
    for (id, t, w) in &options {
        if x < *w {
            return Some((id, *t));
        }
        x -= w;
    }
    options.last().map(|o| (o.0, o.1))
}

fn orientation(skill: Option<&SkillView>) -> Option<bool> {
    let text = skill.map(|s| s.condition.to_ascii_lowercase()).unwrap_or_default();
    if text.contains("vertical") || text.contains("upright") || text.contains("stacked") {
        Some(true)
    } else if text.contains("horizontal") || text.contains("chained") {
        Some(false)
    } else {
        None
    }
}

fn propose(ctx: &ProposeContext, rng: &mut ChaCha8Rng) -> Value {
    let n = ctx.parent.size();
    let (lo, hi) = ctx.mutation_range;
    let cap = hi.min(lo.max(3).max(n / 2)).max(lo);
    let mut seen: HashSet<Body> = ctx.history.iter().cloned().collect();
    seen.insert(ctx.parent.clone());
    let mut designs = Vec::new();
    for slot in &ctx.slots {
        let skill = slot.skill.as_ref();
        let scores = tactic_scores(skill);
        let leaf = skill.and_then(|s| pick_leaf(s, rng));
        let vertical = orientation(skill);
        let mut chosen = None;
        for _ in 0..20 {
            let k = rng.random_range(lo..=cap);
            let mut body = ctx.parent.clone();
            let mut used = Vec::new();
            for i in 0..k {
                let t = match (i, leaf) {
                    (0, Some((_, t))) => t,
                    _ => sample_tactic(&scores, rng),
                };
                let next = t.apply(&body, vertical, rng).or_else(|| {
                    TACTICS.iter().find_map(|alt| alt.apply(&body, vertical, rng).map(|b| {
                        used.push(*alt);
                        b
                    }))
                });
                if let Some(b) = next {
                    if used.len() <= i {
                        used.push(t);
                    }
                    body = b;
                }
            }
            if !seen.contains(&body) {
                chosen = Some((body, used));
                break;
            }
        }
        let (body, used) = chosen.unwrap_or_else(|| (ctx.parent.clone(), Vec::new()));
        seen.insert(body.clone());
        let names: Vec<&str> = used.iter().map(|t| t.name()).collect();
        designs.push(json!({
            "slot_index": slot.slot_index,
            "body": body,
            "reasoning": format!(
                "applied {} toward {}",
                if names.is_empty() { "no edit".to_string() } else { names.join(", ") },
                skill.map(|s| s.skill_id.as_str()).unwrap_or("free exploration")
            ),
            "based_on_skill": skill.map(|s| s.skill_id.clone()),
            "intended_leaf_id": leaf.map(|(id, _)| id.to_string()),
        }));
    }
    json!({ "designs": designs })
}

/// Bottom-aligned block body: an actuated upper section over legs or a rail.
fn procedural_body(n: usize, rng: &mut ChaCha8Rng) -> Body {
    loop {
        let mut b = Body::empty(n);
        let h = rng.random_range(2..=(n / 2 + 1).max(2).min(n));
        let w = rng.random_range(((n + 1) / 2).max(2)..=n);
        let c0 = rng.random_range(0..=n - w);
        let act_p = rng.random_range(0.2..0.5);
        let vertical_p = rng.random_range(0.0..1.0);
        for r in n - h..n - 1 {
            for c in c0..c0 + w {
                let x: f64 = rng.random();
                let v = if x < act_p {
                    if rng.random_bool(vertical_p) { 4 } else { 3 }
                } else if x < act_p + 0.12 {
                    2
                } else {
                    1
                };
                b.set(r, c, v);
            }
        }
        let legs = rng.random_range(0..3);
        for c in c0..c0 + w {
            let v = match legs {
                0 => 1,
                1 if c == c0 || c == c0 + w - 1 => 1,
                2 if (c - c0) % 2 == 0 => if rng.random_bool(0.3) { 2 } else { 1 },
                _ => 0,
            };
            b.set(n - 1, c, v);
        }
        if rng.random_bool(0.5) {
            // Notch the top edge for shape variety.
            let c = rng.random_range(c0..c0 + w);
            b.set(n - h, c, 0);
        }
        if is_valid(&b) {
            return b;
        }
    }
}

fn cold_start(ctx: &ColdStartContext, rng: &mut ChaCha8Rng) -> Value {
    let n = ctx.grid_size;
    let mut seen = HashSet::new();
    let mut designs = Vec::new();
    for r in &ctx.references {
        if designs.len() >= ctx.n_designs {
            break;
        }
        let base = if r.size() == n {
            r.clone()
        } else if n % r.size() == 0 {
            upsample_tiling(r, n / r.size())
        } else {
            continue;
        };
        for _ in 0..3 {
            let t = TACTICS[rng.random_range(0..TACTICS.len())];
            if let Some(b) = t.apply(&base, None, rng) {
                if seen.insert(b.clone()) {
                    designs.push(json!({"body": b, "reasoning": format!("reference pattern with {}", t.name())}));
                    break;
                }
            }
        }
    }
    let mut guard = 0;
    while designs.len() < ctx.n_designs && guard < 100 * ctx.n_designs.max(1) {
        guard += 1;
        let b = procedural_body(n, rng);
        if seen.insert(b.clone()) {
            designs.push(json!({"body": b, "reasoning": "actuated block over legs or a ground rail"}));
        }
    }
    json!({ "designs": designs })
}

struct Motif {
    skill_id: &'static str,
    structure: &'static str,
    condition: &'static str,
    detect: fn(&Body) -> bool,
}

fn actuator_cells(b: &Body) -> Vec<(usize, usize)> {
    let n = b.size();
    (0..n * n).map(|i| (i / n, i % n)).filter(|&(r, c)| b.voxel(r, c).is_some_and(VoxelType::is_actuator)).collect()
}

fn braced(b: &Body) -> bool {
    let acts = actuator_cells(b);
    let braced = acts.iter().filter(|&&(r, c)| b.neighbors(r, c).any(|(a, d)| b.get(a, d) == 1)).count();
    !acts.is_empty() && b.count(VoxelType::Rigid) >= 2 && braced * 5 >= acts.len() * 3
}

fn rail(b: &Body) -> bool {
    let n = b.size();
    (0..n).filter(|&c| b.get(n - 1, c) != 0).count() * 5 >= n * 4
}

fn pads(b: &Body) -> bool {
    let n = b.size();
    (0..n).filter(|&c| b.get(n - 1, c) == 2).count() >= 2
}

fn column(b: &Body) -> bool {
    actuator_cells(b).iter().any(|&(r, c)| r + 1 < b.size() && b.voxel(r + 1, c).is_some_and(VoxelType::is_actuator))
}

fn beam(b: &Body) -> bool {
    actuator_cells(b).iter().any(|&(r, c)| c + 1 < b.size() && b.voxel(r, c + 1).is_some_and(VoxelType::is_actuator))
}

fn arch(b: &Body) -> bool {
    let n = b.size();
    let need = (n * 3).div_ceil(5);
    let mut seen = vec![false; n * n];
    for start in 0..n * n {
        if seen[start] || b.cells()[start] != 1 {
            continue;
        }
        let (mut r0, mut r1, mut c0, mut c1) = (n, 0, n, 0);
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let (r, c) = (i / n, i % n);
            r0 = r0.min(r);
            r1 = r1.max(r);
            c0 = c0.min(c);
            c1 = c1.max(c);
            for (a, d) in b.neighbors(r, c) {
                let j = a * n + d;
                if !seen[j] && b.cells()[j] == 1 {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if r1 - r0 + 1 >= need && c1 - c0 + 1 >= need {
            return true;
        }
    }
    false
}

const MOTIFS: &[Motif] = &[
    Motif {
        skill_id: "braced_actuator_frame",
        structure: "frame",
        condition: "rigid frame wrapped around the actuators so every actuator pushes against stiff rigid support on at least one side",
        detect: braced,
    },
    Motif {
        skill_id: "grounded_base_rail",
        structure: "rail",
        condition: "continuous rail of material along the bottom edge giving a wide base and ground contact beneath the actuated body",
        detect: rail,
    },
    Motif {
        skill_id: "soft_contact_pad",
        structure: "pad",
        condition: "soft compliant pads along the bottom edge touching the ground while stiff material above carries the actuators",
        detect: pads,
    },
    Motif {
        skill_id: "stacked_drive_column",
        structure: "column",
        condition: "stacked actuators forming an upright drive column that is braced by stiff material on both flanks",
        detect: column,
    },
    Motif {
        skill_id: "chained_drive_beam",
        structure: "beam",
        condition: "actuators chained side by side into a horizontal drive beam spanning the body with stiff material above or below",
        detect: beam,
    },
    Motif {
        skill_id: "tall_rigid_arch",
        structure: "arch",
        condition: "rigid arch spanning most of the body width and height with legs reaching down toward the ground",
        detect: arch,
    },
];

fn design_words(b: &Body) -> BTreeSet<String> {
    let mut words = BTreeSet::new();
    for m in MOTIFS.iter().filter(|m| (m.detect)(b)) {
        words.insert(m.structure.to_string());
        words.extend(content_words(m.condition));
    }
    words
}

fn skill_words(s: &SkillView) -> BTreeSet<String> {
    content_words(&format!("{} {}", s.structure, s.condition))
}

const ATTRIBUTE_MIN_OVERLAP: usize = 3;

fn attribute(ctx: &AttributeContext) -> Value {
    let mut skills: Vec<&SkillView> = ctx.skills.iter().collect();
    skills.sort_by(|a, b| a.skill_id.cmp(&b.skill_id));
    let assignments: Vec<Value> = ctx
        .designs
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let uncovered = MOTIFS
                .iter()
                .find(|m| (m.detect)(d) && !skills.iter().any(|s| s.structure == m.structure));
            if let Some(m) = uncovered {
                return json!({"local_index": i, "skill_id": null, "reason": format!("shows an uncovered {}", m.structure)});
            }
            let words = design_words(d);
            let mut best: Option<(&SkillView, usize)> = None;
            for s in &skills {
                let overlap = skill_words(s).intersection(&words).count();
                if overlap >= ATTRIBUTE_MIN_OVERLAP && best.is_none_or(|(_, o)| overlap > o) {
                    best = Some((s, overlap));
                }
            }
            match best {
                Some((s, o)) => json!({"local_index": i, "skill_id": s.skill_id, "reason": format!("{o} shared structure words")}),
                None => json!({"local_index": i, "skill_id": null, "reason": "no clear archetype match"}),
            }
        })
        .collect();
    json!({ "assignments": assignments })
}

fn add(ctx: &AddContext) -> Value {
    let taken_structures: HashSet<&str> = ctx.existing.iter().map(|s| s.structure.as_str()).collect();
    let taken_ids: HashSet<&str> = ctx.existing.iter().map(|s| s.skill_id.as_str()).collect();
    let mut best: Option<(&Motif, f64, Vec<u64>)> = None;
    for m in MOTIFS {
        if taken_structures.contains(m.structure) || taken_ids.contains(m.skill_id) {
            continue;
        }
        let inspired: Vec<u64> = ctx.high.iter().filter(|d| (m.detect)(&d.body)).map(|d| d.obs_id).collect();
        if inspired.len() < 2 {
            continue;
        }
        let low = ctx.low.iter().filter(|d| (m.detect)(&d.body)).count();
        let score = inspired.len() as f64 - 0.5 * low as f64;
        if best.as_ref().is_none_or(|(_, s, _)| score > *s) {
            best = Some((m, score, inspired));
        }
    }
    match best {
        None => json!({"decision": {
            "action": "no_add",
            "inspired_obs_ids": [],
            "skill": null,
            "reasoning": {"why_add_or_no_add": "no uncovered motif recurs among the high designs", "duplicate_risk": "high"}
        }}),
        Some((m, _, inspired)) => json!({"decision": {
            "action": "add",
            "inspired_obs_ids": inspired,
            "skill": {
                "skill_id": m.skill_id,
                "task_family": [ctx.task],
                "condition": m.condition,
                "l1": {"structure": m.structure, "condition": m.condition},
                "l2": {"positive": [], "negative": [], "next_leaf_id_counter": 0},
                "l3": {"observations": [], "next_obs_id_counter": 0}
            },
            "reasoning": {
                "supporting_high_labels": inspired,
                "contrast_signal": format!("{} recurs among high designs", m.structure),
                "nearest_existing_skill": null,
                "duplicate_risk": "none",
                "why_add_or_no_add": "recurring uncovered structure"
            }
        }}),
    }
}

/// Kind of edit between a parent and child, for Diagnose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EditKind {
    SideSupport,
    SoftPad,
    GroundContact,
    ExtraActuator,
    FrameExtension,
    Trimmed,
    Swap,
}

impl EditKind {
    /// (positive claim, positive description, negative claim, negative description)
    fn texts(self) -> (&'static str, &'static str, &'static str, &'static str) {
        match self {
            EditKind::SideSupport => (
                "rigid_side_brace",
                "rigid voxels placed beside actuators so each actuator pushes against a stiff flank",
                "overbraced_actuators",
                "extra rigid bracing beside actuators that added stiff mass without helping",
            ),
            EditKind::GroundContact => (
                "wide_ground_base",
                "material extended along the bottom edge to widen the base and ground contact",
                "heavy_lower_base",
                "extra material along the bottom edge that made the lower base drag on the ground",
            ),
            EditKind::SoftPad => (
                "soft_contact_pad",
                "soft compliant pad voxels on the bottom edge touching the ground",
                "slipping_soft_pad",
                "soft pad voxels on the bottom edge that made contact too compliant",
            ),
            EditKind::ExtraActuator => (
                "extra_drive_muscle",
                "an additional drive muscle inserted next to rigid material",
                "crowded_drive_muscles",
                "additional drive muscle voxels that crowded the body",
            ),
            EditKind::FrameExtension => (
                "extended_rigid_frame",
                "rigid frame extended to span a taller or wider perimeter",
                "overgrown_frame",
                "rigid frame extended into a larger span that only added dead weight",
            ),
            EditKind::Trimmed => (
                "trimmed_dead_mass",
                "passive material trimmed away to lighten and slim the body",
                "over_trimmed_body",
                "material removed until the body became too slim and sparse",
            ),
            EditKind::Swap => (
                "material_swap",
                "passive voxels swapped to a different material type",
                "harmful_material_swap",
                "passive voxels swapped to a material type that weakened the body",
            ),
        }
    }
}

fn classify_edit(parent: &Body, child: &Body) -> EditKind {
    let Ok(d) = diff(parent, child) else { return EditKind::Swap };
    let n = child.size();
    let mut counts: BTreeMap<EditKind, usize> = BTreeMap::new();
    for e in &d.edits {
        let near_act = child.neighbors(e.row, e.col).any(|(r, c)| child.voxel(r, c).is_some_and(VoxelType::is_actuator));
        let kind = match (e.old_code, e.new_code) {
            (_, 3) | (_, 4) => EditKind::ExtraActuator,
            (_, 0) => EditKind::Trimmed,
            (_, 2) if e.row == n - 1 => EditKind::SoftPad,
            (_, 1) if near_act => EditKind::SideSupport,
            (0, 1) if e.row == n - 1 => EditKind::GroundContact,
            (0, 1) => EditKind::FrameExtension,
            _ => EditKind::Swap,
        };
        *counts.entry(kind).or_default() += 1;
    }
    counts.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map(|(k, _)| k).unwrap_or(EditKind::Swap)
}

/// Gains below this count as clearly harmful for negative-leaf creation.
const NEGATIVE_GAIN_CUTOFF: f64 = -0.5;

fn diagnose(ctx: &DiagnoseContext) -> Value {
    let existing: BTreeMap<&str, &str> = ctx
        .skill
        .positive
        .iter()
        .chain(&ctx.skill.negative)
        .map(|l| (l.claim.as_str(), l.leaf_id.as_str()))
        .collect();
    let mut assignments = Vec::new();
    let mut fresh: BTreeMap<(&str, &str, &str), Vec<u64>> = BTreeMap::new();
    for o in &ctx.unassigned {
        let (pc, pd, nc, nd) = classify_edit(&o.parent_body, &o.child_body).texts();
        let (polarity, claim, description) = if o.gain > 0.0 {
            ("positive", pc, pd)
        } else if o.gain < NEGATIVE_GAIN_CUTOFF {
            ("negative", nc, nd)
        } else {
            assignments.push(json!({"obs_id": o.obs_id, "decision": "no_leaf"}));
            continue;
        };
        if let Some(leaf_id) = existing.get(claim) {
            assignments.push(json!({
                "obs_id": o.obs_id, "decision": "match_existing", "leaf_id": leaf_id,
                "description_update": {"mode": null, "text": null}
            }));
        } else {
            fresh.entry((polarity, claim, description)).or_default().push(o.obs_id);
        }
    }
    let mut standalone = Vec::new();
    for ((polarity, claim, description), ids) in fresh {
        if ids.len() >= 2 {
            standalone.push(json!({"polarity": polarity, "claim": claim, "description": description, "supporting_obs_ids": ids}));
        } else {
            assignments.push(json!({
                "obs_id": ids[0], "decision": "new_leaf", "polarity": polarity, "claim": claim, "description": description
            }));
        }
    }
    json!({ "leaf_assignments": assignments, "standalone_new_leaves": standalone })
}

const MERGE_MIN_JACCARD: f64 = 0.6;

fn merge(ctx: &MergeContext) -> Value {
    let mut skills: Vec<&SkillView> = ctx.skills.iter().collect();
    skills.sort_by(|a, b| a.skill_id.cmp(&b.skill_id));
    let mut group: Vec<usize> = (0..skills.len()).collect();
    fn root(g: &mut Vec<usize>, i: usize) -> usize {
        let mut i = i;
        while g[i] != i {
            g[i] = g[g[i]];
            i = g[i];
        }
        i
    }
    for i in 0..skills.len() {
        for j in i + 1..skills.len() {
            if skills[i].structure != skills[j].structure {
                continue;
            }
            let (a, b) = (skill_words(skills[i]), skill_words(skills[j]));
            let jaccard = a.intersection(&b).count() as f64 / a.union(&b).count().max(1) as f64;
            if jaccard >= MERGE_MIN_JACCARD {
                let (ri, rj) = (root(&mut group, i), root(&mut group, j));
                group[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    let mut clusters: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for i in 0..skills.len() {
        let r = root(&mut group, i);
        clusters.entry(r).or_default().push(&skills[i].skill_id);
    }
    let out: Vec<Value> = clusters
        .into_values()
        .filter(|ids| ids.len() >= 2)
        .map(|ids| json!({"group_label": ids[0], "skill_ids": ids, "reason": "same structure word and near-identical condition"}))
        .collect();
    json!({ "clusters": out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::blocks::{DesignView, DiagnoseObs, LeafView, SlotView};
    use crate::llm::{parse, render_prompt, Substitutions};
    use crate::skill::Polarity;

    fn view(id: &str, structure: &str, condition: &str) -> SkillView {
        SkillView {
            skill_id: id.into(),
            structure: structure.into(),
            condition: condition.into(),
            weight: 0.5,
            positive: vec![],
            negative: vec![],
        }
    }

    fn request(template: TemplateId, ctx: &impl serde::Serialize) -> PromptRequest {
        // Only the context matters here; any rendered text seeds the rng.
        let subs = Substitutions::new().text("skills_full_content", "-");
        let mut r = render_prompt(TemplateId::Merge, &subs, 0).unwrap().with_context(ctx);
        r.template = template;
        r
    }

    fn rows(r: &[&[i64]]) -> Body {
        Body::from_rows(r.iter().map(|x| x.to_vec()).collect()).unwrap()
    }

    #[test]
    fn attribute_is_keyword_overlap_argmax() {
        // Hand check: the design below has a full bottom rail and no
        // braced actuator (its only actuator touches soft voxels), so its
        // words are the rail motif's. `base_rail` shares rail, continuous,
        // bottom, edge, wide, base, ground, contact; `soft_shell` shares
        // nothing.
        let design = rows(&[&[0, 0, 0], &[2, 3, 2], &[1, 2, 1]]);
        let shown: Vec<&str> = MOTIFS.iter().filter(|m| (m.detect)(&design)).map(|m| m.structure).collect();
        assert_eq!(shown, vec!["rail"]);
        let ctx = AttributeContext {
            skills: vec![
                view("soft_shell", "shell", "rounded shell of passive voxels enclosing a hollow interior cavity"),
                view("base_rail", "rail", "continuous rail along the bottom edge with a wide base for ground contact"),
            ],
            designs: vec![design, rows(&[&[0, 0, 0], &[0, 3, 0], &[0, 0, 0]])],
        };
        let out = attribute(&ctx);
        assert_eq!(out["assignments"][0]["skill_id"], "base_rail");
        assert_eq!(out["assignments"][1]["skill_id"], Value::Null);
        let parsed = parse::validate_attribute(Some(&out), 2, &["soft_shell", "base_rail"]).unwrap();
        assert_eq!(parsed, vec![Some("base_rail".to_string()), None]);
    }

    #[test]
    fn attribute_leaves_uncovered_structure_unassigned() {
        let design = rows(&[&[0, 0, 0], &[2, 3, 2], &[2, 2, 2]]);
        assert!(rail(&design) && pads(&design));
        let rail_only = AttributeContext {
            skills: vec![view("grounded_base_rail", "rail", MOTIFS[1].condition)],
            designs: vec![design.clone()],
        };
        assert_eq!(attribute(&rail_only)["assignments"][0]["skill_id"], Value::Null);
        let both = AttributeContext {
            skills: vec![
                view("grounded_base_rail", "rail", MOTIFS[1].condition),
                view("soft_contact_pad", "pad", MOTIFS[2].condition),
            ],
            designs: vec![design],
        };
        assert!(attribute(&both)["assignments"][0]["skill_id"].is_string());
    }

    #[test]
    fn propose_respects_slots_and_history() {
        let parent = rows(&[&[0, 0, 0, 0, 0], &[0, 0, 0, 0, 0], &[0, 0, 0, 0, 0], &[1, 3, 3, 3, 1], &[1, 0, 0, 0, 1]]);
        let mut s = view("braced_actuator_frame", "frame", MOTIFS[0].condition);
        s.positive.push(LeafView {
            leaf_id: "pos_0".into(),
            polarity: Polarity::Positive,
            claim: "rigid_side_brace".into(),
            description: EditKind::SideSupport.texts().1.into(),
            support_count: 2,
            avg_gain: 0.8,
            prior_support: None,
            prior_avg_gain: None,
        });
        let ctx = ProposeContext {
            parent: parent.clone(),
            parent_fitness: 3.0,
            mutation_range: (1, 3),
            slots: (0..3).map(|i| SlotView { slot_index: i, skill: Some(s.clone()) }).collect(),
            history: vec![],
            references: vec![],
        };
        let text = HeuristicBackend.complete(&request(TemplateId::Propose, &ctx)).unwrap();
        let v = parse::extract_first_json_object(&text).unwrap();
        let sk = crate::skill::Skill::new("braced_actuator_frame", vec![], "frame", "c");
        let exp = parse::ProposeExpectation {
            parent: &parent,
            slots: (0..3).map(|i| parse::SlotSpec { slot_index: i, skill: Some(&sk) }).collect(),
            history: &[],
            mutation_range: (1, 3),
        };
        let out = parse::validate_propose(Some(&v), &exp);
        assert!(out.iter().all(|o| matches!(o, parse::SlotOutcome::Accepted(c) if !c.repaired && !c.out_of_range)));
        assert_eq!(v["designs"][0]["intended_leaf_id"], "pos_0");
    }

    #[test]
    fn cold_start_bodies_are_valid_and_distinct() {
        for n in [5, 10] {
            let ctx = ColdStartContext { n_designs: 25, grid_size: n, references: vec![] };
            let out = cold_start(&ctx, &mut ChaCha8Rng::seed_from_u64(7));
            let bodies = parse::validate_cold_start(Some(&out), 25, n);
            assert!(bodies.iter().all(|b| matches!(b, Some((_, false)))));
        }
    }

    #[test]
    fn add_picks_recurring_uncovered_motif() {
        let railed = rows(&[&[0, 0, 0], &[1, 3, 1], &[1, 1, 1]]);
        let d = |id, body: &Body| DesignView { obs_id: id, body: body.clone(), fitness: 1.0, gain: 0.5 };
        let ctx = AddContext {
            task: "Walker".into(),
            high: vec![d(4, &railed), d(9, &railed)],
            low: vec![],
            existing: vec![view("braced_actuator_frame", "frame", MOTIFS[0].condition)],
        };
        let out = add(&ctx);
        let dec = parse::validate_add(Some(&out), "Walker", &[4, 9]).unwrap();
        assert_eq!(dec.skill.unwrap().skill_id, "grounded_base_rail");
        assert_eq!(dec.inspired_obs_ids, vec![4, 9]);
        let none = add(&AddContext { high: vec![d(4, &railed)], ..ctx });
        assert_eq!(none["decision"]["action"], "no_add");
    }

    #[test]
    fn diagnose_labels_edits() {
        let parent = rows(&[&[0, 0, 0], &[0, 3, 0], &[0, 1, 0]]);
        let braced = rows(&[&[0, 0, 0], &[1, 3, 0], &[0, 1, 0]]);
        let braced2 = rows(&[&[0, 0, 0], &[0, 3, 1], &[0, 1, 0]]);
        let trimmed_bad = rows(&[&[0, 0, 0], &[0, 3, 0], &[0, 0, 0]]);
        let o = |id, child: &Body, gain| DiagnoseObs { obs_id: id, gain, parent_body: parent.clone(), child_body: child.clone() };
        let ctx = DiagnoseContext {
            skill: view("braced_actuator_frame", "frame", MOTIFS[0].condition),
            unassigned: vec![o(1, &braced, 0.4), o(2, &braced2, 0.3), o(3, &trimmed_bad, -2.0), o(4, &braced, -0.1)],
        };
        let out = diagnose(&ctx);
        let (assign, standalone) = parse::validate_diagnose(Some(&out)).unwrap();
        assert_eq!(standalone.len(), 1);
        assert_eq!(standalone[0].claim, "rigid_side_brace");
        assert_eq!(standalone[0].supporting_obs_ids, vec![1, 2]);
        assert_eq!(assign.len(), 2);
        assert!(assign.iter().any(|a| a.obs_id == 4 && a.decision == crate::skill::LeafDecision::NoLeaf));
        assert!(out.to_string().contains("over_trimmed_body"));
    }

    #[test]
    fn merge_clusters_near_duplicates() {
        let ctx = MergeContext {
            skills: vec![
                view("frame_b", "frame", "rigid frame wrapped around actuators giving stiff support"),
                view("frame_a", "frame", "rigid frame wrapped around the actuators giving stiff support"),
                view("rail_a", "rail", "rigid frame wrapped around actuators giving stiff support"),
            ],
        };
        let out = merge(&ctx);
        let clusters = parse::validate_merge(Some(&out)).unwrap();
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].group_label, "frame_a");
        assert_eq!(clusters[0].skill_ids, vec!["frame_a".to_string(), "frame_b".to_string()]);
    }

    #[test]
    fn motif_conditions_satisfy_add_rules() {
        for m in MOTIFS {
            let words = m.condition.split_whitespace().count();
            assert!((10..=25).contains(&words), "{}", m.skill_id);
            assert!(crate::skill::is_snake_case_id(m.skill_id, 3));
            assert!(Tactic::for_text(m.condition).is_some(), "{}", m.skill_id);
        }
        for k in [EditKind::SideSupport, EditKind::GroundContact, EditKind::SoftPad, EditKind::ExtraActuator, EditKind::FrameExtension, EditKind::Trimmed] {
            let (_, pd, _, nd) = k.texts();
            assert!(Tactic::for_text(pd).is_some() && Tactic::for_text(nd).is_some(), "{k:?}");
        }
    }
}
