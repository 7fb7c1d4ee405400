//! The generation loop.
//!
//! Generation 0 is the initial population: 25 bodies from the cold-start
//! prompt (or random valid bodies for the GA baseline). Every later
//! generation fills Path A slots with skill-conditioned proposals from the
//! backend and Path B slots with GA mutations of elite parents, evaluates the
//! batch, and then maintains the library: Attribute, pool re-attribution,
//! Add, Diagnose and Merge, in that order.

mod artifacts;
mod config;
mod state;

pub use artifacts::{
    load_source, read_run_log, resume_run, start_run, write_final_artifacts, RunDir, SourceRun, CHECKPOINT_FILE,
    BEST_BODY_FILE, CONFIG_FILE, CURVE_FILE, ELITES_FILE, LIBRARY_FILE, PROMPT_LOG_FILE, REPORT_FILE, RUN_LOG_FILE,
    SUMMARY_FILE,
};
pub use config::{default_budget, default_mutation_range, default_task_desc, Ablations, RunConfig, RunMode};
pub use state::{
    comparable_payload, path_counts, update_elites, DiagnoseRecord, Evaluated, GenerationRecord, MaintenanceRecord,
    RunState, SlotRecord, Timing,
};

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::eval::{
    env_id, evaluate_batch, fan_out, Endpoint, EvalError, EvalRequest, Evaluator, ExternalEvaluator,
    SurrogateEvaluator, TaskProfile,
};
use crate::llm::blocks::{
    self, AddContext, AttributeContext, ColdStartContext, DesignView, DiagnoseContext, DiagnoseObs, HistoryEntry,
    MergeContext, ProposeContext, SkillView, SlotView,
};
use crate::llm::prompts::{COLD_START_NOTE, LOW_SKILL_HINT, VOXEL_LEGEND};
use crate::llm::{
    dispatch_logged, render_with_preamble, validate_add, validate_attribute, validate_cold_start,
    validate_diagnose, validate_merge, validate_propose, BackendResponse, HeuristicBackend, LlmError,
    ProposalBackend, ProposeExpectation, PromptAudit, RemoteBackend, ScriptedBackend, SlotOutcome, SlotSpec,
    Substitutions, TemplateId, TransferContext,
};
use crate::rng::{stream_rng, stream_seed, STREAM_EVALUATOR, STREAM_FALLBACK, STREAM_INIT, STREAM_PATH_B, STREAM_SAMPLING};
use crate::skill::{
    apply_add, apply_attribution, apply_diagnose, apply_merge, import_for_transfer, pool_pressure, retrieve,
    sample_skill, AttributionDecision, LeafAssignment, LeafDecision, Observation, ObsId, ProposalPath, Skill,
    SkillLibrary,
};
use crate::voxel::{ga_mutate, random_valid_body, Body};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("source library missing: {0}")]
    SourceLibraryMissing(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("evaluator unavailable: {0}")]
    EvaluatorUnavailable(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl RunError {
    /// Process exit status for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::ConfigInvalid(_) | RunError::Io(_) => 2,
            RunError::BackendUnavailable(_) | RunError::EvaluatorUnavailable(_) => 3,
            RunError::SourceLibraryMissing(_) => 4,
            RunError::SchemaViolation(_) => 5,
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

/// Builds the evaluator named by a config string.
pub fn build_evaluator(spec: &str, timeout: Duration) -> Result<Box<dyn Evaluator>, RunError> {
    if spec == "surrogate" {
        return Ok(Box::new(SurrogateEvaluator::default()));
    }
    if let Some(profile) = spec.strip_prefix("surrogate:") {
        let p = TaskProfile::parse(profile)
            .ok_or_else(|| RunError::ConfigInvalid(format!("unknown surrogate profile `{profile}`")))?;
        return Ok(Box::new(SurrogateEvaluator::new(Some(p))));
    }
    if let Some(ep) = spec.strip_prefix("external:") {
        let endpoint =
            Endpoint::parse(ep).ok_or_else(|| RunError::ConfigInvalid(format!("bad evaluator endpoint `{ep}`")))?;
        return ExternalEvaluator::connect(&endpoint, timeout)
            .map(|e| Box::new(e) as Box<dyn Evaluator>)
            .map_err(|e| RunError::EvaluatorUnavailable(e.to_string()));
    }
    Err(RunError::ConfigInvalid(format!("unknown evaluator `{spec}`")))
}

/// Builds the proposal backend named by the config.
pub fn build_backend(config: &RunConfig) -> Result<Box<dyn ProposalBackend>, RunError> {
    let spec = config.backend.as_str();
    if spec == "heuristic" {
        return Ok(Box::new(HeuristicBackend::new()));
    }
    if spec == "remote" {
        return Ok(Box::new(RemoteBackend::new(config.remote.clone())));
    }
    if let Some(dir) = spec.strip_prefix("scripted:") {
        if !std::path::Path::new(dir).is_dir() {
            return Err(RunError::BackendUnavailable(format!("fixture directory `{dir}` not found")));
        }
        return Ok(Box::new(ScriptedBackend::new(dir)));
    }
    Err(RunError::ConfigInvalid(format!("unknown backend `{spec}`")))
}

/// Fresh state: an empty library, or the imported one for transfer runs.
pub fn prepare_state(config: &RunConfig, source: Option<&SourceRun>) -> Result<RunState, RunError> {
    config.validate()?;
    if !config.mode.is_transfer() {
        return Ok(RunState::new(SkillLibrary::new(&config.task, config.scale)));
    }
    let source = source.ok_or_else(|| RunError::SourceLibraryMissing("transfer run without a source".into()))?;
    let mut library = import_for_transfer(&source.library).map_err(|e| RunError::SchemaViolation(e.to_string()))?;
    library.task = config.task.clone();
    library.scale = config.scale;
    for s in &mut library.skills {
        if !s.task_family.contains(&config.task) {
            s.task_family.push(config.task.clone());
        }
    }
    let with_reference = config.mode == crate::search::RunMode::TransferWithRef;
    let mut state = RunState::new(library);
    if with_reference {
        state.references = source.elites.iter().take(config.static_elite_pool).cloned().collect();
    }
    state.transfer = Some(TransferContext {
        current_env: env_id(&config.task, config.scale),
        current_grid: config.scale,
        source_grid: source.library.scale,
        source_exp: source.name.clone(),
        with_reference,
    });
    Ok(state)
}

/// Drives generations for one run.
pub struct Engine<'a> {
    pub config: &'a RunConfig,
    pub backend: Option<&'a dyn ProposalBackend>,
    pub evaluator: &'a dyn Evaluator,
    pub audit: &'a PromptAudit,
}

/// One planned body before evaluation.
struct Planned {
    slot_index: usize,
    path: ProposalPath,
    fallback: bool,
    fallback_reason: Option<String>,
    parent: Option<u64>,
    skill_id: Option<String>,
    intended_leaf_id: Option<String>,
    body: Body,
    repaired: bool,
    out_of_range: bool,
}

impl Planned {
    fn init(slot_index: usize, body: Body, repaired: bool) -> Self {
        Planned {
            slot_index,
            path: ProposalPath::Init,
            fallback: false,
            fallback_reason: None,
            parent: None,
            skill_id: None,
            intended_leaf_id: None,
            body,
            repaired,
            out_of_range: false,
        }
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl<'a> Engine<'a> {
    fn master(&self) -> u64 {
        self.config.master_seed
    }

    fn grid(&self) -> usize {
        self.config.scale
    }

    fn call(&self, template: TemplateId, subs: &Substitutions, ordinal: u64, generation: u64, ctx: &impl serde::Serialize, preamble: &str) -> Result<BackendResponse, LlmError> {
        let backend = self.backend.ok_or_else(|| LlmError::BackendUnavailable("no backend configured".into()))?;
        let req = render_with_preamble(template, subs, generation, preamble)?.with_ordinal(ordinal).with_context(ctx);
        dispatch_logged(&req, backend, self.audit)
    }

    fn views(&self, skills: &[&Skill], include_rules: bool) -> Vec<SkillView> {
        skills.iter().map(|s| SkillView::of(s, self.config.delta_max, include_rules)).collect()
    }

    fn task_skills<'s>(&self, lib: &'s SkillLibrary) -> Vec<&'s Skill> {
        lib.skills.iter().filter(|s| s.task_family.contains(&self.config.task)).collect()
    }

    fn random_body(&self, stream: &str, indices: &[u64]) -> Body {
        random_valid_body(self.grid(), &mut stream_rng(self.master(), stream, indices))
    }

    fn mutate(&self, parent: &Body, stream: &str, indices: &[u64]) -> Body {
        ga_mutate(parent, stream_seed(self.master(), stream, indices), self.config.mutation_rate)
            .unwrap_or_else(|_| self.random_body(stream, &[indices, &[u64::MAX]].concat()))
    }

    /// Runs generation 0 (the initial population) on a prepared state.
    pub fn initialize(&self, state: &mut RunState) -> Result<GenerationRecord, RunError> {
        assert_eq!(state.generation, 0, "initial population already evaluated");
        let start = Instant::now();
        let n = (self.config.generation_size as u64).min(self.config.budget) as usize;
        let planned: Vec<Planned> = if self.config.mode == RunMode::GaOnly {
            (0..n).map(|i| Planned::init(i, self.random_body(STREAM_INIT, &[i as u64]), false)).collect()
        } else {
            self.cold_start(state, n)?
        };
        let mut record = self.evaluate_and_record(state, planned, n < self.config.generation_size)?;
        state.elite_pool = update_elites(&state.population, self.config.elite_pool_k);
        state.generation = 1;
        record.elite_pool = state.elite_pool.clone();
        record.timing.wall_secs = start.elapsed().as_secs_f64();
        Ok(record)
    }

    fn cold_start(&self, state: &RunState, n: usize) -> Result<Vec<Planned>, RunError> {
        let subs = Substitutions::new()
            .text("task_desc", self.config.task_description())
            .text("voxel_legend", VOXEL_LEGEND)
            .text("n_designs", n.to_string())
            .text("grid_size", self.grid().to_string());
        let mut preamble = String::new();
        if let Some(t) = &state.transfer {
            let skills: Vec<&Skill> = self.task_skills(&state.library);
            preamble.push_str(&t.block());
            preamble.push_str("\nImported skill library:\n");
            preamble.push_str(&blocks::skills_summary_block(&self.views(&skills, true)));
            preamble.push_str("\n\n");
            preamble.push_str(&blocks::static_reference_block(&state.references));
            if !state.references.is_empty() {
                preamble.push('\n');
            }
        }
        let ctx = ColdStartContext {
            n_designs: n,
            grid_size: self.grid(),
            references: state.references.iter().map(|r| r.0.clone()).collect(),
        };
        let resp = match self.call(TemplateId::ColdStart, &subs, 0, 0, &ctx, &preamble) {
            Ok(r) => r,
            Err(LlmError::MissingPlaceholder(p)) => panic!("cold-start placeholder `{p}` not supplied"),
            Err(e) => return Err(RunError::BackendUnavailable(e.to_string())),
        };
        let bodies = validate_cold_start(resp.value(), n, self.grid());
        Ok(bodies
            .into_iter()
            .enumerate()
            .map(|(i, b)| match b {
                Some((body, repaired)) => Planned::init(i, body, repaired),
                None => {
                    log::info!("cold-start design {i} unusable; replaced by a random valid body");
                    let mut p = Planned::init(i, self.random_body(STREAM_INIT, &[i as u64]), false);
                    p.fallback = true;
                    p.fallback_reason = Some("cold-start design missing or invalid".into());
                    p
                }
            })
            .collect())
    }

    fn evaluate_and_record(&self, state: &mut RunState, planned: Vec<Planned>, partial: bool) -> Result<GenerationRecord, RunError> {
        let generation = state.generation;
        let base = state.evals_used;
        let requests: Vec<EvalRequest> = planned
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let eval_index = base + 1 + i as u64;
                EvalRequest {
                    request_id: format!("e{eval_index}"),
                    body: p.body.clone(),
                    task: env_id(&self.config.task, self.grid()),
                    scale: self.grid(),
                    controller_seed: stream_seed(self.master(), STREAM_EVALUATOR, &[eval_index]),
                    budget_steps: self.config.budget_steps,
                }
            })
            .collect();
        let results = evaluate_batch(&requests, self.evaluator, self.config.parallelism).map_err(|e| match e {
            EvalError::EvaluatorUnavailable(m) => RunError::EvaluatorUnavailable(m),
            other => panic!("validity gate let an unevaluable body through: {other}"),
        })?;
        let mut slots = Vec::with_capacity(planned.len());
        for (p, r) in planned.into_iter().zip(results) {
            let eval_index = base + 1 + slots.len() as u64;
            let parent_fitness = p.parent.and_then(|i| state.member(i).fitness);
            let gain = match (r.fitness, parent_fitness) {
                (Some(f), Some(pf)) => Some(f - pf),
                _ => None,
            };
            state.push(Evaluated {
                eval_index,
                generation,
                body: p.body.clone(),
                fitness: r.fitness,
                parent: p.parent,
                path: p.path,
            });
            slots.push(SlotRecord {
                eval_index,
                slot_index: p.slot_index,
                path: p.path,
                fallback: p.fallback,
                fallback_reason: p.fallback_reason,
                parent: p.parent,
                skill_id: p.skill_id,
                intended_leaf_id: p.intended_leaf_id,
                body: p.body,
                repaired: p.repaired,
                out_of_range: p.out_of_range,
                fitness: r.fitness,
                parent_fitness,
                gain,
                error: r.error,
            });
        }
        Ok(GenerationRecord {
            generation,
            partial,
            slots,
            maintenance: None,
            evals_used: state.evals_used,
            best_fitness: state.best_fitness(),
            elite_pool: Vec::new(),
            timing: Timing::default(),
        })
    }

    /// Runs one generation after the initial population.
    pub fn run_generation(&self, state: &mut RunState) -> Result<GenerationRecord, RunError> {
        assert!(state.generation >= 1, "initialize first");
        assert!(state.evals_used < self.config.budget, "budget exhausted");
        let start = Instant::now();
        let t = state.generation;
        let g = self.config.generation_size;
        let n = ((self.config.budget - state.evals_used) as usize).min(g);
        let (a_slots, _) = self.config.effective_slots();
        let a_n = a_slots.min(n);
        let b_n = n - a_n;

        let elites = state.elite_pool.clone();
        let ga_parents = if self.config.mode == RunMode::GaOnly {
            let keep = ((self.config.ga_survival_rate * g as f64).ceil() as usize).max(1);
            update_elites(&state.population, keep)
        } else {
            elites.clone()
        };

        let mut planned: Vec<Planned> = Vec::with_capacity(n);
        // Path A planning: parent and skill per slot.
        let retrieved: Vec<&Skill> =
            retrieve(&state.library.skills, &self.config.task, self.grid(), t, self.config.prior_only_k);
        let mut groups: BTreeMap<usize, Vec<(usize, Option<String>)>> = BTreeMap::new();
        let mut converted = Vec::new();
        for i in 0..a_n {
            if elites.is_empty() {
                converted.push((i, None));
                continue;
            }
            let pos = i % elites.len();
            if retrieved.is_empty() && !self.config.ablations.pure_llm {
                converted.push((i, Some(elites[pos])));
                continue;
            }
            let skill = if retrieved.is_empty() {
                None
            } else {
                let seed = stream_seed(self.master(), STREAM_SAMPLING, &[t, i as u64]);
                Some(sample_skill(&retrieved, self.config.delta_max, seed).expect("non-empty").skill_id.clone())
            };
            groups.entry(pos).or_default().push((i, skill));
        }

        let proposals = self.propose_groups(state, &elites, &groups, t);
        for (pos, outcomes) in proposals {
            let parent = elites[pos];
            for outcome in outcomes {
                planned.push(match outcome {
                    SlotOutcome::Accepted(c) => Planned {
                        slot_index: c.slot_index,
                        path: ProposalPath::A,
                        fallback: false,
                        fallback_reason: None,
                        parent: Some(parent),
                        skill_id: c.assigned_skill,
                        intended_leaf_id: c.intended_leaf_id,
                        body: c.body,
                        repaired: c.repaired,
                        out_of_range: c.out_of_range,
                    },
                    SlotOutcome::Fallback { slot_index, reason } => {
                        let body = self.mutate(&state.member(parent).body, STREAM_FALLBACK, &[t, slot_index as u64]);
                        Planned {
                            slot_index,
                            path: ProposalPath::A,
                            fallback: true,
                            fallback_reason: Some(reason),
                            parent: Some(parent),
                            skill_id: None,
                            intended_leaf_id: None,
                            body,
                            repaired: false,
                            out_of_range: false,
                        }
                    }
                });
            }
        }

        // Path A slots with nothing to condition on become GA slots.
        for (k, (i, parent)) in converted.into_iter().enumerate() {
            let b_index = (b_n + k) as u64;
            let body = match parent {
                Some(p) => self.mutate(&state.member(p).body, STREAM_PATH_B, &[t, b_index]),
                None => self.random_body(STREAM_PATH_B, &[t, b_index]),
            };
            planned.push(Planned {
                slot_index: i,
                path: ProposalPath::B,
                fallback: false,
                fallback_reason: Some("no skill retrieved".into()),
                parent,
                skill_id: None,
                intended_leaf_id: None,
                body,
                repaired: false,
                out_of_range: false,
            });
        }

        for j in 0..b_n {
            let parent = (!ga_parents.is_empty()).then(|| ga_parents[j % ga_parents.len()]);
            let body = match parent {
                Some(p) => self.mutate(&state.member(p).body, STREAM_PATH_B, &[t, j as u64]),
                None => self.random_body(STREAM_PATH_B, &[t, j as u64]),
            };
            planned.push(Planned {
                slot_index: a_n + j,
                path: ProposalPath::B,
                fallback: false,
                fallback_reason: None,
                parent,
                skill_id: None,
                intended_leaf_id: None,
                body,
                repaired: false,
                out_of_range: false,
            });
        }
        planned.sort_by_key(|p| p.slot_index);

        let mut record = self.evaluate_and_record(state, planned, n < g)?;
        state.elite_pool = update_elites(&state.population, self.config.elite_pool_k);
        if self.config.mode != RunMode::GaOnly {
            record.maintenance = Some(self.maintain(state, &record));
        }
        state.generation += 1;
        record.elite_pool = state.elite_pool.clone();
        record.timing.wall_secs = start.elapsed().as_secs_f64();
        Ok(record)
    }

    /// One Propose call per parent, issued concurrently.
    fn propose_groups(
        &self,
        state: &RunState,
        elites: &[u64],
        groups: &BTreeMap<usize, Vec<(usize, Option<String>)>>,
        t: u64,
    ) -> Vec<(usize, Vec<SlotOutcome>)> {
        let items: Vec<(u64, usize, &Vec<(usize, Option<String>)>)> =
            groups.iter().enumerate().map(|(ordinal, (pos, slots))| (ordinal as u64, *pos, slots)).collect();
        let include_rules = !self.config.ablations.no_l2_l3;
        let outcomes = fan_out(&items, self.config.parallelism, |(ordinal, pos, slots)| {
            let parent = state.member(elites[*pos]);
            let parent_fitness = parent.fitness.unwrap_or(0.0);
            let skills: Vec<Option<&Skill>> =
                slots.iter().map(|(_, id)| id.as_ref().and_then(|id| state.library.skill(id))).collect();
            let slot_views: Vec<SlotView> = slots
                .iter()
                .zip(&skills)
                .map(|((i, _), s)| SlotView {
                    slot_index: *i,
                    skill: s.map(|s| SkillView::of(s, self.config.delta_max, include_rules)),
                })
                .collect();
            let children = state.children_of(parent.eval_index);
            let history: Vec<HistoryEntry> = children
                .iter()
                .filter_map(|c| c.fitness.map(|f| HistoryEntry { child_body: c.body.clone(), child_fitness: f }))
                .collect();
            let history_bodies: Vec<Body> = children.iter().map(|c| c.body.clone()).collect();
            let (lo, hi) = self.config.mutation_range;
            let subs = Substitutions::new()
                .text("task_desc", self.config.task_description())
                .text("transfer_context_block", state.transfer.as_ref().map(|t| t.block()).unwrap_or_default())
                .text("voxel_legend", VOXEL_LEGEND)
                .number("parent_fitness", parent_fitness)
                .text("parent_body", blocks::body_block(&parent.body))
                .text("skill_assignments_block", blocks::skill_assignments_block(&slot_views))
                .text("static_reference_block", blocks::static_reference_block(&state.references))
                .text(
                    "history_block",
                    if include_rules { blocks::history_block(&history, &parent.body) } else { blocks::HISTORY_WITHHELD.into() },
                )
                .text("n_designs", slots.len().to_string())
                .text("mutation_range", format!("{lo}-{hi}"))
                .text("grid_size", self.grid().to_string());
            let ctx = ProposeContext {
                parent: parent.body.clone(),
                parent_fitness,
                mutation_range: (lo, hi),
                slots: slot_views,
                history: if include_rules { history_bodies.clone() } else { Vec::new() },
                references: state.references.iter().map(|r| r.0.clone()).collect(),
            };
            let resp = self.call(TemplateId::Propose, &subs, *ordinal, t, &ctx, "");
            let specs: Vec<SlotSpec> =
                slots.iter().zip(&skills).map(|((i, _), s)| SlotSpec { slot_index: *i, skill: *s }).collect();
            let exp = ProposeExpectation {
                parent: &parent.body,
                slots: specs,
                history: &history_bodies,
                mutation_range: (lo, hi),
            };
            let out = match &resp {
                Ok(r) => validate_propose(r.value(), &exp),
                Err(e) => {
                    log::warn!("propose call for parent {} failed: {e}", parent.eval_index);
                    exp.slots
                        .iter()
                        .map(|s| SlotOutcome::Fallback { slot_index: s.slot_index, reason: e.to_string() })
                        .collect()
                }
            };
            (*pos, out)
        });
        outcomes
    }

    fn observations(&self, state: &RunState, record: &GenerationRecord) -> Vec<Observation> {
        record
            .slots
            .iter()
            .filter_map(|s| {
                let (fitness, parent_fitness, gain) = (s.fitness?, s.parent_fitness?, s.gain?);
                Some(Observation {
                    obs_id: s.eval_index,
                    generation: record.generation,
                    child_body: s.body.clone(),
                    parent_body: state.member(s.parent?).body.clone(),
                    task: self.config.task.clone(),
                    scale: self.grid(),
                    fitness,
                    parent_fitness,
                    gain,
                    valid: true,
                    proposal_path: s.path,
                    fallback: s.fallback,
                    attributed_skill: s.skill_id.clone(),
                    intended_leaf_id: s.intended_leaf_id.clone(),
                    assigned_leaf_id: None,
                    no_leaf_attempts: 0,
                })
            })
            .collect()
    }

    /// Attribute decisions for `obs` (all `None` when the library is empty
    /// or the response is unusable).
    fn attribute(&self, lib: &SkillLibrary, obs: &[Observation], ordinal: u64, t: u64, m: &mut MaintenanceRecord) -> Vec<AttributionDecision> {
        let none = |o: &Observation| AttributionDecision { obs_id: o.obs_id, skill_id: None, reason: String::new() };
        let skills = self.task_skills(lib);
        if skills.is_empty() || obs.is_empty() {
            return obs.iter().map(none).collect();
        }
        let views = self.views(&skills, true);
        let designs: Vec<Body> = obs.iter().map(|o| o.child_body.clone()).collect();
        let subs = Substitutions::new()
            .text("skills_block", blocks::skills_summary_block(&views))
            .text("designs_block", blocks::designs_block(&designs));
        let ctx = AttributeContext { skills: views, designs };
        let ids: Vec<&str> = skills.iter().map(|s| s.skill_id.as_str()).collect();
        let parsed = self
            .call(TemplateId::Attribute, &subs, ordinal, t, &ctx, "")
            .map_err(|e| e.to_string())
            .and_then(|r| validate_attribute(r.value(), obs.len(), &ids));
        match parsed {
            Ok(choice) => obs
                .iter()
                .zip(choice)
                .map(|(o, s)| AttributionDecision { obs_id: o.obs_id, skill_id: s, reason: String::new() })
                .collect(),
            Err(e) => {
                m.dropped.push(format!("attribute: {e}"));
                obs.iter().map(none).collect()
            }
        }
    }

    fn maintain(&self, state: &mut RunState, record: &GenerationRecord) -> MaintenanceRecord {
        let t = record.generation;
        let mut m = MaintenanceRecord::default();
        let observations = self.observations(state, record);
        let gen_obs = observations.clone();
        let lib = &mut state.library;

        // Path A children arrive attributed to the skill they were proposed under.
        let (attributed, unattributed): (Vec<Observation>, Vec<Observation>) =
            observations.into_iter().partition(|o| o.attributed_skill.is_some());
        let direct: Vec<AttributionDecision> = attributed
            .iter()
            .map(|o| AttributionDecision { obs_id: o.obs_id, skill_id: o.attributed_skill.clone(), reason: String::new() })
            .collect();
        m.attributed.extend(direct.iter().map(|d| (d.obs_id, d.skill_id.clone())));
        apply_attribution(lib, attributed, &direct).expect("proposal-time skills still exist");

        let decisions = self.attribute(lib, &unattributed, 0, t, &mut m);
        m.attributed.extend(decisions.iter().map(|d| (d.obs_id, d.skill_id.clone())));
        apply_attribution(lib, unattributed, &decisions).expect("decisions cover every observation");

        if pool_pressure(&lib.pool, self.config.pool_threshold) && !self.task_skills(lib).is_empty() {
            let drained = std::mem::take(&mut lib.pool.entries);
            let decisions = self.attribute(lib, &drained, 1, t, &mut m);
            m.reattributed = decisions.iter().map(|d| (d.obs_id, d.skill_id.clone())).collect();
            apply_attribution(lib, drained, &decisions).expect("decisions cover every observation");
        }

        self.add(lib, &gen_obs, t, &mut m);

        if !self.config.ablations.no_diagnose {
            self.diagnose(lib, &gen_obs, t, &mut m);
        }

        if !self.config.ablations.no_merge && lib.skills.len() >= 2 {
            let views = self.views(&lib.skills.iter().collect::<Vec<_>>(), false);
            let subs = Substitutions::new().text("skills_full_content", blocks::skills_full_content(&lib.skills));
            let parsed = self
                .call(TemplateId::Merge, &subs, 0, t, &MergeContext { skills: views }, "")
                .map_err(|e| e.to_string())
                .and_then(|r| validate_merge(r.value()));
            match parsed {
                Ok(clusters) if !clusters.is_empty() => match apply_merge(lib, &clusters) {
                    Ok(()) => m.merged = clusters,
                    Err(e) => m.dropped.push(format!("merge: {e}")),
                },
                Ok(_) => {}
                Err(e) => m.dropped.push(format!("merge: {e}")),
            }
        }

        m.skills_after = lib.skills.len();
        m.positive_leaves_after = lib.total_positive_leaves();
        m.negative_leaves_after = lib.total_negative_leaves();
        m.observations_after = lib.total_observations();
        m.pool_after = lib.pool.len();
        m
    }

    fn add(&self, lib: &mut SkillLibrary, gen_obs: &[Observation], t: u64, m: &mut MaintenanceRecord) {
        let view = |o: &Observation| DesignView { obs_id: o.obs_id, body: o.child_body.clone(), fitness: o.fitness, gain: o.gain };
        let mut candidates: Vec<&Observation> =
            lib.pool.entries.iter().filter(|o| o.generation == t).collect();
        if candidates.is_empty() {
            return;
        }
        candidates.sort_by(|a, b| b.fitness.total_cmp(&a.fitness).then(a.obs_id.cmp(&b.obs_id)));
        let high: Vec<DesignView> = candidates.iter().take(6).map(|o| view(o)).collect();
        let candidate_ids: Vec<ObsId> = candidates.iter().map(|o| o.obs_id).collect();
        let mut lows: Vec<&Observation> = gen_obs.iter().collect();
        lows.sort_by(|a, b| a.fitness.total_cmp(&b.fitness).then(a.obs_id.cmp(&b.obs_id)));
        let low: Vec<DesignView> = lows.iter().take(6).map(|o| view(o)).collect();
        let skills = self.task_skills(lib);
        let existing = self.views(&skills, true);
        let subs = Substitutions::new()
            .text("high_designs", blocks::scored_designs_block(&high))
            .text("low_designs", blocks::scored_designs_block(&low))
            .text("existing_skills_block", blocks::skills_summary_block(&existing))
            .text("task_name", self.config.task.clone())
            .text("low_skill_hint", if skills.len() < 2 { LOW_SKILL_HINT } else { "" });
        let ctx = AddContext { task: self.config.task.clone(), high, low, existing };
        let parsed = self
            .call(TemplateId::Add, &subs, 0, t, &ctx, "")
            .map_err(|e| e.to_string())
            .and_then(|r| validate_add(r.value(), &self.config.task, &candidate_ids));
        match parsed.and_then(|d| apply_add(lib, t, &d).map(|added| (added, d)).map_err(|e| e.to_string())) {
            Ok((true, d)) => {
                m.added_skill = d.skill.map(|s| s.skill_id);
                m.add_inspired = d.inspired_obs_ids;
            }
            Ok((false, _)) => {}
            Err(e) => m.dropped.push(format!("add: {e}")),
        }
    }

    fn diagnose(&self, lib: &mut SkillLibrary, gen_obs: &[Observation], t: u64, m: &mut MaintenanceRecord) {
        let mut fitness: Vec<f64> = gen_obs.iter().map(|o| o.fitness).collect();
        fitness.sort_by(f64::total_cmp);
        let gen_mean = if fitness.is_empty() { 0.0 } else { fitness.iter().sum::<f64>() / fitness.len() as f64 };
        let gen_p25 = percentile(&fitness, 0.25);
        let mut ids: Vec<String> = lib
            .skills
            .iter()
            .filter(|s| s.l3.observations.iter().any(|o| o.generation == t && o.is_pending()))
            .map(|s| s.skill_id.clone())
            .collect();
        ids.sort();
        let mut ordinal = 0;
        for id in ids {
            let skill = lib.skill_mut(&id).expect("listed above");
            let mut rec = DiagnoseRecord { skill_id: id.clone(), ..Default::default() };
            let auto: Vec<LeafAssignment> = skill
                .l3
                .observations
                .iter()
                .filter(|o| o.is_pending())
                .filter_map(|o| {
                    let leaf = o.intended_leaf_id.as_ref().filter(|l| skill.leaf(l).is_some())?;
                    Some(LeafAssignment {
                        obs_id: o.obs_id,
                        decision: LeafDecision::MatchExisting { leaf_id: leaf.clone(), description_update: None },
                    })
                })
                .collect();
            if !auto.is_empty() {
                apply_diagnose(skill, &auto, &[]).expect("auto assignments are valid");
                rec.auto_matched = auto.len();
            }
            let pending: Vec<&Observation> = skill.l3.observations.iter().filter(|o| o.is_pending()).collect();
            if pending.is_empty() {
                m.diagnose.push(rec);
                continue;
            }
            let view = SkillView::of(skill, self.config.delta_max, true);
            let context: Vec<&Observation> = skill
                .l3
                .observations
                .iter()
                .filter(|o| o.generation == t && o.assigned_leaf_id.is_some())
                .collect();
            let subs = Substitutions::new()
                .text("l1_condition", skill.l1.condition.clone())
                .text("leaves_json", blocks::leaves_json(&view))
                .text("unassigned_json", blocks::observations_json(&pending))
                .text("context_json", blocks::observations_json(&context))
                .number("gen_mean", gen_mean)
                .number("gen_p25", gen_p25)
                .text("cold_start_note", if skill.leaf_count() == 0 { COLD_START_NOTE } else { "" });
            let ctx = DiagnoseContext {
                skill: view,
                unassigned: pending
                    .iter()
                    .map(|o| DiagnoseObs {
                        obs_id: o.obs_id,
                        gain: o.gain,
                        parent_body: o.parent_body.clone(),
                        child_body: o.child_body.clone(),
                    })
                    .collect(),
            };
            let pending_ids: Vec<ObsId> = pending.iter().map(|o| o.obs_id).collect();
            let parsed = self
                .call(TemplateId::Diagnose, &subs, ordinal, t, &ctx, "")
                .map_err(|e| e.to_string())
                .and_then(|r| validate_diagnose(r.value()));
            ordinal += 1;
            let applied = parsed.and_then(|(a, s)| apply_diagnose(skill, &a, &s).map_err(|e| e.to_string()));
            match applied {
                Ok(out) => {
                    rec.matched = out.matched;
                    rec.new_leaves = out.new_leaves;
                    rec.no_leaf = out.no_leaf;
                }
                Err(e) => {
                    let all_no_leaf: Vec<LeafAssignment> = pending_ids
                        .iter()
                        .map(|&obs_id| LeafAssignment { obs_id, decision: LeafDecision::NoLeaf })
                        .collect();
                    let out = apply_diagnose(skill, &all_no_leaf, &[]).expect("pending ids are valid");
                    rec.no_leaf = out.no_leaf;
                    rec.dropped = Some(e.clone());
                    m.dropped.push(format!("diagnose {id}: {e}"));
                }
            }
            m.diagnose.push(rec);
        }
    }

    /// Runs generations until the budget is spent, handing each record to
    /// `sink` as soon as it completes.
    pub fn run_from(
        &self,
        state: &mut RunState,
        sink: &mut dyn FnMut(&RunState, &GenerationRecord) -> Result<(), RunError>,
    ) -> Result<(), RunError> {
        if state.generation == 0 {
            let rec = self.initialize(state)?;
            sink(state, &rec)?;
        }
        while state.evals_used < self.config.budget {
            let rec = self.run_generation(state)?;
            sink(state, &rec)?;
        }
        Ok(())
    }
}

/// In-memory run: state plus every generation record.
pub fn run(
    config: &RunConfig,
    source: Option<&SourceRun>,
    backend: Option<&dyn ProposalBackend>,
    evaluator: &dyn Evaluator,
    audit: &PromptAudit,
) -> Result<(RunState, Vec<GenerationRecord>), RunError> {
    let mut state = prepare_state(config, source)?;
    let engine = Engine { config, backend, evaluator, audit };
    let mut records = Vec::new();
    engine.run_from(&mut state, &mut |_, r| {
        records.push(r.clone());
        Ok(())
    })?;
    Ok((state, records))
}
