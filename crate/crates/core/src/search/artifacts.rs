//! Run directories: config snapshot, append-only logs, checkpoint and final
//! artifacts.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::llm::{PromptAudit, TransferContext};
use crate::metrics::{summary_csv, summary_table, FitnessCurve, ReportRow};
use crate::skill::LibraryDocument;
use crate::voxel::Body;

use super::{
    build_backend, build_evaluator, prepare_state, update_elites, Engine, Evaluated, GenerationRecord, RunConfig,
    RunError, RunState,
};

pub const CONFIG_FILE: &str = "config.snapshot";
pub const RUN_LOG_FILE: &str = "run.log.jsonl";
pub const PROMPT_LOG_FILE: &str = "prompts.log.jsonl";
pub const LIBRARY_FILE: &str = "library.json";
pub const BEST_BODY_FILE: &str = "best_body.json";
pub const CURVE_FILE: &str = "curve.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const REPORT_FILE: &str = "report.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const ELITES_FILE: &str = "elites.json";

const SOURCE_ELITES: usize = 20;

#[derive(Debug, Clone)]
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        RunDir { path: path.into() }
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn config(&self) -> Result<RunConfig, RunError> {
        RunConfig::load(&self.file(CONFIG_FILE))
    }
}

/// A finished run used as a transfer source.
#[derive(Debug, Clone)]
pub struct SourceRun {
    pub library: LibraryDocument,
    /// Best bodies of the source run, best first.
    pub elites: Vec<(Body, f64)>,
    pub name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EliteEntry {
    eval_index: u64,
    fitness: f64,
    body: Body,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BestBody {
    eval_index: u64,
    fitness: f64,
    body: Body,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    generation: u64,
    population: Vec<Evaluated>,
    elite_pool: Vec<u64>,
    evals_used: u64,
    best_curve: Vec<(u64, f64)>,
    library: LibraryDocument,
    references: Vec<(Body, f64)>,
    transfer: Option<TransferContext>,
}

impl Checkpoint {
    fn of(state: &RunState) -> Self {
        Checkpoint {
            generation: state.generation,
            population: state.population.clone(),
            elite_pool: state.elite_pool.clone(),
            evals_used: state.evals_used,
            best_curve: state.best_curve.clone(),
            library: LibraryDocument::from_library(&state.library),
            references: state.references.clone(),
            transfer: state.transfer.clone(),
        }
    }

    fn into_state(self) -> Result<RunState, RunError> {
        let library = self.library.into_library().map_err(|e| RunError::SchemaViolation(e.to_string()))?;
        Ok(RunState {
            generation: self.generation,
            population: self.population,
            elite_pool: self.elite_pool,
            evals_used: self.evals_used,
            best_curve: self.best_curve,
            library,
            references: self.references,
            transfer: self.transfer,
        })
    }
}

fn write_atomic(path: &Path, text: &str) -> Result<(), RunError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_source(dir: &Path) -> Result<SourceRun, RunError> {
    let lib_path = dir.join(LIBRARY_FILE);
    if !lib_path.is_file() {
        return Err(RunError::SourceLibraryMissing(lib_path.display().to_string()));
    }
    let library = LibraryDocument::load(&lib_path).map_err(|e| RunError::SchemaViolation(e.to_string()))?;
    library.validate().map_err(|e| RunError::SchemaViolation(e.to_string()))?;
    let elites_path = dir.join(ELITES_FILE);
    let elites = if elites_path.is_file() {
        let text = fs::read_to_string(&elites_path)?;
        let entries: Vec<EliteEntry> =
            serde_json::from_str(&text).map_err(|e| RunError::SchemaViolation(format!("{ELITES_FILE}: {e}")))?;
        entries.into_iter().map(|e| (e.body, e.fitness)).collect()
    } else {
        Vec::new()
    };
    let name = dir
        .canonicalize()
        .unwrap_or_else(|_| dir.to_path_buf())
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "source".into());
    Ok(SourceRun { library, elites, name })
}

/// Every complete record in the run log.
pub fn read_run_log(dir: &Path) -> Result<Vec<GenerationRecord>, RunError> {
    let path = dir.join(RUN_LOG_FILE);
    if !path.is_file() {
        return Ok(Vec::new());
    }
    Ok(fs::read_to_string(path)?
        .lines()
        .filter_map(|l| serde_json::from_str::<GenerationRecord>(l).ok())
        .collect())
}

/// Keeps only complete JSONL lines whose `generation` is below `generation`.
fn truncate_log(path: &Path, generation: u64) -> Result<(), RunError> {
    if !path.is_file() {
        return Ok(());
    }
    let text = fs::read_to_string(path)?;
    let mut kept = String::new();
    for line in text.split_inclusive('\n').filter(|l| l.ends_with('\n')) {
        let keep = serde_json::from_str::<serde_json::Value>(line)
            .ok()
            .and_then(|v| v.get("generation").and_then(|g| g.as_u64()))
            .is_some_and(|g| g < generation);
        if keep {
            kept.push_str(line);
        }
    }
    write_atomic(path, &kept)
}

fn append_line(path: &Path, line: &str) -> Result<(), RunError> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{line}")?;
    f.flush()?;
    Ok(())
}

fn drive(dir: &RunDir, config: &RunConfig, mut state: RunState) -> Result<RunState, RunError> {
    let evaluator = build_evaluator(&config.evaluator, Duration::from_secs_f64(config.evaluator_timeout_secs))?;
    let backend = if config.mode == super::RunMode::GaOnly { None } else { Some(build_backend(config)?) };
    let audit = PromptAudit::open(&dir.file(PROMPT_LOG_FILE))?;
    let engine = Engine { config, backend: backend.as_deref(), evaluator: evaluator.as_ref(), audit: &audit };
    let log = dir.file(RUN_LOG_FILE);
    let ckpt = dir.file(CHECKPOINT_FILE);
    engine.run_from(&mut state, &mut |s, rec| {
        append_line(&log, &rec.to_json_line())?;
        let text = serde_json::to_string(&Checkpoint::of(s)).expect("checkpoint serializes");
        write_atomic(&ckpt, &text)?;
        LibraryDocument::from_library(&s.library).save(&dir.file(LIBRARY_FILE))?;
        log::info!(
            "generation {} done: {} evals, best {:?}",
            rec.generation,
            rec.evals_used,
            rec.best_fitness
        );
        Ok(())
    })?;
    write_final_artifacts(dir, config, &state)?;
    Ok(state)
}

/// Starts a new run in `dir`, which must not already hold a run log.
pub fn start_run(dir: &Path, config: &RunConfig) -> Result<RunState, RunError> {
    config.validate()?;
    let run_dir = RunDir::new(dir);
    fs::create_dir_all(dir)?;
    if run_dir.file(RUN_LOG_FILE).exists() {
        return Err(RunError::ConfigInvalid(format!("{} already holds a run; use resume", dir.display())));
    }
    let source = match (&config.source_run, config.mode.is_transfer()) {
        (Some(src), true) => Some(load_source(Path::new(src))?),
        _ => None,
    };
    fs::write(run_dir.file(CONFIG_FILE), config.to_toml())?;
    let state = prepare_state(config, source.as_ref())?;
    drive(&run_dir, config, state)
}

/// Continues a run from its last checkpoint.
pub fn resume_run(dir: &Path) -> Result<RunState, RunError> {
    let run_dir = RunDir::new(dir);
    let config = run_dir.config()?;
    let ckpt = run_dir.file(CHECKPOINT_FILE);
    let state = if ckpt.is_file() {
        let text = fs::read_to_string(&ckpt)?;
        let c: Checkpoint =
            serde_json::from_str(&text).map_err(|e| RunError::SchemaViolation(format!("{CHECKPOINT_FILE}: {e}")))?;
        c.into_state()?
    } else {
        let source = match (&config.source_run, config.mode.is_transfer()) {
            (Some(src), true) => Some(load_source(Path::new(src))?),
            _ => None,
        };
        prepare_state(&config, source.as_ref())?
    };
    truncate_log(&run_dir.file(RUN_LOG_FILE), state.generation)?;
    truncate_log(&run_dir.file(PROMPT_LOG_FILE), state.generation)?;
    drive(&run_dir, &config, state)
}

pub fn write_final_artifacts(dir: &RunDir, config: &RunConfig, state: &RunState) -> Result<(), RunError> {
    LibraryDocument::from_library(&state.library).save(&dir.file(LIBRARY_FILE))?;
    if let Some(best) = state.best() {
        let doc = BestBody { eval_index: best.eval_index, fitness: best.fitness.unwrap(), body: best.body.clone() };
        fs::write(dir.file(BEST_BODY_FILE), serde_json::to_string_pretty(&doc).unwrap() + "\n")?;
    }
    let elites: Vec<EliteEntry> = update_elites(&state.population, SOURCE_ELITES)
        .into_iter()
        .map(|i| {
            let m = state.member(i);
            EliteEntry { eval_index: i, fitness: m.fitness.unwrap(), body: m.body.clone() }
        })
        .collect();
    fs::write(dir.file(ELITES_FILE), serde_json::to_string_pretty(&elites).unwrap() + "\n")?;
    let curve = FitnessCurve::new(state.best_curve.clone(), config.budget)
        .map_err(|e| RunError::Io(format!("best-so-far curve: {e}")))?;
    fs::write(dir.file(CURVE_FILE), curve.to_csv())?;
    let rows: Vec<ReportRow> = curve
        .endpoint()
        .ok()
        .map(|endpoint| ReportRow::Single { task: config.task.clone(), endpoint })
        .into_iter()
        .collect();
    fs::write(dir.file(SUMMARY_FILE), summary_csv(&rows))?;
    fs::write(dir.file(REPORT_FILE), summary_table(&rows))?;
    Ok(())
}
