//! Command-line surface. [`run_cli`] parses arguments, runs one command and
//! returns the process exit status.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::eval::{env_id, EvalRequest};
use crate::llm::blocks::{self, MergeContext, SkillView};
use crate::llm::{dispatch, render_prompt, validate_merge, Substitutions, TemplateId};
use crate::metrics::{compare, summary_csv, summary_table, FitnessCurve, ReportRow};
use crate::rng::{stream_seed, STREAM_EVALUATOR};
use crate::search::{
    build_backend, build_evaluator, resume_run, start_run, RunConfig, RunDir, RunError, RunMode, CURVE_FILE,
    LIBRARY_FILE, REPORT_FILE, SUMMARY_FILE,
};
use crate::skill::{export_for_transfer, LibraryDocument, DEFAULT_DELTA_MAX};
use crate::voxel::{check_validity, upsample_tiling, Body};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_UNAVAILABLE: i32 = 3;
pub const EXIT_SOURCE_MISSING: i32 = 4;
pub const EXIT_SCHEMA: i32 = 5;

/// Directory under a run directory that holds its GA-only baseline.
pub const BASELINE_DIR: &str = "ga_baseline";

#[derive(Debug, Parser)]
#[command(name = "morphoskill", version, about = "Skill-library guided voxel body search")]
pub struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Start a cold-start or GA-only run.
    Run(RunArgs),
    /// Start a run seeded with another run's skill library.
    Transfer(TransferArgs),
    /// Continue an interrupted run from its last checkpoint.
    Resume { run_dir: PathBuf },
    /// Rebuild summary.csv and report.txt for a run.
    Report {
        run_dir: PathBuf,
        /// GA-only run to compare against (defaults to `<run_dir>/ga_baseline` when present).
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Inspect, dry-run merge on, or export a skill library.
    Library {
        #[command(subcommand)]
        action: LibraryAction,
    },
    /// Evaluate one body file.
    Evaluate(EvaluateArgs),
    /// Tile a body up by an integer factor.
    Upsample {
        body: PathBuf,
        #[arg(long, default_value_t = 2)]
        factor: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    ColdStart,
    GaOnly,
}

#[derive(Debug, Args)]
pub struct Overrides {
    /// Base configuration file; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub scale: Option<usize>,
    #[arg(long)]
    pub budget: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `surrogate`, `surrogate:<profile>` or `external:<endpoint>`.
    #[arg(long)]
    pub evaluator: Option<String>,
    /// `heuristic`, `scripted:<dir>` or `remote`.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub no_diagnose: bool,
    #[arg(long)]
    pub no_merge: bool,
    #[arg(long)]
    pub pure_llm: bool,
    #[arg(long = "no-l2l3")]
    pub no_l2_l3: bool,
    /// Run directory to create.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Also run the GA-only baseline and write a comparison summary.
    #[arg(long)]
    pub with_baseline: bool,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    /// Finished run whose library.json seeds this run.
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long, conflicts_with = "skill_only")]
    pub with_ref: bool,
    #[arg(long)]
    pub skill_only: bool,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Subcommand)]
pub enum LibraryAction {
    /// Per-skill summary with leaf counts and current weight.
    Inspect { library: PathBuf },
    /// Render the Merge prompt and show proposed clusters without applying them.
    MergeDryRun {
        library: PathBuf,
        #[arg(long, default_value = "heuristic")]
        backend: String,
    },
    /// Write the transfer-ready library (observations stripped).
    Export {
        library: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub body: PathBuf,
    #[arg(long)]
    pub task: String,
    #[arg(long, default_value = "surrogate")]
    pub evaluator: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = crate::eval::DEFAULT_BUDGET_STEPS)]
    pub budget_steps: u64,
}

/// A command failure with its exit status.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        CliError { code, message: message.into() }
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        CliError::new(e.exit_code(), e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(EXIT_CONFIG, e.to_string())
    }
}

type CliResult = Result<(), CliError>;

/// Parses `args` (program name first) and runs the command.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message);
            e.code
        }
    }
}

/// Log level chosen by `--verbose`.
pub fn log_level(args: &[String]) -> log::LevelFilter {
    if args.iter().any(|a| a == "-v" || a == "--verbose") {
        log::LevelFilter::Info
    } else {
        log::LevelFilter::Warn
    }
}

fn execute(cli: Cli, out: &mut dyn Write) -> CliResult {
    match cli.command {
        Command::Run(args) => cmd_run(args, out),
        Command::Transfer(args) => cmd_transfer(args, out),
        Command::Resume { run_dir } => {
            let state = resume_run(&run_dir)?;
            writeln!(out, "resumed {}: {} evaluations, best {:?}", run_dir.display(), state.evals_used, state.best_fitness())?;
            Ok(())
        }
        Command::Report { run_dir, baseline } => cmd_report(&run_dir, baseline.as_deref(), out),
        Command::Library { action } => cmd_library(action, out),
        Command::Evaluate(args) => cmd_evaluate(args, out),
        Command::Upsample { body, factor, out: path } => cmd_upsample(&body, factor, &path, out),
    }
}

fn base_config(o: &Overrides, default_scale: usize) -> Result<RunConfig, CliError> {
    let mut cfg = match &o.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            let task = o.task.as_deref().ok_or_else(|| CliError::new(EXIT_CONFIG, "--task or --config is required"))?;
            RunConfig::new(task, o.scale.unwrap_or(default_scale))
        }
    };
    if o.config.is_some() {
        if let Some(t) = &o.task {
            cfg.task = t.clone();
        }
        if let Some(s) = o.scale {
            cfg.scale = s;
        }
    }
    if let Some(b) = o.budget {
        cfg.budget = b;
    }
    if let Some(s) = o.seed {
        cfg.master_seed = s;
    }
    if let Some(e) = &o.evaluator {
        cfg.evaluator = e.clone();
    }
    if let Some(b) = &o.backend {
        cfg.backend = b.clone();
    }
    if let Some(p) = o.parallelism {
        cfg.parallelism = p;
    }
    cfg.ablations.no_diagnose |= o.no_diagnose;
    cfg.ablations.no_merge |= o.no_merge;
    cfg.ablations.pure_llm |= o.pure_llm;
    cfg.ablations.no_l2_l3 |= o.no_l2_l3;
    Ok(cfg)
}

fn finish_run(cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> CliResult {
    let state = start_run(dir, cfg)?;
    writeln!(
        out,
        "{} {} {}x{}: {} evaluations, best {}",
        dir.display(),
        cfg.task,
        cfg.scale,
        cfg.scale,
        state.evals_used,
        state.best_fitness().map_or("none".into(), |f| format!("{f:.4}"))
    )?;
    Ok(())
}

fn cmd_run(args: RunArgs, out: &mut dyn Write) -> CliResult {
    let mut cfg = base_config(&args.overrides, 5)?;
    if let Some(m) = args.mode {
        cfg.mode = match m {
            ModeArg::ColdStart => RunMode::ColdStart,
            ModeArg::GaOnly => RunMode::GaOnly,
        };
    }
    cfg.validate()?;
    let dir = &args.overrides.out;
    finish_run(&cfg, dir, out)?;
    if args.with_baseline && cfg.mode != RunMode::GaOnly {
        let mut ga = cfg.clone();
        ga.mode = RunMode::GaOnly;
        ga.ablations = Default::default();
        finish_run(&ga, &dir.join(BASELINE_DIR), out)?;
        cmd_report(dir, None, out)?;
    }
    Ok(())
}

fn cmd_transfer(args: TransferArgs, out: &mut dyn Write) -> CliResult {
    if !args.with_ref && !args.skill_only {
        return Err(CliError::new(EXIT_CONFIG, "transfer needs --with-ref or --skill-only"));
    }
    let source_lib = args.source.join(LIBRARY_FILE);
    if !source_lib.is_file() {
        return Err(CliError::new(EXIT_SOURCE_MISSING, format!("no {LIBRARY_FILE} in {}", args.source.display())));
    }
    let mut cfg = base_config(&args.overrides, 10)?;
    cfg.mode = if args.with_ref { RunMode::TransferWithRef } else { RunMode::TransferSkillOnly };
    cfg.source_run = Some(args.source.display().to_string());
    cfg.validate()?;
    finish_run(&cfg, &args.overrides.out, out)
}

fn read_curve(dir: &Path, budget: u64) -> Result<FitnessCurve, CliError> {
    let text = std::fs::read_to_string(dir.join(CURVE_FILE))
        .map_err(|e| CliError::new(EXIT_CONFIG, format!("{}: {e}", dir.join(CURVE_FILE).display())))?;
    FitnessCurve::from_csv(&text, budget).map_err(|e| CliError::new(EXIT_SCHEMA, e.to_string()))
}

/// Writes summary.csv and report.txt for `run_dir` and prints the table.
pub fn cmd_report(run_dir: &Path, baseline: Option<&Path>, out: &mut dyn Write) -> CliResult {
    let dir = RunDir::new(run_dir);
    let cfg = dir.config()?;
    let curve = read_curve(run_dir, cfg.budget)?;
    let default_baseline = run_dir.join(BASELINE_DIR);
    let baseline = baseline.map(Path::to_path_buf).or_else(|| default_baseline.is_dir().then_some(default_baseline));
    let row = match baseline {
        Some(b) => {
            let bcfg = RunDir::new(&b).config()?;
            let g = read_curve(&b, bcfg.budget)?;
            ReportRow::Compared(compare(&cfg.task, &curve, &g).map_err(|e| CliError::new(EXIT_SCHEMA, e.to_string()))?)
        }
        None => match curve.endpoint() {
            Ok(endpoint) => ReportRow::Single { task: cfg.task.clone(), endpoint },
            Err(e) => return Err(CliError::new(EXIT_SCHEMA, e.to_string())),
        },
    };
    let rows = [row];
    std::fs::write(dir.file(SUMMARY_FILE), summary_csv(&rows))?;
    let table = summary_table(&rows);
    std::fs::write(dir.file(REPORT_FILE), &table)?;
    write!(out, "{table}")?;
    Ok(())
}

fn load_library(path: &Path) -> Result<LibraryDocument, CliError> {
    let file = if path.is_dir() { path.join(LIBRARY_FILE) } else { path.to_path_buf() };
    if !file.is_file() {
        return Err(CliError::new(EXIT_CONFIG, format!("{} not found", file.display())));
    }
    let doc = LibraryDocument::load(&file).map_err(|e| CliError::new(EXIT_SCHEMA, e.to_string()))?;
    doc.validate().map_err(|e| CliError::new(EXIT_SCHEMA, e.to_string()))?;
    Ok(doc)
}

/// Per-skill table plus a `skills / positive / negative` totals row.
pub fn inspect_library(doc: &LibraryDocument) -> Result<String, CliError> {
    let lib = doc.clone().into_library().map_err(|e| CliError::new(EXIT_SCHEMA, e.to_string()))?;
    let mut text = format!("library {} {}x{}\n", lib.task, lib.scale, lib.scale);
    writeln!(text, "{:<28}{:<12}{:>5}{:>5}{:>6}{:>9}", "skill_id", "structure", "pos", "neg", "n_s", "weight").unwrap();
    for s in &lib.skills {
        writeln!(
            text,
            "{:<28}{:<12}{:>5}{:>5}{:>6}{:>9.4}",
            s.skill_id,
            s.l1.structure,
            s.l2.positive.len(),
            s.l2.negative.len(),
            s.l3.observations.len(),
            s.weight(DEFAULT_DELTA_MAX)
        )
        .unwrap();
        writeln!(text, "    L1: {}", s.l1.condition).unwrap();
    }
    writeln!(
        text,
        "total skills / positive / negative: {} / {} / {}",
        lib.skills.len(),
        lib.total_positive_leaves(),
        lib.total_negative_leaves()
    )
    .unwrap();
    writeln!(text, "unassigned pool: {}", lib.pool.len()).unwrap();
    Ok(text)
}

fn cmd_library(action: LibraryAction, out: &mut dyn Write) -> CliResult {
    match action {
        LibraryAction::Inspect { library } => {
            let doc = load_library(&library)?;
            write!(out, "{}", inspect_library(&doc)?)?;
        }
        LibraryAction::MergeDryRun { library, backend } => {
            let doc = load_library(&library)?;
            let lib = doc.into_library().map_err(|e| CliError::new(EXIT_SCHEMA, e.to_string()))?;
            let subs = Substitutions::new().text("skills_full_content", blocks::skills_full_content(&lib.skills));
            let views: Vec<SkillView> = lib.skills.iter().map(|s| SkillView::of(s, DEFAULT_DELTA_MAX, false)).collect();
            let req = render_prompt(TemplateId::Merge, &subs, 0)
                .map_err(|e| CliError::new(EXIT_CONFIG, e.to_string()))?
                .with_context(&MergeContext { skills: views });
            writeln!(out, "{}\n", req.rendered_text)?;
            let mut cfg = RunConfig::new(&lib.task, lib.scale);
            cfg.backend = backend;
            let backend = build_backend(&cfg)?;
            let resp = dispatch(&req, backend.as_ref()).map_err(|e| CliError::new(EXIT_UNAVAILABLE, e.to_string()))?;
            match validate_merge(resp.value()) {
                Ok(clusters) if clusters.is_empty() => writeln!(out, "proposed clusters: none")?,
                Ok(clusters) => {
                    writeln!(out, "proposed clusters (not applied):")?;
                    for c in clusters {
                        writeln!(out, "  {} <- {}", c.group_label, c.skill_ids.join(", "))?;
                    }
                }
                Err(e) => writeln!(out, "merge response rejected: {e}")?,
            }
        }
        LibraryAction::Export { library, out: path } => {
            let doc = load_library(&library)?;
            let lib = doc.into_library().map_err(|e| CliError::new(EXIT_SCHEMA, e.to_string()))?;
            let exported = export_for_transfer(&lib);
            exported.save(&path)?;
            writeln!(out, "exported {} skills to {}", exported.skills.len(), path.display())?;
        }
    }
    Ok(())
}

/// Reads a body file: a JSON matrix, or an object with a `body` matrix.
pub fn read_body(path: &Path) -> Result<Body, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::new(EXIT_CONFIG, format!("{}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::new(EXIT_CONFIG, format!("{}: {e}", path.display())))?;
    let matrix = value.get("body").cloned().unwrap_or(value);
    serde_json::from_value(matrix).map_err(|e| CliError::new(EXIT_CONFIG, format!("{}: {e}", path.display())))
}

fn cmd_evaluate(args: EvaluateArgs, out: &mut dyn Write) -> CliResult {
    let body = read_body(&args.body)?;
    let report = check_validity(&body);
    if !report.is_valid {
        return Err(CliError::new(EXIT_CONFIG, format!("body is not valid: {}", serde_json::to_string(&report).unwrap())));
    }
    let evaluator = build_evaluator(&args.evaluator, Duration::from_secs(3600))?;
    let req = EvalRequest {
        request_id: "cli".into(),
        scale: body.size(),
        task: env_id(&args.task, body.size()),
        controller_seed: stream_seed(args.seed, STREAM_EVALUATOR, &[1]),
        budget_steps: args.budget_steps,
        body,
    };
    let result = evaluator.evaluate(&req);
    writeln!(out, "{}", serde_json::to_string(&result).expect("result serializes"))?;
    if result.fitness.is_none() {
        return Err(CliError::new(EXIT_UNAVAILABLE, result.error.unwrap_or_else(|| "evaluation failed".into())));
    }
    Ok(())
}

fn cmd_upsample(path: &Path, factor: usize, dest: &Path, out: &mut dyn Write) -> CliResult {
    if factor == 0 {
        return Err(CliError::new(EXIT_CONFIG, "factor must be at least 1"));
    }
    let body = read_body(path)?;
    let tiled = upsample_tiling(&body, factor);
    std::fs::write(dest, tiled.to_json_string() + "\n")?;
    writeln!(out, "source {}x{}: {}", body.size(), body.size(), serde_json::to_string(&check_validity(&body)).unwrap())?;
    writeln!(out, "tiled {}x{}: {}", tiled.size(), tiled.size(), serde_json::to_string(&check_validity(&tiled)).unwrap())?;
    writeln!(out, "wrote {}", dest.display())?;
    Ok(())
}
