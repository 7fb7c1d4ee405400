//! A complete cold-start run on the surrogate evaluator with the heuristic
//! backend, written to a run directory.
//!
//! `cargo run --example full_run -- [run_dir] [task]`

use std::path::PathBuf;

use morphoskill::search::{read_run_log, start_run, RunConfig, REPORT_FILE};
use morphoskill::skill::ProposalPath;

fn main() {
    let mut args = std::env::args().skip(1);
    let tmp = tempfile::tempdir().unwrap();
    let dir = args.next().map(PathBuf::from).unwrap_or_else(|| tmp.path().join("run"));
    let task = args.next().unwrap_or_else(|| "Walker".into());
    let mut cfg = RunConfig::new(&task, 5);
    cfg.master_seed = 1;
    let state = start_run(&dir, &cfg).unwrap();

    for rec in read_run_log(&dir).unwrap() {
        let a = rec.slots.iter().filter(|s| s.path == ProposalPath::A && !s.fallback).count();
        let m = rec.maintenance.as_ref();
        println!(
            "gen {:>2}  evals {:>4}  best {:>7.3}  path A {:>2}  skills {:>2}  leaves +{}/-{}  pool {}",
            rec.generation,
            rec.evals_used,
            rec.best_fitness.unwrap_or(f64::NAN),
            a,
            m.map_or(0, |m| m.skills_after),
            m.map_or(0, |m| m.positive_leaves_after),
            m.map_or(0, |m| m.negative_leaves_after),
            m.map_or(0, |m| m.pool_after),
        );
    }
    let best = state.best().unwrap();
    println!("\nbest body (eval {}, fitness {:.3}):\n{}", best.eval_index, best.fitness.unwrap(), best.body.render());
    for s in &state.library.skills {
        println!("{:<24} {:<10} leaves {:>2}  obs {:>3}  {}", s.skill_id, s.l1.structure, s.leaf_count(), s.l3.observations.len(), s.l1.condition);
    }
    print!("\n{}", std::fs::read_to_string(dir.join(REPORT_FILE)).unwrap());
    println!("artifacts in {}", dir.display());
}
