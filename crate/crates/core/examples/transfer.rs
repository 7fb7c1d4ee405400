//! Transfer from a finished 5x5 run to the 10x10 grid: skills are imported
//! with their rules but no observations, and early generations sample only
//! imported skills.

use morphoskill::search::{load_source, read_run_log, start_run, RunConfig, RunMode};
use morphoskill::skill::{export_for_transfer, import_for_transfer, ProposalPath};

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("walker_5x5");
    let mut cfg = RunConfig::new("Walker", 5);
    cfg.master_seed = 2;
    let source = start_run(&src, &cfg).unwrap();
    let doc = export_for_transfer(&source.library);
    let imported = import_for_transfer(&doc).unwrap();
    println!("source library: {} skills, {} observations", source.library.skills.len(), source.library.total_observations());
    for s in &imported.skills {
        println!("  imported {:<22} leaves {:>2}  weight {:.4}", s.skill_id, s.leaf_count(), s.weight(2.0));
    }
    println!("reference designs available: {}", load_source(&src).unwrap().elites.len());

    for (mode, name) in [(RunMode::TransferSkillOnly, "skill_only"), (RunMode::TransferWithRef, "with_ref")] {
        let mut t = RunConfig::new("Walker", 10);
        t.mode = mode;
        t.source_run = Some(src.display().to_string());
        t.budget = 250;
        t.master_seed = 2;
        let dir = tmp.path().join(name);
        let state = start_run(&dir, &t).unwrap();
        println!("\n{name}: best {:.3}", state.best_fitness().unwrap());
        for rec in read_run_log(&dir).unwrap() {
            let used: std::collections::BTreeSet<&str> = rec
                .slots
                .iter()
                .filter(|s| s.path == ProposalPath::A && !s.fallback)
                .filter_map(|s| s.skill_id.as_deref())
                .collect();
            let fresh = used.iter().filter(|id| !imported.skills.iter().any(|s| &s.skill_id == *id)).count();
            println!("  gen {:>2}: {} skills sampled, {} created in this run", rec.generation, used.len(), fresh);
        }
    }
}
