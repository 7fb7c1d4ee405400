//! The four ablation switches against a default run on the same seed.

use morphoskill::eval::SurrogateEvaluator;
use morphoskill::llm::{HeuristicBackend, PromptAudit};
use morphoskill::search::{run, RunConfig};
use morphoskill::skill::ProposalPath;

fn main() {
    let variants: [(&str, fn(&mut RunConfig)); 5] = [
        ("default", |_| {}),
        ("no_diagnose", |c| c.ablations.no_diagnose = true),
        ("no_merge", |c| c.ablations.no_merge = true),
        ("pure_llm", |c| c.ablations.pure_llm = true),
        ("no_l2l3", |c| c.ablations.no_l2_l3 = true),
    ];
    println!("{:<12} {:>8} {:>7} {:>7} {:>7} {:>7}", "variant", "best", "skills", "leaves", "merges", "path B");
    for (name, apply) in variants {
        let mut cfg = RunConfig::new("Walker", 5);
        cfg.master_seed = 4;
        apply(&mut cfg);
        let (state, records) =
            run(&cfg, None, Some(&HeuristicBackend::new()), &SurrogateEvaluator::default(), &PromptAudit::disabled()).unwrap();
        let merges: usize = records.iter().filter_map(|r| r.maintenance.as_ref()).map(|m| m.merged.len()).sum();
        let path_b = records.iter().flat_map(|r| &r.slots).filter(|s| s.path == ProposalPath::B).count();
        println!(
            "{:<12} {:>8.3} {:>7} {:>7} {:>7} {:>7}",
            name,
            state.best_fitness().unwrap(),
            state.library.skills.len(),
            state.library.total_leaves(),
            merges,
            path_b
        );
    }
}
