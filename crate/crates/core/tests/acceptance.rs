//! Acceptance suite. Runs every criterion at its stated tolerance and
//! runtime limit, prints one PASS/FAIL line per criterion, and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::time::{Duration, Instant};

use morphoskill::eval::SurrogateEvaluator;
use morphoskill::llm::{HeuristicBackend, PromptAudit};
use morphoskill::metrics::{compare, lead_fraction, speedup, summary_table, FitnessCurve, ReportRow};
use morphoskill::search::{
    comparable_payload, read_run_log, run, start_run, RunConfig, RunMode, RUN_LOG_FILE,
};
use morphoskill::skill::{
    export_for_transfer, import_for_transfer, skill_weight, update_rule_mean, LibraryDocument, ProposalPath, Skill,
    SkillLibrary,
};
use morphoskill::voxel::{check_validity, is_valid, random_valid_body, upsample_tiling, Body};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// Frozen ledger of the scripted maintenance sequence, computed once by the
// ledger model in tests/common and checked against the library here.
const FROZEN_SKILLS: usize = 8;
const FROZEN_OBSERVATIONS: usize = 400;
const FROZEN_POSITIVE_LEAVES: usize = 71;
const FROZEN_NEGATIVE_LEAVES: usize = 79;

fn weight_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xE2);
    let delta_max = 2.0;
    for i in 0..1000 {
        let n = rng.random_range(0..=50);
        let gains: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..=5.0)).collect();
        let mut skill = Skill::new("probe_skill", vec!["Walker".into()], "frame", "probe");
        for (k, g) in gains.iter().enumerate() {
            skill.push_observation(common::observation(k as u64 + 1, 1, *g));
        }
        let mut clipped = 0.0;
        for g in &gains {
            clipped += (g / delta_max).max(0.0).min(1.0);
        }
        let oracle = (1.0 + clipped) / (2.0 + n as f64);
        let w = skill_weight(&skill, delta_max);
        ensure(w == oracle, || format!("skill {i}: weight {w} != oracle {oracle}"))?;
        ensure(w > 0.0 && w <= 1.0, || format!("skill {i}: weight {w} outside (0, 1]"))?;
        if n == 0 {
            ensure(w == 0.5, || format!("empty skill weight {w}"))?;
        }
    }
    let empty = Skill::new("empty_skill", vec![], "frame", "probe");
    ensure(skill_weight(&empty, delta_max) == 0.5, || "n_s = 0 is not 0.5".into())?;
    Ok("1000 skills match the direct formula exactly".into())
}

fn rule_mean_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xE3);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let len = rng.random_range(1..=200);
        let gains: Vec<f64> = (0..len).map(|_| rng.random_range(-5.0..=5.0)).collect();
        let (mut m, mut mean) = (0, 0.0);
        for g in &gains {
            (m, mean) = update_rule_mean(m, mean, *g);
        }
        let oracle = gains.iter().sum::<f64>() / len as f64;
        worst = worst.max((mean - oracle).abs());
        ensure(m == len && (mean - oracle).abs() <= 1e-9, || format!("sequence {i}: {mean} vs {oracle}"))?;
    }
    Ok(format!("1000 sequences, max error {worst:.1e}"))
}

fn validity_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA1);
    let mut valid = 0;
    for (n, count) in [(5usize, 10_000usize), (10, 2_000)] {
        for i in 0..count {
            let grid = common::random_grid(&mut rng, n, 5);
            let body = Body::from_rows(grid.clone()).unwrap();
            let got = check_validity(&body).is_valid;
            let want = common::oracle_valid(&grid);
            ensure(got == want, || format!("{n}x{n} grid {i}: check_validity {got}, oracle {want}: {grid:?}"))?;
            valid += got as usize;
        }
    }
    // Legal-code grids at mixed densities exercise the connectivity branch.
    for i in 0..10_000 {
        let fill = rng.random_range(0.3..0.95);
        let grid: Vec<Vec<i64>> = (0..5)
            .map(|_| (0..5).map(|_| if rng.random_bool(fill) { rng.random_range(1..=4) } else { 0 }).collect())
            .collect();
        let body = Body::from_rows(grid.clone()).unwrap();
        let (got, want) = (check_validity(&body).is_valid, common::oracle_valid(&grid));
        ensure(got == want, || format!("legal grid {i}: check_validity {got}, oracle {want}: {grid:?}"))?;
        valid += got as usize;
    }
    Ok(format!("12000 uniform + 10000 legal-code grids agree ({valid} valid)"))
}

fn upsampling_control() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x2E);
    for i in 0..1000 {
        let b = random_valid_body(5, &mut rng);
        let t = upsample_tiling(&b, 2);
        ensure(t.size() == 10 && is_valid(&t), || format!("body {i} tiled to an invalid body"))?;
        for r in 0..10 {
            for c in 0..10 {
                ensure(t.get(r, c) == b.get(r / 2, c / 2), || format!("body {i}: cell ({r},{c}) mismatched"))?;
            }
        }
    }
    Ok("1000 tiled bodies valid, cells follow floor division".into())
}

/// Counts eval indices where `a` is strictly ahead, by direct scan.
fn brute_force_ahead(a: &[(u64, f64)], g: &[(u64, f64)], budget: u64) -> usize {
    let at = |pts: &[(u64, f64)], e: u64| pts.iter().filter(|p| p.0 <= e).last().map(|p| p.1);
    (1..=budget).filter(|&e| matches!((at(a, e), at(g, e)), (Some(x), Some(y)) if x > y)).count()
}

fn metrics_fixtures() -> Outcome {
    let c = |p: &[(u64, f64)], b| FitnessCurve::new(p.to_vec(), b).map_err(|e| e.to_string());
    let ga = c(&[(1, 1.0), (40, 3.0), (80, 5.0)], 100)?;
    let ar = c(&[(1, 2.0), (40, 5.0), (90, 6.0)], 100)?;
    let s = speedup(&ar, &ga).map_err(|e| e.to_string())?;
    ensure(s == Some(2.0), || format!("S = {s:?}, want 2.0"))?;
    ensure(speedup(&ga, &ga).unwrap() == Some(1.0), || "identical curves: S != 1".into())?;
    let low = c(&[(1, 1.0), (60, 4.0)], 100)?;
    ensure(speedup(&low, &ga).unwrap().is_none(), || "unreached target gave a speedup".into())?;
    ensure(lead_fraction(&ga, &ga).unwrap() == 0.0, || "identical curves: L != 0".into())?;

    let (gp, ap) = (vec![(1, 2.0)], vec![(1, 1.0), (41, 2.5)]);
    let ahead = brute_force_ahead(&ap, &gp, 100);
    ensure(ahead == 60, || format!("fixture is ahead at {ahead} indices, want 60"))?;
    let l = lead_fraction(&c(&ap, 100)?, &c(&gp, 100)?).unwrap();
    ensure(l == 0.6, || format!("L = {l}, want 0.6"))?;
    let last = lead_fraction(&c(&[(1, 1.0), (100, 2.0)], 100)?, &c(&[(1, 1.0)], 100)?).unwrap();
    ensure(last == 1.0 / 100.0, || format!("single-point lead L = {last}"))?;

    let pusher_ga = c(&[(1, 2.0), (500, 8.45)], 750)?;
    let pusher_ar = c(&[(1, 3.0), (300, 9.87)], 750)?;
    let summary = compare("Pusher", &pusher_ar, &pusher_ga).unwrap();
    ensure(summary.delta == 9.87 - 8.45, || format!("delta {} is not exact", summary.delta))?;
    let table = summary_table(&[ReportRow::from(summary)]);
    ensure(table.contains("+1.42"), || format!("table row lacks +1.42:\n{table}"))?;
    ensure(ar.densify().unwrap()[99] == Some(6.0), || "densify(B) is not the endpoint".into())?;
    Ok("S 2.0/1.0/null, L 0/0.6/1/B, Pusher delta +1.42".into())
}

fn library_conservation() -> Outcome {
    let out = common::run_scripted_maintenance();
    let got = common::library_ledger(&out.library);
    ensure(got == out.expected, || format!("library {got:?}\nledger {:?}", out.expected))?;
    let e = &out.expected;
    ensure(e.observations_in_skills + e.pool == FROZEN_OBSERVATIONS, || "observations were lost".into())?;
    ensure(
        (e.skills, e.positive_leaves, e.negative_leaves) == (FROZEN_SKILLS, FROZEN_POSITIVE_LEAVES, FROZEN_NEGATIVE_LEAVES),
        || format!("ledger drifted from the frozen values: {} / {} / {}", e.skills, e.positive_leaves, e.negative_leaves),
    )?;
    for s in &out.library.skills {
        for leaf in s.leaves() {
            ensure(leaf.support_count == leaf.supporting_obs_ids.len(), || {
                format!("{}/{}: support {} vs {} ids", s.skill_id, leaf.leaf_id, leaf.support_count, leaf.supporting_obs_ids.len())
            })?;
        }
    }
    ensure(out.adds_per_generation.iter().all(|&a| a <= 1), || "more than one Add in a generation".into())?;
    ensure(out.second_add_rejections > 0, || "second Add never attempted".into())?;
    ensure(out.add_born_empty, || "an Add-created skill was born with L2 or L3 content".into())?;
    Ok(format!(
        "{} skills, {} observations ({} pooled), {} / {} leaves",
        e.skills, FROZEN_OBSERVATIONS, e.pool, e.positive_leaves, e.negative_leaves
    ))
}

fn check_import(lib: &SkillLibrary) -> Result<(), String> {
    let doc = export_for_transfer(lib);
    let text = serde_json::to_string(&doc).unwrap();
    let back: LibraryDocument = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let imported = import_for_transfer(&back).map_err(|e| e.to_string())?;
    ensure(imported.total_observations() == 0 && imported.pool.is_empty(), || "import kept observations".into())?;
    for (src, dst) in lib.skills.iter().zip(&imported.skills) {
        let texts = |s: &Skill| s.leaves().map(|l| (l.polarity, l.claim.clone(), l.description.clone())).collect::<Vec<_>>();
        ensure(texts(src) == texts(dst), || format!("{}: leaf texts changed", src.skill_id))?;
        ensure(skill_weight(dst, 2.0) == 0.5, || format!("{}: imported weight is not 0.5", dst.skill_id))?;
    }
    Ok(())
}

fn transfer_contract() -> Outcome {
    check_import(&common::run_scripted_maintenance().library)?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let src = tmp.path().join("source");
    let mut cfg = RunConfig::new("Walker", 5);
    cfg.master_seed = 7;
    let source = start_run(&src, &cfg).map_err(|e| e.to_string())?;
    ensure(!source.library.skills.is_empty(), || "source run built no skills".into())?;
    check_import(&source.library)?;

    let mut t = RunConfig::new("Walker", 10);
    t.mode = RunMode::TransferWithRef;
    t.source_run = Some(src.display().to_string());
    t.budget = 150;
    t.master_seed = 7;
    let dst = tmp.path().join("target");
    start_run(&dst, &t).map_err(|e| e.to_string())?;
    let imported: BTreeSet<String> = source.library.skills.iter().map(|s| s.skill_id.clone()).collect();
    let records = read_run_log(&dst).map_err(|e| e.to_string())?;
    let early: Vec<_> = records
        .iter()
        .filter(|r| r.generation <= 4)
        .flat_map(|r| &r.slots)
        .filter(|s| s.path == ProposalPath::A && !s.fallback)
        .collect();
    ensure(!early.is_empty(), || "no Path A slots in generations 0-4".into())?;
    for s in &early {
        let id = s.skill_id.clone().unwrap_or_default();
        ensure(imported.contains(&id), || format!("eval {} used non-imported skill `{id}`", s.eval_index))?;
    }
    Ok(format!("{} early Path A slots, all on imported skills", early.len()))
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = RunConfig::new("Walker", 5);
    cfg.evaluator = "surrogate:walker_like".into();
    cfg.budget = 100;
    cfg.master_seed = 42;
    let read = |p: &Path| -> Result<Vec<String>, String> {
        std::fs::read_to_string(p.join(RUN_LOG_FILE))
            .map_err(|e| e.to_string())?
            .lines()
            .map(|l| comparable_payload(l).map_err(|e| e.to_string()))
            .collect()
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    start_run(&a, &cfg).map_err(|e| e.to_string())?;
    start_run(&b, &cfg).map_err(|e| e.to_string())?;
    let (la, lb) = (read(&a)?, read(&b)?);
    ensure(la.len() == 4, || format!("{} log lines, want 4", la.len()))?;
    ensure(la == lb, || "comparable payloads differ".into())?;
    cfg.master_seed = 43;
    let c = tmp.path().join("c");
    start_run(&c, &cfg).map_err(|e| e.to_string())?;
    ensure(read(&c)? != la, || "a different seed produced the same run".into())?;
    Ok("two runs byte-identical over 4 generations".into())
}

fn efficacy() -> Outcome {
    let (mut wins, mut leads) = (0, 0);
    let mut detail = Vec::new();
    for seed in 0..10 {
        let mut cfg = RunConfig::new("Walker", 5);
        cfg.budget = 100;
        cfg.master_seed = seed;
        let backend = HeuristicBackend::new();
        let (a, _) = run(&cfg, None, Some(&backend), &SurrogateEvaluator::default(), &PromptAudit::disabled())
            .map_err(|e| e.to_string())?;
        cfg.mode = RunMode::GaOnly;
        let (g, _) = run(&cfg, None, None, &SurrogateEvaluator::default(), &PromptAudit::disabled())
            .map_err(|e| e.to_string())?;
        let ca = FitnessCurve::new(a.best_curve, 100).map_err(|e| e.to_string())?;
        let cg = FitnessCurve::new(g.best_curve, 100).map_err(|e| e.to_string())?;
        let l = lead_fraction(&ca, &cg).map_err(|e| e.to_string())?;
        wins += (ca.endpoint().unwrap() >= cg.endpoint().unwrap()) as usize;
        leads += (l > 0.5) as usize;
        detail.push(format!("{:+.2}", ca.endpoint().unwrap() - cg.endpoint().unwrap()));
    }
    ensure(wins >= 7 && leads >= 6, || format!("endpoint wins {wins}/10, L > 0.5 in {leads}/10"))?;
    Ok(format!("endpoint >= GA in {wins}/10, L > 0.5 in {leads}/10 (deltas {})", detail.join(" ")))
}

fn ablation_wiring() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let go = |name: &str, f: &dyn Fn(&mut RunConfig)| -> Result<std::path::PathBuf, String> {
        let mut cfg = RunConfig::new("Walker", 5);
        cfg.master_seed = 3;
        f(&mut cfg);
        let dir = tmp.path().join(name);
        start_run(&dir, &cfg).map_err(|e| e.to_string())?;
        Ok(dir)
    };
    let lib = |dir: &Path| LibraryDocument::load(&dir.join("library.json")).unwrap().into_library().unwrap();

    let base = go("default", &|_| {})?;
    ensure(lib(&base).total_leaves() > 0, || "control run formed no L2 rules".into())?;
    ensure(
        common::propose_prompts(&base).iter().any(|p| p.contains("leaf_id=pos_") || p.contains("child_fitness=")),
        || "control Propose prompts show no L2/L3 content".into(),
    )?;

    let nd = go("no_diagnose", &|c| c.ablations.no_diagnose = true)?;
    let l = lib(&nd);
    ensure(!l.skills.is_empty() && l.total_leaves() == 0, || format!("no_diagnose: {} leaves", l.total_leaves()))?;

    let nm = go("no_merge", &|c| c.ablations.no_merge = true)?;
    let counts: Vec<usize> = read_run_log(&nm)
        .map_err(|e| e.to_string())?
        .iter()
        .filter_map(|r| r.maintenance.as_ref().map(|m| m.skills_after))
        .collect();
    ensure(counts.windows(2).all(|w| w[1] >= w[0]), || format!("no_merge skill counts shrank: {counts:?}"))?;
    ensure(
        !common::prompt_records(&nm).iter().any(|r| r["op_kind"] == "merge"),
        || "no_merge still issued Merge calls".into(),
    )?;

    let pl = go("pure_llm", &|c| c.ablations.pure_llm = true)?;
    let rows: Vec<_> = read_run_log(&pl).map_err(|e| e.to_string())?.into_iter().flat_map(|r| r.slots).collect();
    let b_rows = rows.iter().filter(|s| s.path == ProposalPath::B).count();
    ensure(rows.len() == 250 && b_rows == 0, || format!("pure_llm: {b_rows} Path B rows of {}", rows.len()))?;

    let nl = go("no_l2l3", &|c| c.ablations.no_l2_l3 = true)?;
    let prompts = common::propose_prompts(&nl);
    ensure(!prompts.is_empty(), || "no_l2_l3 run issued no Propose prompts".into())?;
    let leaked = prompts
        .iter()
        .filter(|p| p.contains("leaf_id=pos_") || p.contains("leaf_id=neg_") || p.contains("child_fitness="))
        .count();
    ensure(leaked == 0, || format!("{leaked} Propose prompts carry L2/L3 blocks"))?;
    ensure(lib(&nl).total_leaves() > 0, || "no_l2_l3 stopped maintenance".into())?;
    Ok(format!("4 ablations wired; {} Propose prompts audited", prompts.len()))
}

struct Criterion {
    name: &'static str,
    limit: Duration,
    check: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { name: "skill weight formula", limit: Duration::from_secs(1), check: weight_suite },
        Criterion { name: "rule running mean", limit: Duration::from_secs(1), check: rule_mean_suite },
        Criterion { name: "validity oracle", limit: Duration::from_secs(5), check: validity_oracle },
        Criterion { name: "upsampling control", limit: Duration::from_secs(2), check: upsampling_control },
        Criterion { name: "metrics fixtures", limit: Duration::from_secs(1), check: metrics_fixtures },
        Criterion { name: "library conservation", limit: Duration::from_secs(5), check: library_conservation },
        Criterion { name: "transfer contract", limit: Duration::from_secs(10), check: transfer_contract },
        Criterion { name: "determinism", limit: Duration::from_secs(30), check: determinism },
        Criterion { name: "end-to-end efficacy", limit: Duration::from_secs(300), check: efficacy },
        Criterion { name: "ablation wiring", limit: Duration::from_secs(120), check: ablation_wiring },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.check)();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(d) if took > c.limit => Err(format!("{d}; took {took:.2?}, limit {:?}", c.limit)),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {:<22} {:>9.2?}  {detail}", c.name, took),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:<22} {:>9.2?}  {why}", c.name, took);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
