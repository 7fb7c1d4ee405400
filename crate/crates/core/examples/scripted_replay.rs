//! Recording every backend reply of a run as fixture files and replaying
//! them with the scripted backend reproduces the run exactly.

use std::fs;

use morphoskill::llm::AuditRecord;
use morphoskill::search::{comparable_payload, start_run, RunConfig, PROMPT_LOG_FILE, RUN_LOG_FILE};

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let (live, replay, fixtures) = (tmp.path().join("live"), tmp.path().join("replay"), tmp.path().join("fixtures"));
    let mut cfg = RunConfig::new("Carrier", 5);
    cfg.budget = 100;
    cfg.master_seed = 9;
    start_run(&live, &cfg).unwrap();

    fs::create_dir_all(&fixtures).unwrap();
    let log = fs::read_to_string(live.join(PROMPT_LOG_FILE)).unwrap();
    let mut count = 0;
    for line in log.lines() {
        let rec: AuditRecord = serde_json::from_str(line).unwrap();
        let name = format!("{}_{}_{}.txt", rec.op_kind.name(), rec.generation, rec.ordinal);
        fs::write(fixtures.join(name), rec.response.unwrap_or_default()).unwrap();
        count += 1;
    }
    println!("wrote {count} fixtures");

    cfg.backend = format!("scripted:{}", fixtures.display());
    start_run(&replay, &cfg).unwrap();
    let payloads = |d: &std::path::Path| -> Vec<String> {
        fs::read_to_string(d.join(RUN_LOG_FILE)).unwrap().lines().map(|l| comparable_payload(l).unwrap()).collect()
    };
    let same = payloads(&live) == payloads(&replay);
    println!("replayed run identical to live run: {same}");
    assert!(same);
}
