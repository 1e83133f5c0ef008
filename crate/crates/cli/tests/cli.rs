use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use swarmdesk_core::execution::Outcome;
use swarmdesk_core::persistence::{ConsensusRecord, Query, ResolutionRecord, Store};
use swarmdesk_core::synthetic::{drifting_frames, scanner_corpus, write_fixture, CorpusParams};

fn personas() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/personas.json")
}

fn swarmdesk(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_swarmdesk"));
    cmd.env_clear().env("RUST_LOG", "warn").args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn line_for<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find(|l| l.starts_with(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing"))
}

#[test]
fn check_config_prints_defaults() {
    let out = swarmdesk(&["check-config"], &[]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(line_for(&text, "KELLY_FRACTION"), "KELLY_FRACTION=0.25");
    assert_eq!(line_for(&text, "MIN_EV"), "MIN_EV=0.05");
    assert_eq!(line_for(&text, "MAX_STDDEV"), "MAX_STDDEV=0.30");
    assert_eq!(line_for(&text, "AGENTS_PER_MARKET"), "AGENTS_PER_MARKET=25");
    assert_eq!(line_for(&text, "MAX_POSITION_USDC"), "MAX_POSITION_USDC=10");
}

#[test]
fn flag_beats_env_beats_file() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("desk.conf");
    std::fs::write(&file, "# overrides\nKELLY_FRACTION = 0.1\nMIN_EV = 0.06\nMAX_STDDEV = 0.2\n").unwrap();
    let out = swarmdesk(
        &["--config", file.to_str().unwrap(), "check-config", "--kelly-fraction", "0.3"],
        &[("KELLY_FRACTION", "0.2"), ("MIN_EV", "0.07")],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(line_for(&text, "KELLY_FRACTION"), "KELLY_FRACTION=0.3");
    assert_eq!(line_for(&text, "MIN_EV"), "MIN_EV=0.07");
    assert_eq!(line_for(&text, "MAX_STDDEV"), "MAX_STDDEV=0.2");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = swarmdesk(&["check-config", "--kelly-fractoin", "0.3"], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_value_is_a_usage_error() {
    let out = swarmdesk(&["check-config", "--kelly-fraction", "lots"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("KELLY_FRACTION"));
}

#[test]
fn missing_persona_file_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = swarmdesk(
        &["run", "--no-server", "--store-path", "memory", "--max-cycles", "1"],
        &[("PERSONA_POOL_PATH", missing.to_str().unwrap())],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
}

#[test]
fn run_then_replay_then_evaluate_matches() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = scanner_corpus(&CorpusParams::default());
    let fixture = dir.path().join("markets.jsonl");
    write_fixture(&fixture, &drifting_frames(&corpus.markets[..40], 3, 5_000, 0.05, 11)).unwrap();
    let store_a = dir.path().join("a");
    let store_b = dir.path().join("b");
    let pool = personas();
    let env = [
        ("MARKET_SOURCE", fixture.to_str().unwrap()),
        ("PERSONA_POOL_PATH", pool.to_str().unwrap()),
        ("SCAN_INTERVAL_SECS", "0.2"),
    ];
    let run = stdout_json(&swarmdesk(
        &["run", "--no-server", "--max-cycles", "3", "--store-path", store_a.to_str().unwrap()],
        &env,
    ));
    assert_eq!(run["cycles"], 3);

    // settle every evaluated market so there is something to score
    {
        let store = Store::open_dir(&store_a).unwrap();
        let consensus: Vec<ConsensusRecord> = store.query_typed(&Query::all()).unwrap();
        let mut ids: Vec<_> = consensus.iter().map(|c| c.consensus.market_id.clone()).collect();
        ids.sort();
        ids.dedup();
        assert!(!ids.is_empty());
        let last = consensus.iter().map(|c| c.at).max().unwrap();
        for (i, id) in ids.iter().enumerate() {
            let outcome = if i % 3 == 0 { Outcome::No } else { Outcome::Yes };
            store
                .append(&ResolutionRecord {
                    market_id: id.clone(),
                    outcome,
                    resolved_at: last + 1,
                    operator: "test".into(),
                })
                .unwrap();
        }
    }

    let live = stdout_json(&swarmdesk(&["evaluate", "--source", "combined"], &[("STORE_PATH", store_a.to_str().unwrap())]));
    let replay = stdout_json(&swarmdesk(
        &["replay", "--into", store_b.to_str().unwrap()],
        &[("STORE_PATH", store_a.to_str().unwrap())],
    ));
    assert_eq!(replay["last_cycle"], 3);
    assert!(replay["conservation_gap"].as_f64().unwrap().abs() < 1e-9);
    let again = stdout_json(&swarmdesk(&["evaluate", "--source", "combined"], &[("STORE_PATH", store_b.to_str().unwrap())]));
    assert!(live["n"].as_u64().unwrap() > 0);
    assert_eq!(live, again);

    let csv = dir.path().join("cal.csv");
    let out = swarmdesk(
        &["evaluate", "--source", "swarm", "--bins", "5", "--csv", csv.to_str().unwrap()],
        &[("STORE_PATH", store_b.to_str().unwrap())],
    );
    stdout_json(&out);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("lo,hi,mean_forecast,empirical_frequency,count"));
    assert_eq!(text.lines().count(), 6);

    let export = stdout_json(&swarmdesk(
        &["export", "--out", dir.path().join("x").to_str().unwrap()],
        &[("STORE_PATH", store_b.to_str().unwrap())],
    ));
    assert_eq!(export["rows"]["cycles"], 3);

    let compact = stdout_json(&swarmdesk(
        &["compact", "--horizon-days", "0", "--archive", dir.path().join("arch").to_str().unwrap()],
        &[("STORE_PATH", store_b.to_str().unwrap())],
    ));
    assert!(compact["moved"].as_u64().unwrap() > 0);
}

#[test]
fn evaluate_without_resolutions_fails_cleanly() {
    let out = swarmdesk(&["evaluate"], &[("STORE_PATH", "memory")]);
    assert_eq!(out.status.code(), Some(1));
}
