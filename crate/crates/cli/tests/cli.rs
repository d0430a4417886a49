use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const WORLD: &str = r#"{"seed": 3, "n_players": 120, "solo_matches_per_player": 100,
    "team_matches_per_player": 80, "activity_sd": 0.5, "premade_prob": 0.3}"#;

const TABLES: [&str; 14] = [
    "bandwidth.csv",
    "descriptives.csv",
    "facets.csv",
    "ks.csv",
    "mem.csv",
    "model.json",
    "position.csv",
    "s1_suite.csv",
    "s2_suite.csv",
    "scaler.json",
    "splits.csv",
    "tau_sweep.csv",
    "threshold.csv",
    "tp.csv",
];

fn teamlens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_teamlens"))
        .args(args)
        .output()
        .expect("spawn teamlens")
}

fn ok(args: &[&str]) -> String {
    let out = teamlens(args);
    assert!(
        out.status.success(),
        "teamlens {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulated log plus a run configuration pointing at it.
fn setup(dir: &Path) -> (String, String) {
    let world = dir.join("world.json");
    fs::write(&world, WORLD).unwrap();
    let log = dir.join("matches.jsonl");
    ok(&["simulate", "--world", s(&world), "--out", s(&log), "--truth", s(&dir.join("truth"))]);
    let cfg = dir.join("run.json");
    fs::write(
        &cfg,
        format!(
            r#"{{"input": "{}", "out_dir": "{}", "tau": 20, "sweep": "2:40:4"}}"#,
            s(&log),
            s(&dir.join("full"))
        ),
    )
    .unwrap();
    (cfg.display().to_string(), dir.join("full").display().to_string())
}

#[test]
fn simulate_pipeline_report() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, full) = setup(tmp.path());
    assert!(tmp.path().join("truth/players.csv").exists());
    assert!(tmp.path().join("truth/matches.csv").exists());

    ok(&["--config", &cfg, "pipeline"]);
    let full = Path::new(&full);
    for t in TABLES {
        assert!(full.join(t).exists(), "missing {t}");
    }
    let first: Vec<Vec<u8>> = TABLES.iter().map(|t| fs::read(full.join(t)).unwrap()).collect();
    let manifest = fs::read(full.join("manifest.json")).unwrap();

    ok(&["--config", &cfg, "pipeline"]);
    let second: Vec<Vec<u8>> = TABLES.iter().map(|t| fs::read(full.join(t)).unwrap()).collect();
    assert_eq!(first, second);
    assert_eq!(manifest, fs::read(full.join("manifest.json")).unwrap());

    let summary = ok(&["report", s(full)]);
    assert!(summary.contains("S1.3"), "{summary}");
    assert!(summary.contains("S2.4"), "{summary}");
}

#[test]
fn staged_commands_match_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, full) = setup(tmp.path());
    ok(&["--config", &cfg, "pipeline"]);

    let st = tmp.path().join("staged");
    let p = |f: &str| st.join(f).display().to_string();
    ok(&["--config", &cfg, "--out-dir", s(&st), "split"]);
    for f in ["split_s.jsonl", "split_t1.jsonl", "split_t2.jsonl"] {
        assert!(st.join(f).exists(), "missing {f}");
    }
    ok(&["--config", &cfg, "featurize", "--split", "t1", "--out", &p("t1.csv")]);
    ok(&["--config", &cfg, "featurize", "--split", "t2", "--scaler", &p("scaler.json"), "--out", &p("t2.csv")]);
    ok(&["--config", &cfg, "fit", "--features", &p("t1.csv"), "--scaler", &p("scaler.json"), "--out", &p("model.json")]);
    ok(&["--config", &cfg, "tp", "--model", &p("model.json"), "--t1", &p("t1.csv"), "--t2", &p("t2.csv"), "--out", &p("tp.csv")]);
    ok(&[
        "--config", &cfg, "--out-dir", s(&st), "analyze", "--t2", &p("t2.csv"), "--tp", &p("tp.csv"),
        "--model", &p("model.json"), "--t1", &p("t1.csv"),
    ]);

    let full = Path::new(&full);
    for t in TABLES {
        assert_eq!(fs::read(full.join(t)).unwrap(), fs::read(st.join(t)).unwrap(), "{t} differs");
    }
    assert_eq!(fs::read(full.join("t1_features.csv")).unwrap(), fs::read(st.join("t1.csv")).unwrap());
    assert_eq!(fs::read(full.join("t2_features.csv")).unwrap(), fs::read(st.join("t2.csv")).unwrap());
}

#[test]
fn missing_input_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("bad");
    let cfg = tmp.path().join("run.json");
    fs::write(
        &cfg,
        format!(r#"{{"input": "{}/nope.jsonl", "out_dir": "{}"}}"#, s(tmp.path()), s(&out_dir)),
    )
    .unwrap();
    let out = teamlens(&["--config", s(&cfg), "pipeline"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nope.jsonl"), "{err}");
    let manifest = fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("failed"), "{manifest}");
}

#[test]
fn report_without_manifest_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = teamlens(&["report", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no manifest"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(teamlens(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(teamlens(&["fit"]).status.code(), Some(2));
}

#[test]
fn pipeline_needs_a_config() {
    let out = teamlens(&["pipeline"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));
}
