use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use sarl_core::agents::careful_policy;
use sarl_core::harness::{classify_strategy, load_dataset, save_dataset, StrategyLabel};
use sarl_core::planner::policy_evaluation;
use sarl_core::{
    Action, BetaReport, Episode, EpisodeRecorder, GridConfig, HumanModel, PlannedAgent, PlannerConfig, PlayerPos,
    Representation, Seat,
};

fn sarl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sarl")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = sarl(args);
    assert!(
        out.status.success(),
        "sarl {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, name: &str, agent: &str, human: &str, n: &str, seed: &str) -> PathBuf {
    let out = dir.join(name);
    ok(&["simulate", "--agent", agent, "--human", human, "-n", n, "--seed", seed, "--out", p(&out)]);
    out
}

/// One seat drops to the lower row and waits while the other drives through.
fn yield_game(yielder: Seat) -> Episode {
    let grid = GridConfig::default();
    let mut rec = EpisodeRecorder::new(grid).unwrap();
    while !rec.is_terminal() {
        let view = *rec.view();
        let state = view.current;
        let (me, other) = match yielder {
            Seat::Agent => (state.agent, state.human),
            Seat::Human => (state.human, state.agent),
        };
        let driver = if other.is_on_board() { Action::Advance } else { Action::Noop };
        let waiting = match me {
            PlayerPos::OnBoard { row: 1, .. } if state.step_count == 0 => Action::Down,
            PlayerPos::OnBoard { row: 1, .. } => Action::Advance,
            PlayerPos::OnBoard { .. } if other.is_on_board() => Action::Stay,
            PlayerPos::OnBoard { .. } => Action::Up,
            _ => Action::Noop,
        };
        let (a, h) = match yielder {
            Seat::Agent => (waiting, driver),
            Seat::Human => (driver, waiting),
        };
        rec.apply(a, h).unwrap();
    }
    rec.finish(format!("yield-{yielder:?}"), "scripted")
}

#[test]
fn simulate_is_deterministic_and_prints_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &Path| {
        vec![
            "simulate".to_string(),
            "--agent".into(),
            "careful".into(),
            "--human".into(),
            "noisy_aggressive:0.1".into(),
            "-n".into(),
            "1000".into(),
            "--seed".into(),
            "7".into(),
            "--out".into(),
            p(out).into(),
        ]
    };
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    let first = ok(&args(&a).iter().map(String::as_str).collect::<Vec<_>>());
    let second = ok(&args(&b).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(first, second);
    assert!(first.lines().nth(1).unwrap().starts_with("careful"), "{first}");
    let eps = load_dataset(&a).unwrap();
    assert_eq!(eps.len(), 1000);
    assert!(eps.iter().all(|e| e.opponent_agent_name == "careful"));

    let csv = ok(&["simulate", "--agent", "careful", "--human", "uniform", "-n", "10", "--format", "csv"]);
    assert!(csv.starts_with("agent,humans,n_episodes"));
}

#[test]
fn exit_codes() {
    let out = sarl(&["simulate", "--agent", "nosuch", "--human", "uniform"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nosuch"));
    let out = sarl(&["simulate", "--agent", "careful", "--human", "noisy_careful:1.5"]);
    assert_eq!(out.status.code(), Some(2));
    let out = sarl(&["beta", "--dataset", "/nonexistent/d.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    let out = sarl(&["solve", "--beta", "1.5", "--model", "m.json", "--out", "x.json"]);
    assert_eq!(out.status.code(), Some(2));
    let out = sarl(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    let out = sarl(&["verify-equilibrium", "--a", "careful", "--b", "careful"]);
    assert_eq!(out.status.code(), Some(1), "careful pair never finishes");
}

#[test]
fn beta_prints_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = simulate(dir.path(), "d.jsonl", "aggressive", "noisy_careful:0.3", "200", "3");
    let report: BetaReport = serde_json::from_str(&ok(&["beta", "--dataset", p(&d)])).unwrap();
    assert_eq!(report.n_episodes, 200);
    assert!((0.0..=1.0).contains(&report.beta));
    let filtered = sarl(&["beta", "--dataset", p(&d), "--opponent", "careful"]);
    assert_eq!(filtered.status.code(), Some(1), "no games against careful");
}

#[test]
fn solve_auto_on_zero_sum_data_reports_beta_one() {
    let dir = tempfile::tempdir().unwrap();
    let a = yield_game(Seat::Human);
    let h = yield_game(Seat::Agent);
    assert_eq!(a.final_scores.agent_score, h.final_scores.human_score);
    assert_eq!(a.final_scores.human_score, h.final_scores.agent_score);
    assert_ne!(a.final_scores.agent_score, a.final_scores.human_score);
    let episodes: Vec<Episode> = (0..20).map(|i| if i % 2 == 0 { a.clone() } else { h.clone() }).collect();
    let d = dir.path().join("zero_sum.jsonl");
    save_dataset(&d, &episodes).unwrap();

    let policy = dir.path().join("policy.json");
    let out = ok(&[
        "solve", "--dataset", p(&d), "--beta", "auto", "--representation", "positions", "--out", p(&policy),
    ]);
    let summary: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(summary["beta"], 1.0);
    assert_eq!(summary["beta_report"]["correlation"], -1.0);
    let agent = PlannedAgent::from_json(&std::fs::read_to_string(&policy).unwrap()).unwrap();
    assert_eq!(agent.beta, 1.0);
    assert_eq!(agent.representation, Representation::Positions);

    let out = sarl(&["solve", "--model", p(&d), "--beta", "auto", "--out", p(&policy)]);
    assert_eq!(out.status.code(), Some(1), "a dataset is not a model file");
}

#[test]
fn fit_and_evaluate_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let d = simulate(dir.path(), "d.jsonl", "semi_aggressive", "noisy_careful:0.2", "300", "11");
    let model_path = dir.path().join("model.json");
    ok(&["fit", "--dataset", p(&d), "--representation", "positions", "--out", p(&model_path)]);
    let model = HumanModel::from_json(&std::fs::read_to_string(&model_path).unwrap()).unwrap();
    let episodes = load_dataset(&d).unwrap();
    let grid = GridConfig::default();
    assert_eq!(model, HumanModel::fit(&episodes, Representation::Positions, &grid).unwrap());

    let out = ok(&[
        "evaluate", "--agent", "careful", "--model", p(&model_path), "--representation", "positions", "--beta", "0.4",
    ]);
    let summary: serde_json::Value = serde_json::from_str(&out).unwrap();
    let cfg = PlannerConfig::default()
        .with_beta(0.4)
        .with_representation(Representation::Positions);
    let expected = policy_evaluation(&careful_policy(), &model, &grid, &cfg).unwrap();
    assert_eq!(summary["initial_value"].as_f64().unwrap(), expected.initial);
}

#[test]
fn classify_counts_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let d = simulate(dir.path(), "d.jsonl", "careful", "careful,aggressive,noisy_careful:0.3", "300", "5");
    let rows = dir.path().join("labels.jsonl");
    let out = ok(&["classify", "--dataset", p(&d), "--out", p(&rows)]);
    let summary: serde_json::Value = serde_json::from_str(&out).unwrap();
    let episodes = load_dataset(&d).unwrap();
    let count = |label| {
        episodes
            .iter()
            .filter(|e| classify_strategy(e).unwrap().label == label)
            .count() as u64
    };
    assert_eq!(summary["episodes"], 300);
    assert_eq!(summary["careful_consistent"], count(StrategyLabel::CarefulConsistent));
    assert_eq!(summary["aggressive_consistent"], count(StrategyLabel::AggressiveConsistent));
    assert_eq!(summary["not_in_equilibrium"], count(StrategyLabel::NotInEquilibrium));
    assert_eq!(std::fs::read_to_string(&rows).unwrap().lines().count(), 300);
}

#[test]
fn verify_equilibrium_reports() {
    let out = ok(&["verify-equilibrium", "--a", "aggressive", "--b", "careful"]);
    assert!(out.contains("verified: true"), "{out}");
    let out = ok(&["verify-equilibrium", "--a", "aggressive", "--b", "aggressive", "--json"]);
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["verified"], false);
}

#[test]
fn config_file_sets_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{ "grid": { "n_cols": 4 }, "planner": { "gamma": 0.99 } }"#).unwrap();
    let d = dir.path().join("d.jsonl");
    ok(&[
        "--config", p(&cfg), "simulate", "--agent", "careful", "--human", "aggressive", "-n", "5", "--out", p(&d),
    ]);
    assert!(load_dataset(&d).unwrap().iter().all(|e| e.grid.n_cols == 4));

    std::fs::write(&cfg, r#"{ "planner": { "gama": 0.99 } }"#).unwrap();
    let out = sarl(&["--config", p(&cfg), "beta", "--dataset", p(&d)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn serve_hosts_policies_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let d = simulate(dir.path(), "d.jsonl", "careful", "noisy_aggressive:0.2", "100", "1");
    let policy = dir.path().join("vi.json");
    ok(&["solve", "--dataset", p(&d), "--representation", "positions", "--name", "vi_beta1", "--out", p(&policy)]);

    let mut child = Command::new(env!("CARGO_BIN_EXE_sarl"))
        .args([
            "serve",
            "--addr",
            "127.0.0.1:0",
            "--dataset",
            p(&dir.path().join("live.jsonl")),
            "--policy",
            p(&policy),
        ])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on http://").unwrap().to_string();

    let mut stream = TcpStream::connect(&addr).unwrap();
    write!(stream, "GET /api/agents HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();

    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.contains("\"vi_beta1\""), "{response}");
    assert!(response.contains("\"careful\""), "{response}");
}
