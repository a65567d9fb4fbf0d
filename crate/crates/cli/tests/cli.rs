use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nlg_core::game::Game;
use serde_json::Value;
use tempfile::TempDir;

fn nlg() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_nlg"));
    c.env_remove("NLG_DIM_CAP");
    c
}

fn run(args: &[&str]) -> Output {
    nlg().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_game(dir: &Path, name: &str, g: &Game) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, g.to_json_string()).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn report_on_chsh_succeeds() {
    let dir = TempDir::new().unwrap();
    let game = write_game(dir.path(), "chsh.json", &Game::chsh());
    let out = dir.path().join("report.json");
    let o = run(&["report", s(&game), "--uniform", "-o", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&out);
    assert_eq!(r["omega_c"], 0.75);
    assert!((r["omega_extracted"].as_f64().unwrap() - 0.853553).abs() < 1e-5);
    assert_eq!(r["sandwich_ok"], true);
    assert_eq!(r["extraction"]["path"], "uniform");
}

#[test]
fn report_writes_stdout_without_output_flag() {
    let dir = TempDir::new().unwrap();
    let game = write_game(dir.path(), "one.json", &Game::constant(1, 2, 2, true).unwrap());
    let o = run(&["report", s(&game)]);
    assert_eq!(code(&o), 0);
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((r["omega_sdp"].as_f64().unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn malformed_game_exits_2() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("bad.json");
    fs::write(&p, "{\"name\": \"x\"").unwrap();
    assert_eq!(code(&run(&["report", s(&p)])), 2);
    let mut f = Game::chsh().to_file();
    f.pi[0][0] = 0.5;
    fs::write(&p, serde_json::to_string(&f).unwrap()).unwrap();
    let o = run(&["report", s(&p)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("distribution not normalized"));
}

#[test]
fn uniform_flag_on_ternary_game_exits_2() {
    let dir = TempDir::new().unwrap();
    let game = write_game(dir.path(), "g.json", &Game::constant(1, 1, 3, true).unwrap());
    assert_eq!(code(&run(&["report", s(&game), "--uniform"])), 2);
}

#[test]
fn non_convergence_exits_3_with_partial_report() {
    let dir = TempDir::new().unwrap();
    let game = write_game(dir.path(), "chsh.json", &Game::chsh());
    let out = dir.path().join("partial.json");
    let o = run(&["report", s(&game), "--max-iters", "3", "-o", s(&out)]);
    assert_eq!(code(&o), 3);
    let r = read_json(&out);
    assert_eq!(r["converged"], false);
    assert_eq!(r["solver_status"]["converged"], false);
    assert_eq!(r["sandwich_ok"], false);
}

#[test]
fn dimension_cap_exits_4() {
    let dir = TempDir::new().unwrap();
    let game = write_game(dir.path(), "chsh.json", &Game::chsh());
    assert_eq!(code(&run(&["report", s(&game), "--dim-cap", "1"])), 4);
    let o = nlg().args(["report", s(&game)]).env("NLG_DIM_CAP", "1").output().unwrap();
    assert_eq!(code(&o), 4);
}

#[test]
fn stage_by_stage_matches_report() {
    let dir = TempDir::new().unwrap();
    let game = write_game(dir.path(), "chsh.json", &Game::chsh());
    let sol = dir.path().join("sol.json");
    let strat = dir.path().join("strategy.json");
    let ev = dir.path().join("eval.json");
    let log = dir.path().join("log.csv");
    let dump = dir.path().join("sdp.txt");

    let o = run(&["solve", s(&game), "--uniform", "-o", s(&sol), "--log-csv", s(&log), "--dump-sdp", s(&dump)]);
    assert_eq!(code(&o), 0);
    assert!((read_json(&sol)["objective_value"].as_f64().unwrap() - 0.853553).abs() < 1e-5);
    assert!(fs::read_to_string(&log).unwrap().starts_with("iter,objective,primal_res,dual_res"));
    assert!(fs::read_to_string(&dump).unwrap().lines().any(|l| l.starts_with("INEQ ")));

    assert_eq!(code(&run(&["round", s(&game), s(&sol), "-o", s(&strat)])), 0);
    assert_eq!(code(&run(&["eval", s(&game), s(&strat), "-o", s(&ev)])), 0);
    let staged = read_json(&ev)["win_prob"].as_f64().unwrap();

    let exported = dir.path().join("exported.json");
    let report = dir.path().join("report.json");
    let o = run(&["report", s(&game), "--uniform", "--export-strategy", s(&exported), "-o", s(&report)]);
    assert_eq!(code(&o), 0);
    let o = run(&["eval", s(&game), s(&exported)]);
    let direct: Value = serde_json::from_slice(&o.stdout).unwrap();
    let embedded = read_json(&report)["omega_extracted"].as_f64().unwrap();
    assert!((direct["win_prob"].as_f64().unwrap() - embedded).abs() <= 1e-10);
    assert!((staged - embedded).abs() <= 1e-8);
}

#[test]
fn classical_stage_on_never_win() {
    let dir = TempDir::new().unwrap();
    let game = write_game(dir.path(), "zero.json", &Game::constant(2, 2, 2, false).unwrap());
    let o = run(&["classical", s(&game)]);
    assert_eq!(code(&o), 0);
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["value"], 0.0);
}

#[test]
fn random_is_deterministic() {
    let a = run(&["random", "--s-size", "3", "--k", "3", "--density", "0.4", "--seed", "11"]);
    let b = run(&["random", "--s-size", "3", "--k", "3", "--density", "0.4", "--seed", "11"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let g = Game::from_json_str(&String::from_utf8(a.stdout).unwrap()).unwrap();
    assert_eq!((g.s_size(), g.t_size(), g.k()), (3, 2, 3));
}

#[test]
fn reports_are_byte_identical_apart_from_timings() {
    let dir = TempDir::new().unwrap();
    let game = dir.path().join("g.json");
    fs::write(&game, run(&["random", "--k", "3", "--seed", "5"]).stdout).unwrap();
    let strip = |o: Output| {
        let text = String::from_utf8(o.stdout).unwrap();
        let start = text.find("\"timings\"").unwrap();
        text[..start].to_string()
    };
    assert_eq!(strip(run(&["report", s(&game)])), strip(run(&["report", s(&game)])));
}

#[test]
fn batch_mode_writes_one_report_per_game() {
    let dir = TempDir::new().unwrap();
    let games = dir.path().join("games");
    fs::create_dir(&games).unwrap();
    write_game(&games, "chsh.json", &Game::chsh());
    write_game(&games, "always.json", &Game::constant(2, 1, 3, true).unwrap());
    let out = dir.path().join("out");
    let o = run(&["report", "--batch", s(&games), "-o", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(read_json(&out.join("chsh.json"))["game_name"], "chsh");
    assert_eq!(read_json(&out.join("always.json"))["sandwich_ok"], true);
}

#[test]
fn selftest_passes() {
    let o = run(&["selftest"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(!text.contains("FAIL"));
    assert_eq!(text.lines().count(), 5 + 16);
}
