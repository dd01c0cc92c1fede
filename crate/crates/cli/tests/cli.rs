use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
    "satellites": ["s1", "s2", "s3"],
    "grids": ["g1", "g2", "g3"],
    "windows": [
        {"sat": "s1", "grid": "g1", "begin_min": 0, "end_min": 12},
        {"sat": "s1", "grid": "g2", "begin_min": 0, "end_min": 12},
        {"sat": "s2", "grid": "g2", "begin_min": 0, "end_min": 12},
        {"sat": "s2", "grid": "g3", "begin_min": 0, "end_min": 12},
        {"sat": "s3", "grid": "g3", "begin_min": 0, "end_min": 12},
        {"sat": "s3", "grid": "g1", "begin_min": 0, "end_min": 12}
    ],
    "capacity": {"uniform": [2, 3], "seed": 5, "integral": true},
    "load": [{"grid": "g1", "beta": 20}, {"grid": "g2", "beta": 15}, {"grid": "g3", "beta": 18}],
    "constants": {"H": 2, "C": 1, "dt": 6, "horizon": [0, 12]}
}"#;

fn satgame(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_satgame")).current_dir(dir).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn small_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.json"), SMALL).unwrap();
    dir
}

#[test]
fn generate_writes_a_loadable_preset() {
    let dir = tempfile::tempdir().unwrap();
    let out = satgame(dir.path(), &["generate", "--preset", "global", "--seed", "3", "-o", "g.json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("g.json")).unwrap();
    let s = satgame::io::scenario_from_json(&text, Path::new("g.json")).unwrap();
    assert_eq!((s.satellite_count(), s.grid_count()), (100, 30));
}

#[test]
fn run_then_replay_is_byte_identical() {
    let dir = small_dir();
    let out = satgame(
        dir.path(),
        &["run", "--scenario", "small.json", "--variant", "all", "--runs", "4", "--tmax", "80", "--no-timing", "--traces", "-o", "a"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = satgame(dir.path(), &["replay", "--manifest", "a/run.json", "-o", "b"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut names: Vec<_> = fs::read_dir(dir.path().join("a")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() > 3);
    for name in names {
        let a = fs::read(dir.path().join("a").join(&name)).unwrap();
        let b = fs::read(dir.path().join("b").join(&name)).unwrap();
        assert_eq!(a, b, "{name:?} differs");
    }
    let summary = fs::read_to_string(dir.path().join("a/summary.csv")).unwrap();
    assert!(summary.starts_with("variant,worst,best,mean,time_s,variance,n_best"));
    assert_eq!(summary.lines().count(), 6);
}

#[test]
fn run_with_oracle_counts_certified_hits() {
    let dir = small_dir();
    let out = satgame(dir.path(), &["run", "--scenario", "small.json", "--oracle", "--runs", "5", "--tmax", "100", "-o", "o"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(dir.path().join("o/summary.csv")).unwrap();
    assert!(summary.lines().nth(1).unwrap().contains(",oracle,"), "{summary}");
}

#[test]
fn dgap_writes_one_row_per_stage() {
    let dir = small_dir();
    let out = satgame(dir.path(), &["dgap", "--scenario", "small.json", "--runs", "3", "--tmax", "60", "-o", "d"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(dir.path().join("d/summary.csv")).unwrap();
    assert!(summary.starts_with("stage,variant,"));
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = small_dir();
    let out = satgame(
        dir.path(),
        &[
            "sweep",
            "--scenario",
            "small.json",
            "--param",
            "tau",
            "--from",
            "0",
            "--to",
            "1",
            "--step",
            "0.25",
            "--runs",
            "2",
            "--tmax",
            "40",
            "-o",
            "s",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("s/sweep.csv")).unwrap();
    assert!(csv.starts_with("tau,worst,"));
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn verify_passes_on_a_tractable_instance() {
    let dir = small_dir();
    let out = satgame(dir.path(), &["verify", "--scenario", "small.json", "--samples", "200"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(code(&out), 0, "{stdout}");
    assert!(stdout.contains("oracle: optimum"));
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn verify_can_demand_the_oracle() {
    let dir = small_dir();
    let out = satgame(dir.path(), &["verify", "--scenario", "small.json", "--samples", "10", "--joint-cap", "10", "--require-oracle"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn exit_codes() {
    let dir = small_dir();
    assert_eq!(code(&satgame(dir.path(), &["run", "--scenario", "absent.json"])), 3);
    assert_eq!(code(&satgame(dir.path(), &["run", "--scenario", "small.json", "--theta", "1.5"])), 1);
    assert_eq!(code(&satgame(dir.path(), &["run", "--scenario", "small.json", "--variant", "nope"])), 1);
    assert_eq!(code(&satgame(dir.path(), &["run", "--scenario", "small.json", "--stage", "9"])), 1);
    assert_eq!(code(&satgame(dir.path(), &["frobnicate"])), 1);
    fs::write(dir.path().join("bad.json"), "{\"satellites\": [}").unwrap();
    assert_eq!(code(&satgame(dir.path(), &["verify", "--scenario", "bad.json"])), 1);
    assert_eq!(code(&satgame(dir.path(), &["--help"])), 0);
}
