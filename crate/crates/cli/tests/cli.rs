use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const REFERENCE: &str = include_str!("../../../scenarios/reference.toml");

fn scenario(dir: &Path, out: &str, edit: impl Fn(String) -> String) -> PathBuf {
    let out_dir = dir.join(out);
    let text = REFERENCE.replace("\"out/reference\"", &format!("{:?}", out_dir.to_str().unwrap()));
    let path = dir.join(format!("{out}.toml"));
    fs::write(&path, edit(text)).unwrap();
    path
}

fn clusterre(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clusterre"))
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .expect("spawn clusterre")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_csv(path: &Path) -> (String, Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut lines = text.lines();
    let hash = lines.next().expect("hash line").to_string();
    let header = lines.next().expect("header").split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (hash, header, rows)
}

fn assert_hash_line(line: &str) {
    let hex = line.strip_prefix("# config_hash=").unwrap_or_else(|| panic!("bad first line {line:?}"));
    assert_eq!(hex.len(), 64);
    assert!(hex.chars().all(|c| c.is_ascii_hexdigit()));
}

#[test]
fn full_cover_utility_is_exact() {
    let tmp = TempDir::new().unwrap();
    let cfg = scenario(tmp.path(), "full", |t| t);
    let o = clusterre(&cfg, &["evaluate", "--contract", "full", "--paths", "500"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let (_, header, rows) = read_csv(&tmp.path().join("full/evaluate.csv"));
    assert_eq!(header, ["term", "closed_form", "mc_estimate", "se"]);
    let utility = rows.iter().find(|r| r[0] == "utility").unwrap();
    // r0 + (rho - cost) * mass * horizon
    let expected = 10.0 + (1.5 - 2.5) * 1.0 * 2.0;
    assert_eq!(utility[1].parse::<f64>().unwrap(), expected);
    assert_eq!(utility[2].parse::<f64>().unwrap(), expected);
    assert_eq!(utility[3].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn every_csv_starts_with_hash_and_header() {
    let tmp = TempDir::new().unwrap();
    let cfg = scenario(tmp.path(), "all", |t| t);
    let runs: [&[&str]; 5] = [
        &["simulate", "--paths", "200", "--dump-events"],
        &["moments", "--grid", "20"],
        &["evaluate", "--paths", "200"],
        &["optimize"],
        &["sweep", "--lambda-grid", "1.0,0.1,0.01"],
    ];
    for args in runs {
        let o = clusterre(&cfg, args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
    }

    let expected = [
        "simulate.csv",
        "events.csv",
        "moments.csv",
        "moments_summary.csv",
        "evaluate.csv",
        "contract.csv",
        "optimize.csv",
        "optimal_contract.csv",
        "sweep.csv",
        "sweep_summary.csv",
    ];
    let mut hashes = Vec::new();
    for name in expected {
        let (hash, header, rows) = read_csv(&tmp.path().join("all").join(name));
        assert_hash_line(&hash);
        assert!(!header.is_empty() && header.iter().all(|h| !h.is_empty()), "{name}");
        assert!(!rows.is_empty(), "{name} has no rows");
        hashes.push(hash);
    }
    assert!(hashes.windows(2).all(|w| w[0] == w[1]));

    let (_, _, sim) = read_csv(&tmp.path().join("all/simulate.csv"));
    assert_eq!(sim.len(), 200);
    let (_, _, moments) = read_csv(&tmp.path().join("all/moments.csv"));
    assert_eq!(moments.len(), 21);
    let (_, _, sweep) = read_csv(&tmp.path().join("all/sweep.csv"));
    assert_eq!(sweep.len(), 3);
}

#[test]
fn hash_tracks_config_contents() {
    let tmp = TempDir::new().unwrap();
    let a = scenario(tmp.path(), "a", |t| t);
    let b = scenario(tmp.path(), "b", |t| t.replace("gamma = 0.25", "gamma = 0.3"));
    for cfg in [&a, &b] {
        let o = clusterre(cfg, &["moments", "--grid", "4"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let (ha, _, _) = read_csv(&tmp.path().join("a/moments_summary.csv"));
    let (hb, _, _) = read_csv(&tmp.path().join("b/moments_summary.csv"));
    assert_ne!(ha, hb);
}

#[test]
fn non_ergodic_config_reports_location() {
    let tmp = TempDir::new().unwrap();
    let cfg = scenario(tmp.path(), "bad", |t| t.replace("beta = 2.0", "beta = 0.3"));
    let o = clusterre(&cfg, &["moments"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains(&format!("{}:7:", cfg.display())), "{err}");
    assert!(err.contains("hawkes.beta"), "{err}");
}

#[test]
fn unknown_key_and_bad_type_exit_two() {
    let tmp = TempDir::new().unwrap();
    let unknown = scenario(tmp.path(), "unknown", |t| t.replace("[marks]", "[marks]\nshape = 2.0"));
    let o = clusterre(&unknown, &["moments"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("shape"), "{}", stderr(&o));

    let typed = scenario(tmp.path(), "typed", |t| t.replace("lambda0 = 1.2", "lambda0 = \"fast\""));
    let o = clusterre(&typed, &["moments"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn missing_config_file_exits_two() {
    let tmp = TempDir::new().unwrap();
    let o = clusterre(&tmp.path().join("absent.toml"), &["moments"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn cheap_cover_violates_hypothesis() {
    let tmp = TempDir::new().unwrap();
    let cfg = scenario(tmp.path(), "cheap", |t| t.replace("cost = 2.5", "cost = 1.0"));
    let o = clusterre(&cfg, &["optimize"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!tmp.path().join("cheap/optimal_contract.csv").exists());
}

#[test]
fn usage_errors_exit_two() {
    let tmp = TempDir::new().unwrap();
    let cfg = scenario(tmp.path(), "usage", |t| t);
    let cases: [&[&str]; 4] = [
        &["frobnicate"],
        &["evaluate", "--contract", "deductible:-1"],
        &["evaluate", "--contract", "banana"],
        &["sweep", "--lambda-grid", "0.1,0.5"],
    ];
    for args in cases {
        let o = clusterre(&cfg, args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn unwritable_output_exits_one() {
    let tmp = TempDir::new().unwrap();
    let blocker = tmp.path().join("blocked");
    fs::write(&blocker, "not a directory").unwrap();
    let cfg = scenario(tmp.path(), "blocked", |t| t);
    let o = clusterre(&cfg, &["moments", "--grid", "4"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn simulate_is_seed_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = scenario(tmp.path(), "seeded", |t| t);
    let out = tmp.path().join("seeded/simulate.csv");
    let mut runs = Vec::new();
    for seed in ["7", "7", "8"] {
        let o = clusterre(&cfg, &["simulate", "--paths", "300", "--seed", seed]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        runs.push(fs::read(&out).unwrap());
    }
    assert_eq!(runs[0], runs[1]);
    assert_ne!(runs[0], runs[2]);
}
