use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use micromode_core::experiments::StudyConfig;

fn micromode(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_micromode")).args(args).env_remove("MICROMODE_SEED").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("process exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn generate_is_deterministic_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = micromode(&["generate", "--beta", "0.5", "--n", "300", "--seed", seed, "--out", p(&out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        fs::read(out.join("points.csv")).unwrap()
    };
    assert_eq!(run("a", "3"), run("b", "3"));
    assert_ne!(run("a", "3"), run("c", "4"));
}

#[test]
fn seed_variable_overrides_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = Command::new(env!("CARGO_BIN_EXE_micromode"))
        .args(["generate", "--beta", "0.5", "--n", "50", "--seed", "1", "--out", p(&a)])
        .env("MICROMODE_SEED", "77")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(code(&micromode(&["generate", "--beta", "0.5", "--n", "50", "--seed", "77", "--out", p(&b)])), 0);
    assert_eq!(fs::read(a.join("points.csv")).unwrap(), fs::read(b.join("points.csv")).unwrap());
    let bad = Command::new(env!("CARGO_BIN_EXE_micromode"))
        .args(["generate", "--beta", "0.5", "--n", "50", "--out", p(&a)])
        .env("MICROMODE_SEED", "seven")
        .output()
        .unwrap();
    assert_eq!(code(&bad), 2);
}

#[test]
fn usage_errors_exit_2_and_runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let o = p(&out);
    for args in [
        vec!["generate", "--beta", "0.5", "--n", "0", "--out", o],
        vec!["generate", "--beta", "-1", "--n", "10", "--out", o],
        vec!["micromode", "--beta", "0.5", "--n", "3", "--nu", "1", "--k", "5"],
        vec!["zigzag", "--beta", "0.5", "--n", "10", "--nu", "1", "--kind", "bogus", "--exit", "--out", o],
        vec!["zigzag", "--beta", "0.5", "--n", "10", "--nu", "1", "--kind", "canonical", "--out", o],
        vec!["generate", "--threads", "0", "--beta", "0.5", "--n", "10", "--out", o],
    ] {
        let r = micromode(&args);
        assert_eq!(code(&r), 2, "{args:?}: {}", stderr(&r));
    }
    let missing = dir.path().join("missing.csv");
    let r = micromode(&["micromode", "--data", p(&missing), "--nu", "1"]);
    assert_eq!(code(&r), 1, "{}", stderr(&r));
}

#[test]
fn two_point_report_on_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("two.csv");
    fs::write(&data, "y1\n-2\n2\n").unwrap();
    let r = micromode(&["micromode", "--data", p(&data), "--nu", "1"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let report: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    let text = report.to_string();
    assert!(text.contains("1.7320508075688"), "{text}");
}

#[test]
fn study_config_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "study = \"evt\"\nseed = 1\nbeta = [0.5]\nn = [100]\nreplicatess = 3\ncolour = 1\n").unwrap();
    let r = micromode(&["study", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(code(&r), 2);
    let err = stderr(&r);
    assert!(err.contains("replicatess") && err.contains("colour"), "{err}");

    fs::write(&cfg, "study = \"prevalence\"\nseed = 1\nbeta = [0.5]\nnu = []\nn = [100]\n").unwrap();
    let r = micromode(&["study", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("`nu` grid is empty"), "{}", stderr(&r));
}

#[test]
fn shipped_configs_parse_validate_and_round_trip() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut seen = 0;
    for entry in fs::read_dir(configs).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        let cfg: StudyConfig = toml::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let back: StudyConfig = toml::from_str(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        seen += 1;
    }
    assert!(seen >= 8);
}

fn replay_identical(manifest: &Path, out: &Path) {
    let r = micromode(&["replay", "--manifest", p(manifest), "--out", p(out)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let v: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(v["mismatched"], serde_json::json!([]), "{v}");
}

#[test]
fn every_command_replays_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let d = |s: &str| dir.path().join(s);
    let runs: Vec<(&str, Vec<String>)> = vec![
        ("gen", vec!["generate", "--beta", "0.5", "--n", "400", "--seed", "5"].into_iter().map(String::from).collect()),
        ("mm", vec!["micromode", "--beta", "0.5", "--n", "400", "--seed", "5", "--nu", "1"].into_iter().map(String::from).collect()),
        (
            "hz",
            vec!["zigzag", "--beta", "0.5", "--n", "50", "--seed", "5", "--nu", "1", "--kind", "subsampling", "--horizon", "100", "--traj", "2"]
                .into_iter()
                .map(String::from)
                .collect(),
        ),
        (
            "ex",
            vec!["zigzag", "--data", "TWO", "--nu", "1", "--kind", "canonical", "--exit", "--traj", "5", "--excursions", "500"]
                .into_iter()
                .map(String::from)
                .collect(),
        ),
    ];
    let two = d("two.csv");
    fs::write(&two, "y1\n-2\n2\n").unwrap();
    for (name, mut args) in runs {
        for a in args.iter_mut() {
            if a == "TWO" {
                *a = p(&two).to_owned();
            }
        }
        args.push("--out".into());
        args.push(p(&d(name)).to_owned());
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let r = micromode(&refs);
        assert_eq!(code(&r), 0, "{name}: {}", stderr(&r));
        replay_identical(&d(name).join("manifest.json"), &d(&format!("{name}_replay")));
    }

    let cfg = d("study.toml");
    fs::write(&cfg, "study = \"width_scaling\"\nseed = 3\nbeta = [0.5]\nnu = [1.0]\nn = [300, 600]\nreplicates = 4\n").unwrap();
    let r = micromode(&["study", "--config", p(&cfg), "--out", p(&d("st"))]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    replay_identical(&d("st").join("manifest.json"), &d("st_replay"));

    // a tampered digest is caught
    let path = d("gen").join("manifest.json");
    let mut m: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    m["outputs"][0]["sha256"] = serde_json::json!("00");
    fs::write(&path, serde_json::to_vec(&m).unwrap()).unwrap();
    let r = micromode(&["replay", "--manifest", p(&path), "--out", p(&d("gen_bad"))]);
    assert_eq!(code(&r), 1);
}
