use std::path::Path;
use std::process::{Command, Output};

use boundopt::experiment::{RunManifest, MANIFEST_FILE, OUT_ENV};

fn boundopt(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_boundopt"))
        .args(args)
        .env(OUT_ENV, out_root)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

const CCCP: &str = r#"{
  "algorithm": "cccp",
  "preprocessing": ["decomposition:dec1"],
  "stop": { "relTol": 1e-12, "maxIter": 1000 }
}"#;

#[test]
fn run_writes_a_verified_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "cccp.json", CCCP);
    let out = tmp.path().join("run");
    let res = boundopt(
        &[
            "run",
            "--config",
            &config,
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "9",
        ],
        tmp.path(),
    );
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let m = RunManifest::load(&out).unwrap();
    assert_eq!(m.spec.data_spec.seed, 9);
    assert!(m.verify().unwrap().is_empty());
}

#[test]
fn default_output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "cccp.json", CCCP);
    let res = boundopt(&["run", "--config", &config], tmp.path());
    assert!(res.status.success());
    let made: Vec<_> = std::fs::read_dir(tmp.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().join(MANIFEST_FILE).exists())
        .collect();
    assert_eq!(made.len(), 1);
}

#[test]
fn config_errors_exit_with_two_and_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(
        tmp.path(),
        "bad.json",
        r#"{ "algorithm": "nmf", "dataSpec": { "rank": 0 } }"#,
    );
    let res = boundopt(&["run", "--config", &bad], tmp.path());
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("dataSpec.rank"));

    let missing = tmp.path().join("nope.json");
    let res = boundopt(&["run", "--config", missing.to_str().unwrap()], tmp.path());
    assert_eq!(res.status.code(), Some(2));

    let res = boundopt(&["figure", "fig9", tmp.path().to_str().unwrap()], tmp.path());
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn numeric_failures_exit_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    // Every row of V is zero, so the NMF components carry no mass.
    std::fs::write(tmp.path().join("v.csv"), "0,0,0\n0,0,0\n").unwrap();
    let config = write_config(
        tmp.path(),
        "nmf.json",
        r#"{ "algorithm": "nmf", "dataSpec": { "file": "v.csv", "rank": 1 }, "stop": { "relTol": 1e-10, "maxIter": 100 } }"#,
    );
    let res = boundopt(&["run", "--config", &config], tmp.path());
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn compare_and_figure_read_run_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for name in ["dec1", "dec3"] {
        let text = CCCP.replace("dec1", name);
        let config = write_config(tmp.path(), &format!("{name}.json"), &text);
        let dir = tmp.path().join(name);
        assert!(boundopt(
            &["run", "--config", &config, "--out", dir.to_str().unwrap()],
            tmp.path()
        )
        .status
        .success());
        dirs.push(dir.to_string_lossy().into_owned());
    }
    let csv = tmp.path().join("table.csv");
    let res = boundopt(
        &["compare", &dirs[0], &dirs[1], "--out", csv.to_str().unwrap()],
        tmp.path(),
    );
    assert!(res.status.success());
    assert!(String::from_utf8_lossy(&res.stdout).contains("speedup"));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 3);

    let figs = tmp.path().join("figs");
    let res = boundopt(
        &[
            "figure",
            "fig4-curves",
            &dirs[0],
            &dirs[1],
            "--out",
            figs.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(std::fs::read_dir(&figs).unwrap().count() > 0);

    let res = boundopt(&["figure", "fig1-quiver", &dirs[0]], tmp.path());
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn selftest_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let res = boundopt(&["selftest"], tmp.path());
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(res.status.success(), "{stdout}");
    assert!(stdout.lines().all(|l| l.starts_with("PASS")));
}
