use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn preset(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../presets").join(name)
}

fn qlink(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qlink"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let text = fs::read_to_string(preset("generation_1km.toml"))
        .unwrap()
        .replace("target_pairs = 100", "target_pairs = 10")
        .replace("replications = 100", "replications = 3")
        + extra;
    let path = dir.join("small.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn model_prints_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let short = qlink(&["model", preset("generation_1km.toml").to_str().unwrap()], dir.path());
    assert!(short.status.success());
    assert!(stdout(&short).contains("\nmin_memories = 3\n"));

    let long = qlink(&["model", preset("generation_20km.toml").to_str().unwrap()], dir.path());
    let text = stdout(&long);
    assert!(text.contains("\nmin_memories = 31\n"), "{text}");
    assert!(text.contains("\nmin_memories = 30\n"), "{text}");
    assert!(text.contains("note: min_memories differs"));
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.toml");
    fs::write(&empty, "").unwrap();
    let o = qlink(&["run", empty.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("target_pairs"));

    let bad = small_config(dir.path(), "").to_str().unwrap().to_owned();
    let text = fs::read_to_string(&bad).unwrap().replace("\"msm\"", "\"mm\"").replace("= 0.5", "= 0.7");
    fs::write(&bad, text).unwrap();
    let o = qlink(&["run", &bad], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"));
}

#[test]
fn horizon_exit_is_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let text = fs::read_to_string(&cfg).unwrap().replace("seed = 1", "seed = 1\nmax_sim_time_ps = 3000000");
    fs::write(&cfg, text).unwrap();
    let o = qlink(&["run", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(3));
    let result: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(result["completed"], false);
    assert_eq!(result["completion_time_ps"], 3_000_000);
}

#[test]
fn run_writes_result_and_trace_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let mut outputs = Vec::new();
    for name in ["first", "second"] {
        let out = dir.path().join(name);
        let o = qlink(
            &["run", cfg.to_str().unwrap(), "--trace", "--out", out.to_str().unwrap(), "--seed", "7"],
            dir.path(),
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push((fs::read(out.join("result.json")).unwrap(), fs::read(out.join("trace.txt")).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let result: serde_json::Value = serde_json::from_slice(&outputs[0].0).unwrap();
    assert_eq!(result["seed"], 7);
    assert_eq!(result["pairs_established"], 10);
    assert!(String::from_utf8_lossy(&outputs[0].1).starts_with("0 EPPS EppsEmit\n"));
}

#[test]
fn sweep_csv_and_traces_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let mut csvs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = qlink(
            &[
                "sweep",
                cfg.to_str().unwrap(),
                "--memories",
                "1,4",
                "--arch",
                "msm,mim",
                "--trace",
                "--out",
                out.to_str().unwrap(),
            ],
            dir.path(),
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        csvs.push(out);
    }
    let csv = fs::read_to_string(csvs[0].join("sweep.csv")).unwrap();
    assert_eq!(csv, fs::read_to_string(csvs[1].join("sweep.csv")).unwrap());
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * (3 + 2));
    let mut traces: Vec<_> = fs::read_dir(&csvs[0]).unwrap().map(|e| e.unwrap().file_name()).collect();
    traces.retain(|n| n.to_string_lossy().starts_with("trace_"));
    assert_eq!(traces.len(), 12);
    for t in traces {
        assert_eq!(fs::read(csvs[0].join(&t)).unwrap(), fs::read(csvs[1].join(&t)).unwrap());
    }
}

#[test]
fn sweep_to_stdout_and_replication_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let o = qlink(&["sweep", cfg.to_str().unwrap(), "--memories", "2", "--replications", "2"], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("architecture,"));
    assert_eq!(text.lines().count(), 1 + 2 + 2);
}

#[test]
fn purify_writes_rounds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("fid.toml");
    let text = fs::read_to_string(preset("fidelity_20km.toml"))
        .unwrap()
        .replace("target_pairs = 100", "target_pairs = 5")
        .replace("replications = 100", "replications = 2");
    fs::write(&cfg, text).unwrap();
    let o = qlink(&["purify", cfg.to_str().unwrap(), "--rounds", "1"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = stdout(&o);
    // per architecture: 2 replications × 2 rounds, then mean and stddev per round
    assert_eq!(csv.lines().count(), 1 + 2 * (4 + 4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("MSM round 0: fidelity 0.700000"));
}

#[test]
fn unknown_architecture_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let o = qlink(&["sweep", cfg.to_str().unwrap(), "--memories", "2", "--arch", "xyz"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
