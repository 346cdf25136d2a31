use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use reef_core::load_snapshot;
use reef_core::metrics::{msc_of_channel, CSV_HEADER};

fn reef(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reef"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path
}

const SMALL: &str = r#"{"grid":{"width":32,"height":32},"seed":3,"initial_population":12,"run":{"metrics_every":10}}"#;

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn digest_line(o: &Output) -> String {
    stdout(o).lines().find(|l| l.starts_with("digest")).unwrap().to_string()
}

#[test]
fn run_writes_metrics_csv() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let csv = dir.path().join("m.csv");
    let out = reef(&["run", "--config", config.to_str().unwrap(), "--steps", "100", "--metrics-out", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    let steps: Vec<u64> = lines[1..].iter().map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(steps, (0..=100).step_by(10).collect::<Vec<u64>>());
    for row in &lines[1..] {
        assert_eq!(row.split(',').count(), 8, "{row}");
    }
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = reef(&["run"]);
    assert_eq!(out.status.code(), Some(1));
    let out = reef(&["run", "--config", "/definitely/not/here.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("here.json"));
    assert_eq!(reef(&["explode"]).status.code(), Some(1));
    assert_eq!(reef(&[]).status.code(), Some(1));
    assert_eq!(reef(&["--help"]).status.code(), Some(0));
}

#[test]
fn invalid_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#"{"grid":{"width":0,"height":64}}"#);
    let out = reef(&["run", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("grid.width must be ≥ 4"), "{}", stderr(&out));
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let snap = dir.path().join("no/such/dir/s.crls");
    let out = reef(&["run", "--config", config.to_str().unwrap(), "--steps", "2", "--snapshot-out", snap.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn resumed_run_matches_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let cfg = config.to_str().unwrap();
    let straight = reef(&["run", "--config", cfg, "--steps", "30"]);
    let snap = dir.path().join("half.crls");
    let first = reef(&["run", "--config", cfg, "--steps", "15", "--snapshot-out", snap.to_str().unwrap()]);
    assert_eq!(first.status.code(), Some(0));
    let second = reef(&["run", "--config", cfg, "--steps", "15", "--resume", snap.to_str().unwrap()]);
    assert_eq!(second.status.code(), Some(0), "{}", stderr(&second));
    assert_eq!(digest_line(&second), digest_line(&straight));
    assert!(stdout(&second).contains("to step 30"));
}

#[test]
fn periodic_snapshots_and_frames() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"grid":{"width":16,"height":8},"initial_population":4,"run":{"snapshot_every":5}}"#,
    );
    let frames = dir.path().join("frames");
    let snap = dir.path().join("run.crls");
    let out = reef(&[
        "run", "--config", config.to_str().unwrap(), "--steps", "10",
        "--frames-out", frames.to_str().unwrap(), "--frame-every", "5",
        "--snapshot-out", snap.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let mut names: Vec<String> = std::fs::read_dir(&frames)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["frame-00000000.png", "frame-00000005.png", "frame-00000010.png"]);
    for step in [5, 10] {
        let periodic = load_snapshot(dir.path().join(format!("run-{step:08}.crls"))).unwrap();
        assert_eq!(periodic.step_counter(), step);
    }
    assert_eq!(load_snapshot(&snap).unwrap().step_counter(), 10);

    let png = dir.path().join("out.png");
    let out = reef(&["render", "--snapshot", snap.to_str().unwrap(), "--out", png.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let dec = png::Decoder::new(std::io::BufReader::new(std::fs::File::open(&png).unwrap()));
    let info = dec.read_info().unwrap();
    assert_eq!((info.info().width, info.info().height), (16, 8));
}

#[test]
fn msc_command_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let snap = dir.path().join("s.crls");
    let out = reef(&["run", "--config", config.to_str().unwrap(), "--steps", "20", "--snapshot-out", snap.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let state = load_snapshot(&snap).unwrap();
    let want = msc_of_channel(&state.substrate, "infrastructure", 0).unwrap();

    let out = reef(&["msc", "--snapshot", snap.to_str().unwrap(), "--channel", "infrastructure"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let total: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("total "))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(total, want.total);
    let scales: Vec<f64> = text
        .lines()
        .filter_map(|l| l.strip_prefix("scale "))
        .map(|l| l.split(' ').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(scales, want.per_scale);

    let out = reef(&["msc", "--snapshot", snap.to_str().unwrap(), "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["total"].as_f64().unwrap(), want.total);

    let out = reef(&["msc", "--snapshot", snap.to_str().unwrap(), "--channel", "nope"]);
    assert_eq!(out.status.code(), Some(1));
    let garbage = dir.path().join("garbage.crls");
    std::fs::write(&garbage, b"XXXXnot a snapshot").unwrap();
    let out = reef(&["msc", "--snapshot", garbage.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("magic"));
}
