//! End-to-end checks of the `iamac` binary: exit codes, CSV layout and
//! the bundled scenario and sweep files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use iamac::harness::{SweepSpec, CSV_HEADER};
use iamac::scenario::Scenario;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn iamac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iamac"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write_scenario(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("scenario.toml");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn run_writes_csv_with_the_documented_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = iamac(&["run", "--preset", "desk", "--seed", "3", "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("desk-3.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    assert_eq!(CSV_HEADER.split(',').count(), 9);
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 9, "{line}");
        assert_eq!(&cols[..3], ["desk", "iamac", "arq"]);
        assert_eq!(cols[5], "3");
        assert_eq!(cols[6], "ok");
    }
}

#[test]
fn same_seed_gives_byte_identical_csv() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = iamac(&[
            "run",
            "--preset",
            "desk",
            "--out",
            d.path().to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0);
    }
    let read = |d: &tempfile::TempDir| fs::read(d.path().join("desk-1.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn config_errors_exit_2_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    for (text, key) in [
        ("sampling_interval = 0.0", "sampling_interval"),
        ("fooo = 1", "fooo"),
    ] {
        let p = write_scenario(dir.path(), text);
        let o = iamac(&[
            "run",
            "--scenario",
            p.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 2);
        assert!(
            String::from_utf8_lossy(&o.stderr).contains(key),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let o = iamac(&["run", "--preset", "nope"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn disjoint_network_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_scenario(
        dir.path(),
        "node_count = 50\noutput_power = -14.0\n[area]\nwidth = 30.0\nheight = 30.0\n",
    );
    let o = iamac(&[
        "run",
        "--scenario",
        p.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3);
    let csv = fs::read_to_string(dir.path().join("default-1.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().contains(",disjoint,"), "{csv}");
}

#[test]
fn failed_trend_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("sweep.toml");
    // duty cycle falls with frame duration, so this assertion must fail
    fs::write(
        &spec,
        "parameter = \"frame_duration\"\nvalues = [1.0, 5.0]\nseeds = [1]\n[trend]\nmetric = \"mean_duty_cycle\"\nkind = \"non-decreasing\"\n",
    )
    .unwrap();
    let o = iamac(&[
        "sweep",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn sweep_serial_and_parallel_write_the_same_file() {
    let spec = repo().join("sweeps/frame-duty.toml");
    let scenario = repo().join("scenarios/desk.toml");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let run = |d: &tempfile::TempDir, serial: bool| {
        let mut args = vec![
            "sweep",
            "--spec",
            spec.to_str().unwrap(),
            "--scenario",
            scenario.to_str().unwrap(),
            "--out",
            d.path().to_str().unwrap(),
        ];
        if serial {
            args.push("--serial");
        }
        let o = iamac(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
        fs::read(d.path().join("desk-sweep-frame_duration.csv")).unwrap()
    };
    assert_eq!(run(&a, true), run(&b, false));
}

#[test]
fn fixtures_pass() {
    for name in ["fig2", "fig6"] {
        let o = iamac(&["fixture", name]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(code(&iamac(&["fixture", "fig9"])), 2);
}

#[test]
fn analytics_prints_the_capacity_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = iamac(&[
        "analytics",
        "--ber",
        "0,1e-3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.starts_with("table,ber,arq_mpf,seda_mpf"));
    assert!(text.contains("capacity,0,35,76,"), "{text}");
    assert!(text.contains("contention,,,,,,1,8,1,1"), "{text}");
    assert_eq!(
        fs::read_to_string(dir.path().join("analytics.csv")).unwrap(),
        text
    );
    assert_eq!(code(&iamac(&["analytics", "--ber", "1.5"])), 2);
}

#[test]
fn bundled_files_parse() {
    for entry in fs::read_dir(repo().join("scenarios")).unwrap() {
        let p = entry.unwrap().path();
        Scenario::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for entry in fs::read_dir(repo().join("sweeps")).unwrap() {
        let p = entry.unwrap().path();
        let spec = SweepSpec::from_toml(&fs::read_to_string(&p).unwrap())
            .unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert!(
            spec.trend.is_some(),
            "{} has no trend assertion",
            p.display()
        );
    }
    assert_eq!(
        Scenario::load(&repo().join("scenarios/desk.toml")).unwrap(),
        Scenario::desk()
    );
}
