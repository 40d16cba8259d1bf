use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bipen::cli::{EXIT_OK, EXIT_USAGE, LANDSCAPE_HEADER};
use bipen::trace::read_trace;

fn bipen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bipen"))
        .args(args)
        .env_remove("BIPEN_JOBS")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn solve_writes_one_trace_per_replica() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "problem = quad_sc\nalgorithm = double_loop\npreset = stoch_both\nK = 12\nnoise_f = 0.1\nnoise_g = 0.1\nreplicas = 2\n",
    );
    let out = dir.path().join("out");
    let res = bipen(&["solve", "--config", &cfg, "--output", out.to_str().unwrap(), "--jobs", "2"]);
    assert_eq!(res.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.starts_with("replica ")).count(), 2);
    for r in 0..2 {
        let rows = read_trace(&out.join(format!("replica_{r}.csv"))).unwrap();
        assert_eq!(rows.first().unwrap().k, 0);
        assert_eq!(rows.last().unwrap().k, 12);
    }
    assert!(out.join("config.txt").exists());
}

#[test]
fn replicas_differ_but_repeat() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "problem = pl_multisol\nalgorithm = single_loop\npreset = mom_both\nK = 30\nnoise_f = 0.2\nnoise_g = 0.2\nreplicas = 2\n",
    );
    let run = |name: &str, jobs: &str| {
        let out = dir.path().join(name);
        let res = bipen(&["solve", "--config", &cfg, "--output", out.to_str().unwrap(), "--jobs", jobs]);
        assert_eq!(res.status.code(), Some(EXIT_OK));
        out
    };
    let a = run("a", "1");
    let b = run("b", "4");
    let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    assert_eq!(read(&a, "replica_0.csv"), read(&b, "replica_0.csv"));
    assert_eq!(read(&a, "replica_1.csv"), read(&b, "replica_1.csv"));
    assert_ne!(read(&a, "replica_0.csv"), read(&a, "replica_1.csv"));
}

#[test]
fn landscape_flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "problem = constrained_sc\n");
    let out = dir.path().join("land");
    let res = bipen(&[
        "landscape",
        "--config",
        &cfg,
        "--output",
        out.to_str().unwrap(),
        "--x-min",
        "-1.5",
        "--x-max",
        "1.5",
        "--x-steps",
        "7",
        "--sigmas",
        "0.1,0.01",
    ]);
    assert_eq!(res.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&res.stderr));
    let text = fs::read_to_string(out.join("landscape.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(LANDSCAPE_HEADER));
    assert_eq!(lines.count(), 14);
}

#[test]
fn bad_input_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write_config(dir.path(), "problem = quad_sc\nfrobnicate = 3\n");
    let res = bipen(&["solve", "--config", &unknown]);
    assert_eq!(res.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&res.stderr).contains("line 2"));

    let missing = dir.path().join("absent.cfg");
    let res = bipen(&["solve", "--config", missing.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(EXIT_USAGE));

    let dropout = write_config(
        dir.path(),
        "algorithm = single_loop\npreset = mom_both\nnoise_model = coordinate_dropout\nnoise_f = 0.1\n",
    );
    let res = bipen(&["solve", "--config", &dropout]);
    assert_eq!(res.status.code(), Some(EXIT_USAGE));

    let res = bipen(&["verify", "--level", "slow"]);
    assert_eq!(res.status.code(), Some(EXIT_USAGE));
}

#[test]
fn fast_verify_passes() {
    let res = bipen(&["verify", "--level", "fast"]);
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert_eq!(res.status.code(), Some(EXIT_OK), "{stdout}");
    assert!(stdout.lines().all(|l| l.starts_with("PASS ")));
}
