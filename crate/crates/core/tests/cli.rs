//! End-to-end checks of the command-line surface: subcommands, exit
//! codes, and the file formats they emit.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_wflow")
}

fn run_cli(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(exit_code(&run_cli(&[])), 1);
    assert_eq!(exit_code(&run_cli(&["frobnicate"])), 1);
    assert_eq!(exit_code(&run_cli(&["run"])), 1);
    assert_eq!(exit_code(&run_cli(&["check"])), 1);
    assert_eq!(exit_code(&run_cli(&["check", "--trace", "/no/such/trace.csv"])), 1);
    assert_eq!(exit_code(&run_cli(&["run", "--config", "/no/such.cfg"])), 1);
    assert_eq!(exit_code(&run_cli(&["run", "--what", "x"])), 1);
}

#[test]
fn config_problems_exit_1_and_name_the_lines() {
    let dir = tempfile::tempdir().unwrap();

    let bad_tau = write_config(
        dir.path(),
        "bad_tau.cfg",
        "dim=1\nnx=8\nlength=1.0\ntau=0\nt_final=0.01\npotential=quartic\ninitial=constant:1.0\n",
    );
    let out = run_cli(&["run", "--config", &bad_tau]);
    assert_eq!(exit_code(&out), 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("tau must be positive and < 1"),
        "stderr: {stderr}"
    );

    let bad_dim = write_config(
        dir.path(),
        "bad_dim.cfg",
        "dim=4\nnx=8\nlength=1.0\ntau=0.01\nt_final=0.01\npotential=quartic\ninitial=constant:1.0\n",
    );
    let out = run_cli(&["run", "--config", &bad_dim]);
    assert_eq!(exit_code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("1, 2, or 3"));

    let unknown = write_config(
        dir.path(),
        "unknown.cfg",
        "dim=1\nnx=8\nlength=1.0\ntau=0.01\nt_final=0.01\npotential=quartic\ninitial=constant:1.0\nwhatsthis=1\n",
    );
    let out = run_cli(&["run", "--config", &unknown]);
    assert_eq!(exit_code(&out), 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 8"), "stderr: {stderr}");
    assert!(stderr.contains("whatsthis"), "stderr: {stderr}");
}

#[test]
fn stability_command_produces_table_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "stab.cfg",
        "dim=1\nnx=32\nlength=1.0\ntau=0.001\nt_final=0.01\npotential=quartic\ninitial=cosine:0.3,1\nperturb_seed=7\nperturb_amplitude=1e-4\n",
    );
    let out_dir = dir.path().join("out");
    let out = run_cli(&[
        "stability",
        "--config",
        &config,
        "--output",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let table = fs::read_to_string(out_dir.join("stability.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "n,t,dist_full,dist_half");
    assert_eq!(table.lines().count(), 12); // header + 11 states

    let report = fs::read_to_string(out_dir.join("report.txt")).unwrap();
    assert!(report.contains("command=stability"));
    assert!(report.contains("halving_ok=pass"), "{report}");
    assert!(report.contains("result=pass"), "{report}");
}

#[test]
fn refine_command_emits_a_decreasing_delta_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "refine.cfg",
        "dim=1\nnx=32\nlength=1.0\ntau=0.001\nt_final=0.02\npotential=quartic\ninitial=cosine:0.3,1\ntau_list=4e-3,2e-3,1e-3\n",
    );
    let out_dir = dir.path().join("out");
    let out = run_cli(&[
        "refine",
        "--config",
        &config,
        "--output",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let table = fs::read_to_string(out_dir.join("deltas.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "tau,delta");
    let deltas: Vec<f64> = lines
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(deltas.len(), 2);
    assert!(deltas[1] < deltas[0], "{deltas:?}");

    let report = fs::read_to_string(out_dir.join("report.txt")).unwrap();
    assert!(report.contains("monotone=pass"), "{report}");
}

#[test]
fn snapshot_continuation_reproduces_the_full_run_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let base = "dim=1\nnx=24\nlength=1.0\ntau=0.002\npotential=quartic\ninitial=cosine:0.3,1\nwrite_fields=true\nsnapshot_every=5\n";

    let full_cfg = write_config(dir.path(), "full.cfg", &format!("{base}t_final=0.02\n"));
    let full_out = dir.path().join("full");
    assert_eq!(
        exit_code(&run_cli(&[
            "run",
            "--config",
            &full_cfg,
            "--output",
            full_out.to_str().unwrap()
        ])),
        0
    );

    // restart from the mid-run snapshot and cover the second half
    let snap = full_out.join("snapshot_000005.csv");
    assert!(snap.exists());
    let cont_cfg = write_config(
        dir.path(),
        "cont.cfg",
        &format!(
            "dim=1\nnx=24\nlength=1.0\ntau=0.002\npotential=quartic\ninitial=file:{}\nwrite_fields=true\nsnapshot_every=5\nt_final=0.01\n",
            snap.display()
        ),
    );
    let cont_out = dir.path().join("cont");
    assert_eq!(
        exit_code(&run_cli(&[
            "run",
            "--config",
            &cont_cfg,
            "--output",
            cont_out.to_str().unwrap()
        ])),
        0
    );

    // the restarted trajectory's final state is the full run's final state
    let full_final = fs::read(full_out.join("snapshot_000010.csv")).unwrap();
    let cont_final = fs::read(cont_out.join("snapshot_000005.csv")).unwrap();
    assert_eq!(full_final, cont_final, "continuation diverged");

    // and its own first snapshot is the restart point itself
    let restart = fs::read(full_out.join("snapshot_000005.csv")).unwrap();
    let cont_first = fs::read(cont_out.join("snapshot_000000.csv")).unwrap();
    assert_eq!(restart, cont_first);
}

#[test]
fn run_then_check_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "flow.cfg",
        "dim=2\nnx=8\nny=8\nlength=1.0\ntau=0.01\nt_final=0.05\npotential=quartic\ninitial=cosine:0.3,1\n",
    );
    let out_dir = dir.path().join("out");
    let out = run_cli(&[
        "run",
        "--config",
        &config,
        "--output",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let trace = out_dir.join("trace.csv");
    let out = run_cli(&["check", "--trace", trace.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("energy-monotonicity: pass"), "{stdout}");
    assert!(stdout.contains("result: pass"), "{stdout}");

    // corrupt one energy value and the check must fail naming the
    // violated inequality
    let text = fs::read_to_string(&trace).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut parts: Vec<String> = lines[2].split(',').map(String::from).collect();
    parts[2] = format!("{}", parts[2].parse::<f64>().unwrap() + 10.0);
    lines[2] = parts.join(",");
    fs::write(&trace, lines.join("\n") + "\n").unwrap();

    let out = run_cli(&["check", "--trace", trace.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("energy-monotonicity: FAIL"), "{stdout}");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("energy-monotonicity"), "{stderr}");
}
