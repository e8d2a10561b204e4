//! End-to-end checks of the command-line surface: artifact layout, rerun
//! determinism, exit codes, and printed values. Fast paths call
//! [`run_command`] in-process; stdout assertions go through the binary.

use erds::cli::run_command;
use erds::config::parse_config;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_erds"))
}

fn quick_config(out_dir: &Path) -> String {
    format!(
        "scenario = \"torus\"\n\n\
         [grid]\nn_cells = 32\n\n\
         [run]\nt_end = 0.2\ncadence = 0.05\n\n\
         [output]\ndirectory = \"{}\"\nformats = [\"csv\", \"json\"]\n",
        out_dir.display()
    )
}

fn only_subdir(dir: &Path) -> PathBuf {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    assert_eq!(dirs.len(), 1, "expected exactly one run directory in {}", dir.display());
    dirs.pop().unwrap()
}

#[test]
fn run_writes_deterministic_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let config_path = tmp.path().join("quick.toml");
    let text = quick_config(&out);
    fs::write(&config_path, &text).unwrap();

    let code = run_command(["erds", "run", config_path.to_str().unwrap()]);
    assert_eq!(code, 0);
    let run_dir = only_subdir(&out);
    let series = fs::read(run_dir.join("series.csv")).unwrap();
    let summary = fs::read(run_dir.join("summary.json")).unwrap();
    let written = fs::read_to_string(run_dir.join("config.toml")).unwrap();

    // The stored configuration is the canonical form of the input.
    assert_eq!(parse_config(&written).unwrap(), parse_config(&text).unwrap());

    let header = std::str::from_utf8(&series).unwrap().lines().next().unwrap().to_string();
    assert_eq!(
        header,
        "t,H,P_total,P_n,P_p,P_e,P_R,mass_n,mass_p,mass_diff,energy,e_min,e_max,n_min,p_min"
    );
    assert!(serde_json::from_slice::<serde_json::Value>(&summary).is_ok());

    // Rerunning the identical configuration reproduces every byte.
    assert_eq!(run_command(["erds", "run", config_path.to_str().unwrap()]), 0);
    assert_eq!(fs::read(run_dir.join("series.csv")).unwrap(), series);
    assert_eq!(fs::read(run_dir.join("summary.json")).unwrap(), summary);
}

#[test]
fn exit_codes_split_usage_config_and_numerics() {
    let tmp = tempfile::tempdir().unwrap();

    // Usage problems and config problems exit 1.
    assert_eq!(run_command(["erds", "run", "/nonexistent/such.toml"]), 1);
    assert_eq!(run_command(["erds", "frobnicate"]), 1);
    assert_eq!(run_command(["erds"]), 1);
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "scenario = \"torus\"\n[model]\nkappa = -1.0\nsigma = 0.9\n").unwrap();
    assert_eq!(run_command(["erds", "run", bad.to_str().unwrap()]), 1);

    // Help is a success.
    assert_eq!(run_command(["erds", "--help"]), 0);

    // A run that loses positivity exits 2.
    let blow = tmp.path().join("blow.toml");
    fs::write(
        &blow,
        format!(
            "scenario = \"torus\"\n[grid]\nn_cells = 32\n[network]\nk = 1e8\n\
             [run]\ndt = 0.05\nt_end = 0.2\n[output]\ndirectory = \"{}\"\n",
            tmp.path().join("blow-runs").display()
        ),
    )
    .unwrap();
    assert_eq!(run_command(["erds", "run", blow.to_str().unwrap()]), 2);
}

#[test]
fn subcommands_succeed_in_process() {
    assert_eq!(run_command(["erds", "equilibrium", "--C0", "-1.5", "--E0", "1.0", "--c", "1.0"]), 0);
    assert_eq!(run_command(["erds", "check-inequalities", "--samples", "500", "--seed", "11"]), 0);
    assert_eq!(run_command(["erds", "constants", "--n-cells", "16", "--seed", "1"]), 0);
}

#[test]
fn equilibrium_prints_the_closed_form() {
    let output = bin()
        .args(["equilibrium", "--C0", "1.5", "--E0", "1", "--c", "1"])
        .output()
        .unwrap();
    assert!(output.status.success());
    assert_eq!(
        std::str::from_utf8(&output.stdout).unwrap(),
        "C_n = 2\nC_p = 0.5\nSigma_e = 1.75\n"
    );
}

#[test]
fn constants_prints_grid_estimates() {
    let output = bin().args(["constants", "--n-cells", "64"]).output().unwrap();
    assert!(output.status.success());
    let stdout = std::str::from_utf8(&output.stdout).unwrap();
    let value = |prefix: &str| -> f64 {
        stdout
            .lines()
            .find_map(|l| l.strip_prefix(prefix))
            .unwrap_or_else(|| panic!("missing {prefix} line in {stdout:?}"))
            .parse()
            .unwrap()
    };
    let c_p = value("C_P = ");
    let continuum = 1.0 / (4.0 * std::f64::consts::PI * std::f64::consts::PI);
    assert!((c_p - continuum).abs() < 0.01 * continuum, "C_P = {c_p}");
    assert!(value("C_LS = ") > 0.0);
    assert!(value("C_S = ") > 0.0);
}

#[test]
fn closed_stdout_ends_the_process_quietly() {
    // Consumer drops the pipe before the report is printed; the process
    // must end with the conventional SIGPIPE status instead of panicking.
    let mut child = bin()
        .args(["check-inequalities", "--samples", "200000"])
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    drop(child.stdout.take());
    let status = child.wait().unwrap();
    assert_eq!(status.code(), Some(141));
    let mut stderr = String::new();
    use std::io::Read;
    child.stderr.take().unwrap().read_to_string(&mut stderr).unwrap();
    assert!(!stderr.contains("panicked"), "stderr: {stderr}");
}

#[test]
fn sweep_expands_and_runs_every_combination() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let config_path = tmp.path().join("sweep.toml");
    fs::write(
        &config_path,
        format!(
            "scenario = \"torus\"\n\n\
             [grid]\nn_cells = 32\n\n\
             [run]\ncadence = 0.05\n\n\
             [output]\ndirectory = \"{}\"\nformats = [\"json\"]\n\n\
             [sweep]\n\"run.t_end\" = [0.1, 0.15]\n\"model.kappa\" = [0.04, 0.08]\n",
            out.display()
        ),
    )
    .unwrap();

    let output = bin()
        .args(["sweep", config_path.to_str().unwrap()])
        .env("ERDS_WORKERS", "2")
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let stdout = std::str::from_utf8(&output.stdout).unwrap();
    let ok_lines: Vec<&str> = stdout.lines().filter(|l| l.contains(" ok ")).collect();
    assert_eq!(ok_lines.len(), 4, "stdout: {stdout:?}");

    let run_dirs: Vec<PathBuf> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    assert_eq!(run_dirs.len(), 4);
    for dir in run_dirs {
        assert!(dir.join("summary.json").exists());
        assert!(!dir.join("series.csv").exists());
    }
}
