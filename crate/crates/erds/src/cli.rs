//! Command-line front end: configured runs with CSV/JSON artifacts,
//! closed-form equilibria, inequality stress reports, config sweeps, and
//! functional-constant estimation.
//!
//! Identical configuration and seed produce byte-identical artifacts.

use crate::config::{parse_config, parse_table, Config, OutputFormat};
use crate::diagnostics::{
    analyze, estimate_functional_constants_seeded, DiagnosticsReport, FunctionalConstants,
};
use crate::equilibrium::solve_torus_equilibrium;
use crate::grid::Grid;
use crate::inequalities::randomized_margins;
use crate::simulator::{integrate_partial, Trajectory};
use crate::{Error, Result};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Writes to stdout, terminating quietly with the conventional 128+SIGPIPE
/// status when the consumer goes away mid-stream instead of panicking on
/// the next print.
fn emit(args: std::fmt::Arguments<'_>, newline: bool) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let written = out.write_fmt(args).and_then(|()| if newline { out.write_all(b"\n") } else { Ok(()) });
    if written.is_err() {
        std::process::exit(141);
    }
}

macro_rules! outln {
    ($($arg:tt)*) => { emit(format_args!($($arg)*), true) };
}

macro_rules! out {
    ($($arg:tt)*) => { emit(format_args!($($arg)*), false) };
}

#[derive(Parser)]
#[command(name = "erds", version, about = "Energy-reaction-diffusion runs with entropy-decay certificates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a configured scenario and write its diagnostic artifacts.
    Run {
        /// Path to a TOML run configuration.
        config: PathBuf,
    },
    /// Solve the spatially flat two-species equilibrium in closed form.
    Equilibrium {
        /// Conserved density difference, the integral of n - p.
        #[arg(long = "C0", allow_hyphen_values = true)]
        c0: f64,
        /// Total energy, the integral of e.
        #[arg(long = "E0")]
        e0: f64,
        /// Heat weight of the energy entropy.
        #[arg(long, default_value_t = 2.0)]
        c: f64,
    },
    /// Stress every built-in inequality with randomized inputs and report
    /// the worst margins.
    CheckInequalities {
        /// Randomized inputs per inequality family.
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Expand the [sweep] table of a configuration into a batch of runs.
    Sweep {
        /// Path to a TOML run configuration with a [sweep] table.
        config: PathBuf,
    },
    /// Estimate the Poincare, log-Sobolev and embedding constants of a grid.
    Constants {
        #[arg(long, default_value_t = 1)]
        dim: usize,
        #[arg(long, default_value_t = 256)]
        n_cells: usize,
        /// Use a no-flux box [-L, L]^d instead of the unit torus.
        #[arg(long)]
        half_width: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Runs one invocation and returns the process exit code: 0 on success, 1
/// for configuration or usage problems, 2 for numerical failures.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numerical { .. } | Error::StepRejected { .. } => 2,
        _ => 1,
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { config } => {
            let cfg = load_config(&config)?;
            let dir = execute_run(&cfg)?;
            outln!("run {}", cfg.run_id());
            outln!("wrote {}", dir.display());
            Ok(())
        }
        Command::Equilibrium { c0, e0, c } => {
            let eq = solve_torus_equilibrium(c0, e0, c)?;
            outln!("C_n = {}", eq.c_n());
            outln!("C_p = {}", eq.c_p());
            outln!("Sigma_e = {}", eq.sigma_e);
            Ok(())
        }
        Command::CheckInequalities { samples, seed } => {
            let report = randomized_margins(samples, seed)?;
            out!("{report}");
            let violations = report.total_violations();
            if violations > 0 {
                return Err(Error::numerical(
                    format!("{violations} inequality violations beyond rounding tolerance"),
                    None,
                ));
            }
            Ok(())
        }
        Command::Sweep { config } => cmd_sweep(&config),
        Command::Constants { dim, n_cells, half_width, seed } => {
            let grid = match half_width {
                Some(l) => Grid::boxed(dim, n_cells, l)?,
                None => Grid::torus(dim, n_cells)?,
            };
            let c = estimate_functional_constants_seeded(&grid, None, seed)?;
            outln!("C_P = {:.12e}", c.c_p);
            outln!("C_LS = {:.12e}", c.c_ls);
            outln!("C_S = {:.12e}", c.c_s);
            Ok(())
        }
    }
}

fn load_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

/// Integrates the configured scenario and writes its artifacts into a
/// directory named by the config hash. Returns that directory.
fn execute_run(cfg: &Config) -> Result<PathBuf> {
    let sc = cfg.scenario()?;
    let (traj, failure) = integrate_partial(&sc)?;
    if let Some(err) = failure {
        return Err(attach_last_state(err, &traj));
    }
    let supplied = supplied_constants(cfg, &sc);
    let report = analyze(&traj, &sc, supplied)?;

    let dir = Path::new(&cfg.output.directory).join(cfg.run_id());
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.toml"), cfg.emit())?;
    if cfg.output.formats.contains(&OutputFormat::Csv) {
        std::fs::write(dir.join("series.csv"), series_csv(&report))?;
    }
    if cfg.output.formats.contains(&OutputFormat::Json) {
        let mut text = serde_json::to_string_pretty(&report.summary())
            .map_err(|e| Error::argument(format!("summary serialization failed: {e}")))?;
        text.push('\n');
        std::fs::write(dir.join("summary.json"), text)?;
    }
    Ok(dir)
}

/// Appends the extrema of the last recorded snapshot to a mid-run failure,
/// so the error shows both the failing time and the state the run died in.
fn attach_last_state(err: Error, traj: &Trajectory) -> Error {
    let (Some(state), Some(&t_rec)) = (traj.states.last(), traj.times.last()) else {
        return err;
    };
    let span = |f: &[f64]| {
        let lo = f.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        format!("[{lo:.6e}, {hi:.6e}]")
    };
    let mut parts: Vec<String> = if state.u.len() == 2 {
        vec![format!("n in {}", span(&state.u[0])), format!("p in {}", span(&state.u[1]))]
    } else {
        state.u.iter().enumerate().map(|(s, u)| format!("u{s} in {}", span(u))).collect()
    };
    parts.push(format!("e in {}", span(&state.e)));
    let detail = format!("last recorded state at t = {t_rec}: {}", parts.join(", "));
    match err {
        Error::Numerical { what, t } => Error::Numerical { what: format!("{what}; {detail}"), t },
        Error::StepRejected { what, t } => Error::StepRejected { what: format!("{what}; {detail}"), t },
        other => Error::numerical(format!("{other}; {detail}"), None),
    }
}

/// Resolves the functional constants the run should use: explicit overrides
/// win, then a seeded estimate when the run seed is nonzero. `None` defers
/// to the seed-0 estimate inside the analysis pass.
fn supplied_constants(cfg: &Config, sc: &crate::simulator::Scenario) -> Option<FunctionalConstants> {
    if let Some(ov) = &cfg.diagnostics.constants {
        return Some(FunctionalConstants {
            c_p: ov.c_p,
            c_ls: ov.c_ls,
            c_s: ov.c_s,
            c_ls_weighted: ov.c_ls_weighted,
            trial_based: false,
        });
    }
    if cfg.run.seed == 0 {
        return None;
    }
    let mass = sc.grid.integrate(&sc.initial.e);
    if !(mass > 0.0) {
        return None;
    }
    let weight: Vec<f64> = sc.initial.e.iter().map(|x| x / mass).collect();
    // On failure (grid too large for the eigensolve) the analysis pass
    // repeats the attempt and flags the unavailability itself.
    estimate_functional_constants_seeded(&sc.grid, Some(&weight), cfg.run.seed).ok()
}

fn series_csv(report: &DiagnosticsReport) -> String {
    let mut out =
        String::from("t,H,P_total,P_n,P_p,P_e,P_R,mass_n,mass_p,mass_diff,energy,e_min,e_max,n_min,p_min\n");
    for r in &report.series {
        let cols = [
            r.t,
            r.entropy,
            r.production.total,
            r.production.p_n,
            r.production.p_p,
            r.production.p_e,
            r.production.p_r,
            r.mass_n,
            r.mass_p,
            r.charge,
            r.energy,
            r.e_min,
            r.e_max,
            r.n_min,
            r.p_min,
        ];
        let row: Vec<String> = cols.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn sweep_issue(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config(vec![crate::error::ConfigIssue {
        path: path.into(),
        line: None,
        column: None,
        message: message.into(),
    }])
}

/// Expands the [sweep] table (dotted key to list of values) into the
/// cartesian product of override combinations applied to the base document,
/// validating every combination before anything runs.
fn expand_sweep(text: &str) -> Result<Vec<Config>> {
    let mut root = parse_table(text)?;
    let sweep = match root.remove("sweep") {
        Some(toml::Value::Table(t)) => t,
        Some(_) => return Err(sweep_issue("sweep", "expected a table of key = [values] overrides")),
        None => return Err(sweep_issue("sweep", "sweep configurations need a [sweep] table")),
    };
    let mut axes: Vec<(String, Vec<toml::Value>)> = Vec::new();
    for (key, value) in &sweep {
        match value.as_array() {
            Some(arr) if !arr.is_empty() => axes.push((key.clone(), arr.clone())),
            _ => return Err(sweep_issue(format!("sweep.{key}"), "expected a nonempty list of values")),
        }
    }
    if axes.is_empty() {
        return Err(sweep_issue("sweep", "the sweep table is empty"));
    }
    let total: usize = axes.iter().map(|(_, v)| v.len()).product();
    if total > 4096 {
        return Err(sweep_issue("sweep", format!("expands to {total} runs; the cap is 4096")));
    }
    // Table iteration is ordered, so the expansion order is deterministic.
    let mut combos = Vec::with_capacity(total);
    for idx in 0..total {
        let mut doc = root.clone();
        let mut rem = idx;
        for (key, values) in &axes {
            let pick = rem % values.len();
            rem /= values.len();
            set_path(&mut doc, key, values[pick].clone())?;
        }
        let cfg = parse_config(&doc.to_string()).map_err(|err| match err {
            Error::Config(mut issues) => {
                for issue in issues.iter_mut() {
                    issue.path = format!("sweep run {idx}: {}", issue.path);
                }
                Error::Config(issues)
            }
            other => other,
        })?;
        combos.push(cfg);
    }
    Ok(combos)
}

fn set_path(doc: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let mut value = Some(value);
    let mut parts = path.split('.').peekable();
    let mut table = doc;
    while let Some(part) = parts.next() {
        if parts.peek().is_none() {
            table.insert(part.to_string(), value.take().unwrap());
            return Ok(());
        }
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| {
            sweep_issue(format!("sweep.{path}"), "the override path descends into a non-table key")
        })?;
    }
    Err(sweep_issue("sweep", "override keys must be nonempty"))
}

fn worker_count(jobs: usize) -> usize {
    let default = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let configured = std::env::var("ERDS_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&w| w > 0);
    configured.unwrap_or(default).min(jobs.max(1))
}

fn cmd_sweep(path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path)?;
    let combos = expand_sweep(&text)?;
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<PathBuf>>>> = combos.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..worker_count(combos.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= combos.len() {
                    break;
                }
                *slots[i].lock().unwrap() = Some(execute_run(&combos[i]));
            });
        }
    });
    let mut failed = 0usize;
    let mut numerical = false;
    for (cfg, slot) in combos.iter().zip(&slots) {
        match slot.lock().unwrap().take().expect("every sweep slot is filled") {
            Ok(dir) => outln!("{} ok {}", cfg.run_id(), dir.display()),
            Err(err) => {
                outln!("{} failed", cfg.run_id());
                eprintln!("run {}: {err}", cfg.run_id());
                failed += 1;
                numerical = numerical || exit_code(&err) == 2;
            }
        }
    }
    if failed > 0 {
        let msg = format!("{failed} of {} sweep runs failed", combos.len());
        return Err(if numerical { Error::numerical(msg, None) } else { Error::argument(msg) });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_expansion_is_cartesian_and_validated() {
        let text = r#"
scenario = "torus"

[run]
t_end = 0.2

[sweep]
"model.kappa" = [0.04, 0.08]
"run.seed" = [0, 1, 2]
"#;
        let combos = expand_sweep(text).unwrap();
        assert_eq!(combos.len(), 6);
        let mut kappas: Vec<f64> = combos.iter().map(|c| c.model.kappa).collect();
        kappas.dedup();
        assert!(combos.iter().all(|c| c.run.t_end == 0.2));
        let ids: std::collections::HashSet<String> = combos.iter().map(|c| c.run_id()).collect();
        assert_eq!(ids.len(), 6, "every combination hashes to its own directory");

        let bad = expand_sweep("scenario = \"torus\"\n[sweep]\n\"model.kappa\" = [-1.0]\n");
        assert!(bad.is_err());
        assert!(expand_sweep("scenario = \"torus\"\n").is_err());
    }

    #[test]
    fn sweep_paths_reject_non_table_descent() {
        let err = expand_sweep("scenario = \"torus\"\n[sweep]\n\"scenario.kind\" = [1]\n").unwrap_err();
        assert!(format!("{err}").contains("non-table"));
    }

    #[test]
    fn exit_codes_split_validation_from_numerics() {
        assert_eq!(exit_code(&Error::argument("x")), 1);
        assert_eq!(exit_code(&Error::domain("x")), 1);
        assert_eq!(exit_code(&Error::numerical("x", None)), 2);
        assert_eq!(exit_code(&Error::StepRejected { what: "x".into(), t: 0.0 }), 2);
    }

    #[test]
    fn csv_layout_is_fixed() {
        let report = DiagnosticsReport {
            series: vec![],
            k_formula: f64::NAN,
            k_hat: f64::NAN,
            k_fit: f64::NAN,
            r_squared: f64::NAN,
            ckp_prefactor: f64::NAN,
            final_l1: [0.0; 3],
            max_dissipation_residual: 0.0,
            eep_margin: f64::NAN,
            decay_factor: f64::NAN,
            constants: FunctionalConstants {
                c_p: 1.0,
                c_ls: 1.0,
                c_s: 1.0,
                c_ls_weighted: None,
                trial_based: true,
            },
            breakdown: None,
            flags: vec![],
        };
        let csv = series_csv(&report);
        assert_eq!(
            csv,
            "t,H,P_total,P_n,P_p,P_e,P_R,mass_n,mass_p,mass_diff,energy,e_min,e_max,n_min,p_min\n"
        );
    }
}
