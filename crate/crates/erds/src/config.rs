//! TOML run configuration: parsing with aggregated error reports, canonical
//! re-emission, and scenario construction. One file describes one run; the
//! canonical emission hashes to the run directory name.

use crate::entropy::{EnergyForm, EntropyModel, StateField};
use crate::error::ConfigIssue;
use crate::grid::Grid;
use crate::reaction::{RateForm, ReactionNetwork};
use crate::simulator::{confined_scenario, general_scenario, torus_scenario, Scenario, SystemKind};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GridBlock {
    pub dim: usize,
    pub n_cells: usize,
    /// Box half-width; meaningful for confined runs only.
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBlock {
    pub c: f64,
    pub kappa: f64,
    /// Energy weight exponent; the closed-form scenarios require 1/2.
    pub sigma: f64,
    /// Species weight exponents; the closed-form scenarios require 1/2.
    pub b: [f64; 2],
    /// Amplitude of the spatial entropy weight `1 + a cos(2πx)`; general
    /// runs only.
    pub gamma_amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateKind {
    Constant,
    ReadShockleyHall,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkBlock {
    pub rate: RateKind,
    pub k: f64,
    /// Saturation coefficients of the density-dependent rate.
    pub c_n: f64,
    pub c_p: f64,
}

/// Amplitudes of the built-in initial-data family: single-mode perturbations
/// of the flat (torus) or stationary (confined) profile with fixed phases.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialBlock {
    pub n_amplitude: f64,
    pub p_amplitude: f64,
    pub e_amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialKind {
    /// `V = x²/2 + (ln π)/4`, the well whose stationary profile is the unit
    /// Gaussian.
    Harmonic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunBlock {
    pub dt: Option<f64>,
    pub t_end: f64,
    pub cadence: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputBlock {
    pub directory: String,
    pub formats: Vec<OutputFormat>,
}

/// Analytic functional constants supplied by the user in place of the
/// trial-based estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantOverrides {
    pub c_p: f64,
    pub c_ls: f64,
    pub c_s: f64,
    pub c_ls_weighted: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsBlock {
    pub eep: bool,
    pub constants: Option<ConstantOverrides>,
}

/// A fully resolved run description; every field has a value after parsing.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub scenario: SystemKind,
    pub grid: GridBlock,
    pub model: ModelBlock,
    pub network: NetworkBlock,
    pub initial: InitialBlock,
    pub potential: PotentialKind,
    pub run: RunBlock,
    pub output: OutputBlock,
    pub diagnostics: DiagnosticsBlock,
}

impl Config {
    /// Template matching [`Scenario::default_torus`].
    pub fn torus_defaults() -> Config {
        Config {
            scenario: SystemKind::Torus,
            grid: GridBlock { dim: 1, n_cells: 256, half_width: 6.0 },
            model: ModelBlock { c: 2.0, kappa: 0.04, sigma: 0.5, b: [0.5, 0.5], gamma_amplitude: 0.0 },
            network: NetworkBlock { rate: RateKind::Constant, k: 2.0, c_n: 1.0, c_p: 1.0 },
            initial: InitialBlock { n_amplitude: 0.2, p_amplitude: 0.2, e_amplitude: 0.1 },
            potential: PotentialKind::Harmonic,
            run: RunBlock { dt: None, t_end: 12.0, cadence: 0.05, seed: 0 },
            output: OutputBlock { directory: "runs".into(), formats: vec![OutputFormat::Csv, OutputFormat::Json] },
            diagnostics: DiagnosticsBlock { eep: true, constants: None },
        }
    }

    /// Template matching [`Scenario::default_confined`].
    pub fn confined_defaults() -> Config {
        let mut cfg = Config::torus_defaults();
        cfg.scenario = SystemKind::Confined;
        cfg.grid.n_cells = 384;
        cfg.model.kappa = 1.0;
        cfg.initial.p_amplitude = -0.2;
        cfg.run.t_end = 8.0;
        cfg
    }

    /// Template matching [`Scenario::default_general`].
    pub fn general_defaults() -> Config {
        let mut cfg = Config::torus_defaults();
        cfg.scenario = SystemKind::General;
        cfg.run.t_end = 2.0;
        cfg
    }

    /// Canonical emission; fixed key order, lossless float formatting, only
    /// the keys meaningful for the scenario kind. `parse_config` of the
    /// result reproduces the config exactly.
    pub fn emit(&self) -> String {
        let mut out = String::new();
        let kind = match self.scenario {
            SystemKind::Torus => "torus",
            SystemKind::Confined => "confined",
            SystemKind::General => "general",
        };
        out.push_str(&format!("scenario = \"{kind}\"\n\n"));
        out.push_str("[grid]\n");
        out.push_str(&format!("dim = {}\n", self.grid.dim));
        out.push_str(&format!("n_cells = {}\n", self.grid.n_cells));
        if self.scenario == SystemKind::Confined {
            out.push_str(&format!("half_width = {}\n", float_token(self.grid.half_width)));
        }
        out.push_str("\n[model]\n");
        out.push_str(&format!("c = {}\n", float_token(self.model.c)));
        out.push_str(&format!("kappa = {}\n", float_token(self.model.kappa)));
        out.push_str(&format!("sigma = {}\n", float_token(self.model.sigma)));
        out.push_str(&format!("b = [{}, {}]\n", float_token(self.model.b[0]), float_token(self.model.b[1])));
        if self.scenario == SystemKind::General {
            out.push_str(&format!("gamma_amplitude = {}\n", float_token(self.model.gamma_amplitude)));
        }
        out.push_str("\n[network]\n");
        let rate = match self.network.rate {
            RateKind::Constant => "constant",
            RateKind::ReadShockleyHall => "read-shockley-hall",
        };
        out.push_str(&format!("rate = \"{rate}\"\n"));
        out.push_str(&format!("k = {}\n", float_token(self.network.k)));
        if self.network.rate == RateKind::ReadShockleyHall {
            out.push_str(&format!("c_n = {}\n", float_token(self.network.c_n)));
            out.push_str(&format!("c_p = {}\n", float_token(self.network.c_p)));
        }
        out.push_str("\n[initial]\n");
        out.push_str(&format!("n_amplitude = {}\n", float_token(self.initial.n_amplitude)));
        out.push_str(&format!("p_amplitude = {}\n", float_token(self.initial.p_amplitude)));
        out.push_str(&format!("e_amplitude = {}\n", float_token(self.initial.e_amplitude)));
        if self.scenario == SystemKind::Confined {
            out.push_str("\n[potential]\nkind = \"harmonic\"\n");
        }
        out.push_str("\n[run]\n");
        if let Some(dt) = self.run.dt {
            out.push_str(&format!("dt = {}\n", float_token(dt)));
        }
        out.push_str(&format!("t_end = {}\n", float_token(self.run.t_end)));
        out.push_str(&format!("cadence = {}\n", float_token(self.run.cadence)));
        out.push_str(&format!("seed = {}\n", self.run.seed));
        out.push_str("\n[output]\n");
        out.push_str(&format!("directory = \"{}\"\n", self.output.directory));
        let formats: Vec<&str> = self
            .output
            .formats
            .iter()
            .map(|f| match f {
                OutputFormat::Csv => "\"csv\"",
                OutputFormat::Json => "\"json\"",
            })
            .collect();
        out.push_str(&format!("formats = [{}]\n", formats.join(", ")));
        out.push_str("\n[diagnostics]\n");
        out.push_str(&format!("eep = {}\n", self.diagnostics.eep));
        if let Some(ov) = &self.diagnostics.constants {
            out.push_str(&format!("c_p = {}\n", float_token(ov.c_p)));
            out.push_str(&format!("c_ls = {}\n", float_token(ov.c_ls)));
            out.push_str(&format!("c_s = {}\n", float_token(ov.c_s)));
            if let Some(w) = ov.c_ls_weighted {
                out.push_str(&format!("c_ls_weighted = {}\n", float_token(w)));
            }
        }
        out
    }

    /// FNV-1a over the canonical emission.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in self.emit().bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    /// Run-directory name derived from the config content.
    pub fn run_id(&self) -> String {
        format!("{:016x}", self.hash())
    }

    /// Builds the runnable scenario this config describes.
    pub fn scenario(&self) -> Result<Scenario> {
        let tau = std::f64::consts::TAU;
        match self.scenario {
            SystemKind::Torus => {
                let grid = Grid::torus(self.grid.dim, self.grid.n_cells)?;
                let initial = torus_family(&grid, &self.initial)?;
                torus_scenario(
                    grid,
                    self.model.kappa,
                    self.rate_form(),
                    self.model.c,
                    initial,
                    self.run.dt,
                    self.run.t_end,
                    self.run.cadence,
                )
            }
            SystemKind::Confined => {
                let grid = Grid::boxed(self.grid.dim, self.grid.n_cells, self.grid.half_width)?;
                let v: Vec<f64> = (0..grid.cells())
                    .map(|i| {
                        let x = grid.axis_coord(0, i);
                        0.5 * x * x + 0.25 * std::f64::consts::PI.ln()
                    })
                    .collect();
                let mut e_star: Vec<f64> = v.iter().map(|&vi| (-2.0 * vi).exp()).collect();
                let z = grid.integrate(&e_star);
                for x in e_star.iter_mut() {
                    *x /= z;
                }
                let half = self.grid.half_width;
                let bump = |a: f64| -> Vec<f64> {
                    (0..grid.cells())
                        .map(|i| {
                            let x = grid.axis_coord(0, i);
                            1.0 + a * (std::f64::consts::PI * x / half).sin()
                        })
                        .collect()
                };
                let mul = |f: &[f64], g: &[f64]| -> Vec<f64> {
                    f.iter().zip(g).map(|(a, b)| a * b).collect()
                };
                let initial = StateField::new(
                    grid,
                    vec![
                        mul(&e_star, &bump(self.initial.n_amplitude)),
                        mul(&e_star, &bump(self.initial.p_amplitude)),
                    ],
                    mul(&e_star, &bump(self.initial.e_amplitude)),
                )?;
                confined_scenario(
                    grid,
                    self.model.kappa,
                    self.rate_form(),
                    self.model.c,
                    v,
                    initial,
                    self.run.dt,
                    self.run.t_end,
                    self.run.cadence,
                )
            }
            SystemKind::General => {
                let grid = Grid::torus(self.grid.dim, self.grid.n_cells)?;
                let initial = torus_family(&grid, &self.initial)?;
                let model = EntropyModel::separable(
                    self.model.c,
                    EnergyForm::Power { sigma: self.model.sigma },
                    self.model.b.to_vec(),
                    vec![1.0, 1.0],
                )?;
                let gamma = if self.model.gamma_amplitude != 0.0 {
                    let a = self.model.gamma_amplitude;
                    Some(
                        (0..grid.cells())
                            .map(|i| 1.0 + a * (tau * grid.axis_coord(0, i)).cos())
                            .collect(),
                    )
                } else {
                    None
                };
                general_scenario(
                    grid,
                    self.model.kappa,
                    model,
                    ReactionNetwork::bipolar(self.rate_form()),
                    gamma,
                    initial,
                    self.run.dt,
                    self.run.t_end,
                    self.run.cadence,
                )
            }
        }
    }

    fn rate_form(&self) -> RateForm {
        match self.network.rate {
            RateKind::Constant => RateForm::Constant { k: self.network.k },
            RateKind::ReadShockleyHall => RateForm::ReadShockleyHall {
                k0: self.network.k,
                c_n: self.network.c_n,
                c_p: self.network.c_p,
            },
        }
    }
}

/// Lossless TOML float token: `Display` for `f64` round-trips, with a forced
/// decimal point so integral values stay floats.
fn float_token(v: f64) -> String {
    let s = format!("{v}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

/// The single-mode torus initial data: `1 + a cos(2πx + φ)` with phases
/// `(0, -π/2, 0)` for `(n, p, e)`.
fn torus_family(grid: &Grid, initial: &InitialBlock) -> Result<StateField> {
    let tau = std::f64::consts::TAU;
    let field = |a: f64, phase: f64| -> Vec<f64> {
        (0..grid.cells()).map(|i| 1.0 + a * (tau * grid.axis_coord(0, i) + phase).cos()).collect()
    };
    StateField::new(
        *grid,
        vec![
            field(initial.n_amplitude, 0.0),
            field(initial.p_amplitude, -0.5 * std::f64::consts::PI),
        ],
        field(initial.e_amplitude, 0.0),
    )
}

struct Walker {
    issues: Vec<ConfigIssue>,
}

impl Walker {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.issues.push(ConfigIssue {
            path: path.into(),
            line: None,
            column: None,
            message: message.into(),
        });
    }

    fn unknown_keys(&mut self, table: &toml::Table, base: &str, known: &[&str]) {
        for key in table.keys() {
            if !known.contains(&key.as_str()) {
                let path = if base.is_empty() { key.clone() } else { format!("{base}.{key}") };
                self.push(path, "unknown key");
            }
        }
    }

    fn table<'v>(&mut self, root: &'v toml::Table, key: &str) -> Option<&'v toml::Table> {
        match root.get(key) {
            None => None,
            Some(v) => match v.as_table() {
                Some(t) => Some(t),
                None => {
                    self.push(key, "expected a table");
                    None
                }
            },
        }
    }

    fn float(&mut self, table: &toml::Table, base: &str, key: &str) -> Option<f64> {
        let v = table.get(key)?;
        match (v.as_float(), v.as_integer()) {
            (Some(f), _) => Some(f),
            (None, Some(i)) => Some(i as f64),
            _ => {
                self.push(format!("{base}.{key}"), "expected a number");
                None
            }
        }
    }

    fn integer(&mut self, table: &toml::Table, base: &str, key: &str) -> Option<i64> {
        let v = table.get(key)?;
        match v.as_integer() {
            Some(i) => Some(i),
            None => {
                self.push(format!("{base}.{key}"), "expected an integer");
                None
            }
        }
    }

    fn string<'v>(&mut self, table: &'v toml::Table, base: &str, key: &str) -> Option<&'v str> {
        let v = table.get(key)?;
        match v.as_str() {
            Some(s) => Some(s),
            None => {
                self.push(format!("{base}.{key}"), "expected a string");
                None
            }
        }
    }

    fn boolean(&mut self, table: &toml::Table, base: &str, key: &str) -> Option<bool> {
        let v = table.get(key)?;
        match v.as_bool() {
            Some(b) => Some(b),
            None => {
                self.push(format!("{base}.{key}"), "expected a boolean");
                None
            }
        }
    }
}

fn offset_to_line_col(text: &str, offset: usize) -> (usize, usize) {
    let mut line = 1;
    let mut col = 1;
    for (i, ch) in text.char_indices() {
        if i >= offset {
            break;
        }
        if ch == '\n' {
            line += 1;
            col = 1;
        } else {
            col += 1;
        }
    }
    (line, col)
}

/// Parses a TOML document, mapping syntax failures (including duplicate
/// keys) to a positioned `<syntax>` issue.
pub(crate) fn parse_table(text: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>().map_err(|err| {
        let (line, column) = match err.span() {
            Some(span) => {
                let (l, c) = offset_to_line_col(text, span.start);
                (Some(l), Some(c))
            }
            None => (None, None),
        };
        Error::Config(vec![ConfigIssue {
            path: "<syntax>".into(),
            line,
            column,
            message: err.message().to_string(),
        }])
    })
}

/// Parses and fully validates a run configuration, reporting every problem
/// found rather than stopping at the first. Unknown keys are rejected;
/// omitted keys take the defaults of the scenario kind's template.
pub fn parse_config(text: &str) -> Result<Config> {
    let root = parse_table(text)?;
    let mut w = Walker { issues: Vec::new() };

    let kind = match root.get("scenario") {
        None => {
            w.push("scenario", "missing; expected \"torus\", \"confined\", or \"general\"");
            None
        }
        Some(v) => match v.as_str() {
            Some("torus") => Some(SystemKind::Torus),
            Some("confined") => Some(SystemKind::Confined),
            Some("general") => Some(SystemKind::General),
            Some(other) => {
                w.push("scenario", format!("unknown scenario {other:?}; expected \"torus\", \"confined\", or \"general\""));
                None
            }
            None => {
                w.push("scenario", "expected a string");
                None
            }
        },
    };

    w.unknown_keys(
        &root,
        "",
        &["scenario", "grid", "model", "network", "initial", "potential", "run", "output", "diagnostics"],
    );

    let mut cfg = match kind {
        Some(SystemKind::Torus) | None => Config::torus_defaults(),
        Some(SystemKind::Confined) => Config::confined_defaults(),
        Some(SystemKind::General) => Config::general_defaults(),
    };
    let confined = kind == Some(SystemKind::Confined);
    let general = kind == Some(SystemKind::General);

    if let Some(t) = w.table(&root, "grid") {
        w.unknown_keys(t, "grid", &["dim", "n_cells", "half_width"]);
        if !confined && t.contains_key("half_width") {
            w.push("grid.half_width", "only box grids have a half-width; torus and general runs use the unit cell");
        }
        if let Some(d) = w.integer(t, "grid", "dim") {
            if d == 1 || d == 2 {
                cfg.grid.dim = d as usize;
            } else {
                w.push("grid.dim", format!("expected 1 or 2, got {d}"));
            }
        }
        if let Some(n) = w.integer(t, "grid", "n_cells") {
            if n >= 4 && n <= 1 << 24 {
                cfg.grid.n_cells = n as usize;
            } else {
                w.push("grid.n_cells", format!("expected between 4 and 2^24 cells per axis, got {n}"));
            }
        }
        if confined {
            if let Some(l) = w.float(t, "grid", "half_width") {
                if l > 0.0 && l.is_finite() {
                    cfg.grid.half_width = l;
                } else {
                    w.push("grid.half_width", format!("expected a positive width, got {l}"));
                }
            }
        }
    }

    if let Some(t) = w.table(&root, "model") {
        w.unknown_keys(t, "model", &["c", "kappa", "sigma", "b", "gamma_amplitude"]);
        if !general && t.contains_key("gamma_amplitude") {
            w.push("model.gamma_amplitude", "spatial entropy weights apply to general runs only");
        }
        if let Some(c) = w.float(t, "model", "c") {
            if c >= 0.0 && c.is_finite() {
                cfg.model.c = c;
            } else {
                w.push("model.c", format!("expected a nonnegative heat weight, got {c}"));
            }
        }
        if let Some(kappa) = w.float(t, "model", "kappa") {
            if kappa > 0.0 && kappa.is_finite() {
                cfg.model.kappa = kappa;
            } else {
                w.push("model.kappa", format!("expected a positive diffusivity, got {kappa}"));
            }
        }
        if let Some(sigma) = w.float(t, "model", "sigma") {
            if sigma > 0.0 && sigma < 1.0 {
                cfg.model.sigma = sigma;
            } else {
                w.push("model.sigma", format!("expected an exponent in (0, 1), got {sigma}"));
            }
        }
        if let Some(v) = t.get("b") {
            match v.as_array() {
                Some(arr) if arr.len() == 2 => {
                    for (i, item) in arr.iter().enumerate() {
                        let val = item.as_float().or_else(|| item.as_integer().map(|x| x as f64));
                        match val {
                            Some(x) if x > 0.0 && x < 1.0 => cfg.model.b[i] = x,
                            Some(x) => w.push("model.b", format!("expected exponents in (0, 1), got {x}")),
                            None => w.push("model.b", "expected an array of two numbers"),
                        }
                    }
                }
                _ => w.push("model.b", "expected an array of two numbers"),
            }
        }
        if general {
            if let Some(a) = w.float(t, "model", "gamma_amplitude") {
                if a.abs() < 1.0 {
                    cfg.model.gamma_amplitude = a;
                } else {
                    w.push("model.gamma_amplitude", format!("expected |amplitude| < 1 to keep the weight positive, got {a}"));
                }
            }
        }
    }

    if !general {
        let sqrt_family = (cfg.model.sigma - 0.5).abs() < 1e-12
            && cfg.model.b.iter().all(|&bi| (bi - 0.5).abs() < 1e-12);
        if !sqrt_family {
            w.push(
                "model",
                "torus and confined runs use the square-root weight family (sigma = b = 1/2); \
                 use scenario = \"general\" for other exponents",
            );
        }
    }

    if let Some(t) = w.table(&root, "network") {
        w.unknown_keys(t, "network", &["rate", "k", "c_n", "c_p"]);
        let rate = match w.string(t, "network", "rate") {
            Some("constant") => Some(RateKind::Constant),
            Some("read-shockley-hall") => Some(RateKind::ReadShockleyHall),
            Some(other) => {
                w.push("network.rate", format!("unknown rate form {other:?}; expected \"constant\" or \"read-shockley-hall\""));
                None
            }
            None => None,
        };
        if let Some(r) = rate {
            cfg.network.rate = r;
        }
        if let Some(k) = w.float(t, "network", "k") {
            if k >= 0.0 && k.is_finite() {
                cfg.network.k = k;
            } else {
                w.push("network.k", format!("expected a nonnegative rate, got {k}"));
            }
        }
        for (key, slot) in [("c_n", 0), ("c_p", 1)] {
            if t.contains_key(key) && cfg.network.rate != RateKind::ReadShockleyHall {
                w.push(format!("network.{key}"), "saturation coefficients apply to rate = \"read-shockley-hall\" only");
            } else if let Some(v) = w.float(t, "network", key) {
                if v >= 0.0 && v.is_finite() {
                    if slot == 0 {
                        cfg.network.c_n = v;
                    } else {
                        cfg.network.c_p = v;
                    }
                } else {
                    w.push(format!("network.{key}"), format!("expected a nonnegative coefficient, got {v}"));
                }
            }
        }
    }

    if let Some(t) = w.table(&root, "initial") {
        w.unknown_keys(t, "initial", &["n_amplitude", "p_amplitude", "e_amplitude"]);
        for (key, slot) in [("n_amplitude", 0), ("p_amplitude", 1), ("e_amplitude", 2)] {
            if let Some(a) = w.float(t, "initial", key) {
                if a.abs() < 1.0 {
                    match slot {
                        0 => cfg.initial.n_amplitude = a,
                        1 => cfg.initial.p_amplitude = a,
                        _ => cfg.initial.e_amplitude = a,
                    }
                } else {
                    w.push(format!("initial.{key}"), format!("expected |amplitude| < 1 to keep the fields positive, got {a}"));
                }
            }
        }
    }

    if root.contains_key("potential") && !confined {
        w.push("potential", "confining potentials apply to confined runs only");
    } else if let Some(t) = w.table(&root, "potential") {
        w.unknown_keys(t, "potential", &["kind"]);
        match w.string(t, "potential", "kind") {
            Some("harmonic") | None => {}
            Some(other) => w.push("potential.kind", format!("unknown potential {other:?}; expected \"harmonic\"")),
        }
    }

    if let Some(t) = w.table(&root, "run") {
        w.unknown_keys(t, "run", &["dt", "t_end", "cadence", "seed"]);
        if t.contains_key("dt") {
            if let Some(dt) = w.float(t, "run", "dt") {
                if dt > 0.0 && dt.is_finite() {
                    cfg.run.dt = Some(dt);
                } else {
                    w.push("run.dt", format!("expected a positive step, got {dt}"));
                }
            }
        }
        if let Some(te) = w.float(t, "run", "t_end") {
            if te >= 0.0 && te.is_finite() {
                cfg.run.t_end = te;
            } else {
                w.push("run.t_end", format!("expected a nonnegative horizon, got {te}"));
            }
        }
        if let Some(cad) = w.float(t, "run", "cadence") {
            if cad > 0.0 && cad.is_finite() {
                cfg.run.cadence = cad;
            } else {
                w.push("run.cadence", format!("expected a positive cadence, got {cad}"));
            }
        }
        if let Some(seed) = w.integer(t, "run", "seed") {
            if seed >= 0 {
                cfg.run.seed = seed as u64;
            } else {
                w.push("run.seed", format!("expected a nonnegative seed, got {seed}"));
            }
        }
    }

    if let Some(t) = w.table(&root, "output") {
        w.unknown_keys(t, "output", &["directory", "formats"]);
        if let Some(dir) = w.string(t, "output", "directory") {
            if dir.is_empty() {
                w.push("output.directory", "expected a nonempty path");
            } else {
                cfg.output.directory = dir.to_string();
            }
        }
        if let Some(v) = t.get("formats") {
            match v.as_array() {
                Some(arr) => {
                    let mut formats = Vec::new();
                    for item in arr {
                        match item.as_str() {
                            Some("csv") => formats.push(OutputFormat::Csv),
                            Some("json") => formats.push(OutputFormat::Json),
                            Some(other) => w.push("output.formats", format!("unknown format {other:?}; expected \"csv\" or \"json\"")),
                            None => w.push("output.formats", "expected an array of strings"),
                        }
                    }
                    formats.dedup();
                    if formats.is_empty() {
                        w.push("output.formats", "expected at least one of \"csv\", \"json\"");
                    } else {
                        cfg.output.formats = formats;
                    }
                }
                None => w.push("output.formats", "expected an array of strings"),
            }
        }
    }

    if let Some(t) = w.table(&root, "diagnostics") {
        w.unknown_keys(t, "diagnostics", &["eep", "c_p", "c_ls", "c_s", "c_ls_weighted"]);
        if let Some(eep) = w.boolean(t, "diagnostics", "eep") {
            cfg.diagnostics.eep = eep;
        }
        let has = |k: &str| t.contains_key(k);
        if has("c_p") || has("c_ls") || has("c_s") || has("c_ls_weighted") {
            let c_p = w.float(t, "diagnostics", "c_p");
            let c_ls = w.float(t, "diagnostics", "c_ls");
            let c_s = w.float(t, "diagnostics", "c_s");
            let c_ls_weighted = if has("c_ls_weighted") { w.float(t, "diagnostics", "c_ls_weighted") } else { None };
            match (c_p, c_ls, c_s) {
                (Some(p), Some(ls), Some(s)) if p > 0.0 && ls > 0.0 && s > 0.0 => {
                    cfg.diagnostics.constants = Some(ConstantOverrides { c_p: p, c_ls: ls, c_s: s, c_ls_weighted });
                }
                (Some(_), Some(_), Some(_)) => {
                    w.push("diagnostics", "functional-constant overrides must be positive");
                }
                _ => w.push("diagnostics", "overriding functional constants needs all of c_p, c_ls, c_s"),
            }
        }
    }

    if cfg.diagnostics.eep && !(cfg.model.c > 0.0) {
        w.push(
            "diagnostics.eep",
            "the certified decay chain needs model.c > 0: without an energy channel the embedding \
             term in the entropy bound is not controlled; set eep = false to run anyway",
        );
    }

    if w.issues.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(w.issues))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config("scenario = \"torus\"\n").unwrap();
        assert_eq!(cfg, Config::torus_defaults());
        let cfg = parse_config("scenario = \"confined\"\n").unwrap();
        assert_eq!(cfg, Config::confined_defaults());
    }

    #[test]
    fn templates_round_trip_through_emission() {
        for cfg in [Config::torus_defaults(), Config::confined_defaults(), Config::general_defaults()] {
            let text = cfg.emit();
            let back = parse_config(&text).unwrap();
            assert_eq!(back, cfg, "round trip failed for\n{text}");
        }
    }

    #[test]
    fn custom_values_round_trip_losslessly() {
        let mut cfg = Config::general_defaults();
        cfg.run.dt = Some(1.0 / 3.0e3);
        cfg.run.t_end = 0.437;
        cfg.model.kappa = 0.123456789012345678;
        cfg.model.gamma_amplitude = 0.25;
        cfg.model.sigma = 0.375;
        cfg.model.b = [0.25, 0.75];
        cfg.network.rate = RateKind::ReadShockleyHall;
        cfg.network.c_n = 0.7;
        cfg.diagnostics.constants =
            Some(ConstantOverrides { c_p: 0.025, c_ls: 0.051, c_s: 0.0081, c_ls_weighted: Some(0.05) });
        let back = parse_config(&cfg.emit()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.run.dt, cfg.run.dt);
    }

    #[test]
    fn unknown_and_misplaced_keys_are_all_reported() {
        let text = r#"
scenario = "torus"

[grid]
n_cells = 64
half_width = 3.0

[modle]
c = 1.0

[run]
t_end = 1.0
walltime = 60
"#;
        let err = parse_config(text).unwrap_err();
        let Error::Config(issues) = err else { panic!("expected aggregated config issues") };
        let paths: Vec<&str> = issues.iter().map(|i| i.path.as_str()).collect();
        assert!(paths.contains(&"grid.half_width"));
        assert!(paths.contains(&"modle"));
        assert!(paths.contains(&"run.walltime"));
        assert_eq!(issues.len(), 3, "{issues:?}");
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse_config("scenario = \"torus\"\n[run\nt_end = 1.0\n").unwrap_err();
        let Error::Config(issues) = err else { panic!("expected config error") };
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].path, "<syntax>");
        assert_eq!(issues[0].line, Some(2));
    }

    #[test]
    fn duplicate_keys_are_syntax_errors() {
        let err = parse_config("scenario = \"torus\"\n\n[run]\nt_end = 1.0\nt_end = 2.0\n").unwrap_err();
        let Error::Config(issues) = err else { panic!("expected config error") };
        assert_eq!(issues[0].path, "<syntax>");
        assert!(issues[0].message.contains("duplicate") || issues[0].message.contains("Duplicate"), "{}", issues[0].message);
    }

    #[test]
    fn degenerate_heat_with_eep_is_a_semantic_error() {
        let text = "scenario = \"torus\"\n\n[model]\nc = 0.0\n";
        let err = parse_config(text).unwrap_err();
        let Error::Config(issues) = err else { panic!("expected config error") };
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].path, "diagnostics.eep");
        assert!(issues[0].message.contains("c > 0"));
        // Explicitly opting out of the chain makes the same model fine.
        let ok = parse_config("scenario = \"torus\"\n\n[model]\nc = 0.0\n\n[diagnostics]\neep = false\n").unwrap();
        assert_eq!(ok.model.c, 0.0);
        assert!(!ok.diagnostics.eep);
    }

    #[test]
    fn non_sqrt_exponents_need_the_general_scenario() {
        let err = parse_config("scenario = \"torus\"\n\n[model]\nsigma = 0.3\n").unwrap_err();
        let Error::Config(issues) = err else { panic!("expected config error") };
        assert!(issues.iter().any(|i| i.path == "model"));
        assert!(parse_config("scenario = \"general\"\n\n[model]\nsigma = 0.3\n").is_ok());
    }

    #[test]
    fn hash_is_stable_and_content_sensitive() {
        let a = Config::torus_defaults();
        let b = Config::torus_defaults();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.run_id().len(), 16);
        let mut c = Config::torus_defaults();
        c.run.seed = 1;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn templates_build_the_default_scenarios() {
        let sc = Config::torus_defaults().scenario().unwrap();
        let reference = Scenario::default_torus().unwrap();
        assert_eq!(sc.kind, reference.kind);
        assert_eq!(sc.t_end, reference.t_end);
        assert_eq!(sc.kappa, reference.kappa);
        assert_eq!(sc.initial.u[0], reference.initial.u[0]);
        assert_eq!(sc.equilibrium.e0, reference.equilibrium.e0);

        let sc = Config::confined_defaults().scenario().unwrap();
        let reference = Scenario::default_confined().unwrap();
        assert_eq!(sc.kind, reference.kind);
        assert_eq!(sc.initial.e, reference.initial.e);

        let sc = Config::general_defaults().scenario().unwrap();
        assert_eq!(sc.kind, SystemKind::General);
    }

    #[test]
    fn weighted_general_config_builds() {
        let mut cfg = Config::general_defaults();
        cfg.model.gamma_amplitude = 0.3;
        let sc = cfg.scenario().unwrap();
        assert!(sc.gamma.is_some());
    }
}
