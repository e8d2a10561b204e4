//! Numerical oracles for the pointwise and functional inequalities behind
//! the decay estimates. Each oracle evaluates both sides verbatim and
//! compares with an additive tolerance of 1e-12 scaled by the larger side:
//! these are analytic truths, so anything beyond rounding is a bug in the
//! caller or in the evaluation itself.

use crate::entropy::boltzmann_lambda;
use crate::error::{Error, Result};
use crate::grid::Grid;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::fmt;

/// Outcome of a two-sided comparison. `vacuous` marks checks that hold
/// because a side is infinite or both sides are empty.
#[derive(Debug, Clone, Copy)]
pub struct Check {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    pub vacuous: bool,
}

impl Check {
    fn le(lhs: f64, rhs: f64) -> Check {
        let tol = 1e-12 * lhs.abs().max(rhs.abs());
        Check { lhs, rhs, holds: lhs <= rhs + tol, vacuous: false }
    }

    /// Slack of the comparison, normalized by the larger side; negative
    /// when the check failed.
    pub fn margin(&self) -> f64 {
        if self.vacuous {
            return f64::INFINITY;
        }
        (self.rhs - self.lhs) / self.lhs.abs().max(self.rhs.abs()).max(1e-300)
    }
}

fn check_positive(y: f64, what: &str) -> Result<()> {
    if !(y > 0.0) || !y.is_finite() {
        return Err(Error::domain(format!("{what} must be positive and finite, got {y}")));
    }
    Ok(())
}

/// `(√y - 1)²` without the subtractive cancellation at y = 1.
fn sqrt_gap_sq(y: f64) -> f64 {
    let d = (y - 1.0) / (y.sqrt() + 1.0);
    d * d
}

/// `log(y)(y - 1) ≥ 4(√y - 1)²`, with equality at y = 1.
pub fn check_el_in(y: f64) -> Result<Check> {
    check_positive(y, "ratio")?;
    Ok(Check::le(4.0 * sqrt_gap_sq(y), y.ln() * (y - 1.0)))
}

/// `λ_B(y) ≤ 2(1 + |log y|)(√y - 1)²`.
pub fn check_el_in2(y: f64) -> Result<Check> {
    check_positive(y, "ratio")?;
    let lhs = boltzmann_lambda(y)?;
    let rhs = 2.0 * (1.0 + y.ln().abs()) * sqrt_gap_sq(y);
    Ok(Check::le(lhs, rhs))
}

/// Pointwise quadratic lower bound `3(y - 1)² ≤ (2y + 4) λ_B(y)`.
pub fn check_pinsker_pointwise(y: f64) -> Result<Check> {
    check_positive(y, "ratio")?;
    let d = y - 1.0;
    Ok(Check::le(3.0 * d * d, (2.0 * y + 4.0) * boltzmann_lambda(y)?))
}

/// Two nonnegative densities on a common grid.
#[derive(Debug, Clone)]
pub struct DensityPair {
    pub grid: Grid,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

impl DensityPair {
    pub fn new(grid: Grid, f: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        grid.assert_field(&f, "f")?;
        grid.assert_field(&g, "g")?;
        if f.iter().chain(&g).any(|&x| x < 0.0) {
            return Err(Error::domain("densities must be nonnegative"));
        }
        Ok(DensityPair { grid, f, g })
    }
}

/// Mass-weighted quadratic lower bound on the relative entropy,
///
/// `3 ‖f-g‖₁² / (2‖f‖₁ + 4‖g‖₁)  ≤  ∫ g λ_B(f/g) dx`.
///
/// Cells with `f > 0 = g` push the right side to infinity and the check is
/// reported as vacuously true; so is the case of two zero masses.
pub fn ckp_lower_bound(pair: &DensityPair) -> Result<Check> {
    let mass_f = pair.grid.l1_norm(&pair.f);
    let mass_g = pair.grid.l1_norm(&pair.g);
    if mass_f == 0.0 && mass_g == 0.0 {
        return Ok(Check { lhs: 0.0, rhs: 0.0, holds: true, vacuous: true });
    }
    let mut rhs = 0.0;
    for (&fi, &gi) in pair.f.iter().zip(&pair.g) {
        if gi == 0.0 {
            if fi > 0.0 {
                return Ok(Check { lhs: f64::INFINITY, rhs: f64::INFINITY, holds: true, vacuous: true });
            }
            continue;
        }
        rhs += gi * boltzmann_lambda(fi / gi)?;
    }
    rhs *= pair.grid.cell_volume;
    let diff: f64 = pair.f.iter().zip(&pair.g).map(|(f, g)| (f - g).abs()).sum::<f64>() * pair.grid.cell_volume;
    let lhs = 3.0 * diff * diff / (2.0 * mass_f + 4.0 * mass_g);
    Ok(Check::le(lhs, rhs))
}

fn check_probability_weight(grid: &Grid, nu: Option<&[f64]>) -> Result<Vec<f64>> {
    let nu = match nu {
        Some(w) => {
            grid.assert_field(w, "weight")?;
            if w.iter().any(|&x| x < 0.0) {
                return Err(Error::domain("measure weight must be nonnegative"));
            }
            w.to_vec()
        }
        None => vec![1.0 / grid.measure(); grid.cells()],
    };
    let mass = grid.integrate(&nu);
    if (mass - 1.0).abs() > 1e-8 {
        return Err(Error::domain(format!("measure weight integrates to {mass}, expected a probability measure")));
    }
    Ok(nu)
}

#[derive(Debug, Clone, Copy)]
pub struct EmbeddingCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// Smallest constant making this particular field satisfy the bound;
    /// NaN when the gradient term vanishes.
    pub c_needed: f64,
}

/// Fourth-moment embedding `‖f‖²_{L⁴(ν)} ≤ C ‖∇f‖²_{L²(ν)} + ‖f‖²_{L²(ν)}`
/// against a probability weight `ν` (uniform when absent).
pub fn check_sobolev_embedding(grid: &Grid, f: &[f64], nu: Option<&[f64]>, c: f64) -> Result<EmbeddingCheck> {
    grid.assert_field(f, "f")?;
    let nu = check_probability_weight(grid, nu)?;
    let mut l2 = 0.0;
    let mut l4 = 0.0;
    for (fi, ni) in f.iter().zip(&nu) {
        l2 += fi * fi * ni;
        l4 += fi * fi * fi * fi * ni;
    }
    l2 *= grid.cell_volume;
    l4 *= grid.cell_volume;
    let grad = grid.dirichlet_form(f, Some(&nu));
    let lhs = l4.sqrt();
    let rhs = c * grad + l2;
    let tol = 1e-12 * lhs.abs().max(rhs.abs());
    let c_needed = if grad > 0.0 { (lhs - l2) / grad } else { f64::NAN };
    Ok(EmbeddingCheck { lhs, rhs, holds: lhs <= rhs + tol, c_needed })
}

/// Entropy bound `∫ f log(f / ∫f dν) dν ≤ C ∫ |∇√f|² dν` against a
/// probability weight `ν`.
pub fn check_log_sobolev(grid: &Grid, f: &[f64], nu: Option<&[f64]>, c: f64) -> Result<Check> {
    grid.assert_field(f, "f")?;
    if f.iter().any(|&x| x < 0.0) {
        return Err(Error::domain("log-Sobolev argument must be nonnegative"));
    }
    let nu = check_probability_weight(grid, nu)?;
    let mass: f64 = f.iter().zip(&nu).map(|(a, b)| a * b).sum::<f64>() * grid.cell_volume;
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::domain("log-Sobolev argument must have positive finite mass"));
    }
    // ∫ f log(f/m) dν = m ∫ λ_B(f/m) dν  since the linear part integrates away.
    let mut lhs = 0.0;
    for (&fi, &ni) in f.iter().zip(&nu) {
        lhs += ni * boltzmann_lambda(fi / mass)?;
    }
    lhs *= mass * grid.cell_volume;
    let sqrt_f: Vec<f64> = f.iter().map(|x| x.sqrt()).collect();
    let rhs = c * grid.dirichlet_form(&sqrt_f, Some(&nu));
    Ok(Check::le(lhs, rhs))
}

/// The bracket `C_1` of the two-point entropy bound: a logarithmic growth
/// factor when a ratio is large, the constant 2 when both densities have
/// collapsed below a quarter of their references.
pub fn aux1_bracket(rn: f64, rp: f64) -> f64 {
    let gn = 1.0 + rn.ln().abs();
    let gp = 1.0 + rp.ln().abs();
    match (rn >= 0.25, rp >= 0.25) {
        (true, true) => 2.0 * gn.max(gp),
        (false, true) => 2.0 * gp,
        (true, false) => 2.0 * gn,
        // Both ratios below 1/4: λ_B(y) ≤ 2(√y - 1)² there, no log factor.
        (false, false) => 2.0,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Aux1Check {
    pub lhs: f64,
    pub rhs: f64,
    pub c0: f64,
    pub holds: bool,
}

/// Two-point entropy bound for mean densities sharing one conservation law
/// (`n̄ - n* = p̄ - p*`):
///
/// `n* λ_B(n̄/n*) + p* λ_B(p̄/p*) ≤ C_0 (√(n̄ p̄ / (n* p*)) - 1)²`.
pub fn aux1_bound(n_bar: f64, p_bar: f64, n_star: f64, p_star: f64) -> Result<Aux1Check> {
    for (v, what) in [(n_bar, "n mean"), (p_bar, "p mean"), (n_star, "n reference"), (p_star, "p reference")] {
        check_positive(v, what)?;
    }
    let mismatch = (n_bar - n_star) - (p_bar - p_star);
    if mismatch.abs() > 1e-10 * [n_bar, p_bar, n_star, p_star].iter().fold(1.0f64, |a, &b| a.max(b)) {
        return Err(Error::argument(format!(
            "means are not conservation-compatible: (n̄ - n*) - (p̄ - p*) = {mismatch:.3e}"
        )));
    }
    let rn = n_bar / n_star;
    let rp = p_bar / p_star;
    let c1 = aux1_bracket(rn, rp);
    let c2 = p_star + p_star * p_star / n_star + 2.0 * n_star / rn.max(rp);
    let c0 = c1 * c2;
    let lhs = n_star * boltzmann_lambda(rn)? + p_star * boltzmann_lambda(rp)?;
    let rhs = c0 * sqrt_gap_sq(rn * rp);
    let check = Check::le(lhs, rhs);
    Ok(Aux1Check { lhs, rhs, c0, holds: check.holds })
}

#[derive(Debug, Clone, Copy)]
pub struct Aux2Check {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// The proof's stepping stones `R ∫δ² ≤ √mean` and `R² ∫δ² ≤ 1`.
    pub intermediates_hold: bool,
}

/// Quadratic fluctuation bound: with `δ = √n - ∫√n dx` mean-zero and
/// `R_n = 1/(√n̄ + ∫√n)`,
///
/// `(R_n ∫δ_n² √p̄ + R_p ∫δ_p² √n̄ - R_n R_p ∫δ_n² ∫δ_p²)²
///      ≤ 2 C_P (n̄ + p̄)(P_n + P_p)`
///
/// where `P_n ≥ 2∫|∇√n|²` are the density dissipation terms and `C_P` the
/// Poincaré constant of the grid.
#[allow(clippy::too_many_arguments)]
pub fn aux2_bound(
    grid: &Grid,
    delta_n: &[f64],
    delta_p: &[f64],
    n_bar: f64,
    p_bar: f64,
    p_n: f64,
    p_p: f64,
    c_p: f64,
) -> Result<Aux2Check> {
    grid.assert_field(delta_n, "delta_n")?;
    grid.assert_field(delta_p, "delta_p")?;
    check_positive(n_bar, "n mean")?;
    check_positive(p_bar, "p mean")?;
    check_positive(c_p, "Poincaré constant")?;
    if p_n < 0.0 || p_p < 0.0 {
        return Err(Error::domain("dissipation terms must be nonnegative"));
    }
    let mut moments = [0.0f64; 2];
    for (slot, field) in moments.iter_mut().zip([delta_n, delta_p]) {
        let mean = grid.integrate(field);
        let scale = field.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
        if mean.abs() > 1e-10 * scale {
            return Err(Error::argument(format!("fluctuation field has mean {mean:.3e}, expected zero")));
        }
        *slot = grid.integrate(&field.iter().map(|x| x * x).collect::<Vec<_>>());
    }
    let [dn2, dp2] = moments;
    if dn2 > n_bar * (1.0 + 1e-10) || dp2 > p_bar * (1.0 + 1e-10) {
        return Err(Error::argument("fluctuation second moment exceeds the mean density"));
    }
    let m_n = (n_bar - dn2).max(0.0).sqrt();
    let m_p = (p_bar - dp2).max(0.0).sqrt();
    let r_n = 1.0 / (n_bar.sqrt() + m_n);
    let r_p = 1.0 / (p_bar.sqrt() + m_p);

    let tol = 1e-12;
    let intermediates_hold = r_n * dn2 <= n_bar.sqrt() * (1.0 + tol)
        && r_p * dp2 <= p_bar.sqrt() * (1.0 + tol)
        && r_n * r_n * dn2 <= 1.0 + tol
        && r_p * r_p * dp2 <= 1.0 + tol;

    let inner = r_n * dn2 * p_bar.sqrt() + r_p * dp2 * n_bar.sqrt() - r_n * r_p * dn2 * dp2;
    let lhs = inner * inner;
    let rhs = 2.0 * c_p * (n_bar + p_bar) * (p_n + p_p);
    let check = Check::le(lhs, rhs);
    Ok(Aux2Check { lhs, rhs, holds: check.holds, intermediates_hold })
}

/// Worst observed slack of one check over a randomized sweep.
#[derive(Debug, Clone)]
pub struct FamilyMargin {
    pub name: &'static str,
    pub samples: usize,
    /// Smallest normalized slack seen; negative means a violation.
    pub worst_margin: f64,
    pub violations: usize,
}

/// Randomized stress report over every check in this module.
#[derive(Debug, Clone)]
pub struct MarginReport {
    pub families: Vec<FamilyMargin>,
}

impl MarginReport {
    pub fn total_violations(&self) -> usize {
        self.families.iter().map(|f| f.violations).sum()
    }
}

impl fmt::Display for MarginReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<26} {:>9}  {:>13}  {:>10}", "check", "samples", "worst margin", "violations")?;
        for fam in &self.families {
            writeln!(
                f,
                "{:<26} {:>9}  {:>13.3e}  {:>10}",
                fam.name, fam.samples, fam.worst_margin, fam.violations
            )?;
        }
        Ok(())
    }
}

/// Ratio draws for the pointwise checks: wide log-uniform sweeps mixed with
/// a tight band around the equality point y = 1.
fn ratio_sample(rng: &mut ChaCha8Rng, i: usize) -> f64 {
    if i % 4 == 3 {
        (1.0 + rng.random_range(-1e-4..1e-4f64)).max(1e-12)
    } else {
        rng.random_range(-18.0..18.0f64).exp()
    }
}

/// Runs every check in this module against `samples` randomized inputs per
/// family and reports the worst margins. Any violation is a bug: these are
/// analytic inequalities and the tolerance already covers rounding.
pub fn randomized_margins(samples: usize, seed: u64) -> Result<MarginReport> {
    if samples == 0 {
        return Err(Error::argument("sample count must be positive"));
    }
    let mut families = Vec::new();
    let mut tally = |name: &'static str, worst: f64, violations: usize| {
        families.push(FamilyMargin { name, samples, worst_margin: worst, violations });
    };

    for (family, (name, check)) in [
        ("check_el_in", check_el_in as fn(f64) -> Result<Check>),
        ("check_el_in2", check_el_in2 as fn(f64) -> Result<Check>),
        ("check_pinsker_pointwise", check_pinsker_pointwise as fn(f64) -> Result<Check>),
    ]
    .into_iter()
    .enumerate()
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(family as u64));
        let mut worst = f64::INFINITY;
        let mut violations = 0;
        for i in 0..samples {
            let c = check(ratio_sample(&mut rng, i))?;
            if !c.holds {
                violations += 1;
            }
            worst = worst.min(c.margin());
        }
        tally(name, worst, violations);
    }

    {
        let grid = Grid::torus(1, 48)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
        let mut worst = f64::INFINITY;
        let mut violations = 0;
        for _ in 0..samples {
            let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..grid.cells())
                    .map(|_| {
                        if rng.random_range(0.0..1.0f64) < 0.03 {
                            0.0
                        } else {
                            rng.random_range(-8.0..3.0f64).exp()
                        }
                    })
                    .collect()
            };
            let f = draw(&mut rng);
            let g = draw(&mut rng);
            let c = ckp_lower_bound(&DensityPair::new(grid, f, g)?)?;
            if !c.holds {
                violations += 1;
            }
            worst = worst.min(c.margin());
        }
        tally("ckp_lower_bound", worst, violations);
    }

    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(4));
        let mut worst = f64::INFINITY;
        let mut violations = 0;
        for _ in 0..samples {
            let n_star = rng.random_range(-6.0..6.0f64).exp();
            let p_star = rng.random_range(-6.0..6.0f64).exp();
            // One shared offset keeps the means conservation-compatible.
            let d = rng.random_range(-0.999 * n_star.min(p_star)..5.0 * n_star.max(p_star));
            let c = aux1_bound(n_star + d, p_star + d, n_star, p_star)?;
            if !c.holds {
                violations += 1;
            }
            let margin = (c.rhs - c.lhs) / c.lhs.abs().max(c.rhs.abs()).max(1e-300);
            worst = worst.min(margin);
        }
        tally("aux1_bound", worst, violations);
    }

    {
        let grid = Grid::torus(1, 32)?;
        let cells = grid.cells();
        // Exact smallest positive eigenvalue of the discrete second
        // difference on the unit circle.
        let n = cells as f64;
        let c_p = 1.0 / (4.0 * n * n * (std::f64::consts::PI / n).sin().powi(2));
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(5));
        let mut worst = f64::INFINITY;
        let mut violations = 0;
        for _ in 0..samples {
            let density = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..cells).map(|_| rng.random_range(-4.0..4.0f64).exp()).collect()
            };
            let fields = [density(&mut rng), density(&mut rng)];
            let mut bars = [0.0f64; 2];
            let mut deltas = Vec::new();
            let mut dissipation = [0.0f64; 2];
            for (s, field) in fields.iter().enumerate() {
                bars[s] = grid.integrate(field);
                let root: Vec<f64> = field.iter().map(|x| x.sqrt()).collect();
                let mean = grid.integrate(&root);
                deltas.push(root.iter().map(|x| x - mean).collect::<Vec<f64>>());
                dissipation[s] = 2.0 * grid.dirichlet_form(&root, None);
            }
            let c = aux2_bound(
                &grid, &deltas[0], &deltas[1], bars[0], bars[1], dissipation[0], dissipation[1], c_p,
            )?;
            if !c.holds || !c.intermediates_hold {
                violations += 1;
            }
            let margin = (c.rhs - c.lhs) / c.lhs.abs().max(c.rhs.abs()).max(1e-300);
            worst = worst.min(margin);
        }
        tally("aux2_bound", worst, violations);
    }

    Ok(MarginReport { families })
}
