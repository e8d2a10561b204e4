//! Constitutive entropy models, their derivatives, the mobility tensor, and
//! relative-entropy functionals.
//!
//! The separable family is
//!
//! `S(x, u, e) = s(x, e) - Σ_i (λ_B(u_i) - u_i log w_i(x, e))`
//!
//! with `s = c e^σ γ(x)^{1-σ}` (or `c log e`) and species weights
//! `w_i = coef_i e^{b_i} γ(x)^{1-b_i}`. All spatial dependence is carried by
//! the single weight field `γ`; pointwise operations take its local value
//! (`γ = 1` for homogeneous models). The mixture family couples each species
//! to `log e` directly against fixed reference densities.

use nalgebra::DMatrix;

use crate::equilibrium::EquilibriumState;
use crate::error::{Error, Result};
use crate::grid::Grid;

/// `λ_B(ν) = ν log ν - ν + 1`, extended by `λ_B(0) = 1`. Values near the
/// root ν = 1 come from the series `Σ_{k≥2} (1-ν)^k / (k(k-1))`; the direct
/// form loses every significant digit there and the quadratic contact with
/// `(ν-1)²/2` is what downstream comparison bounds rest on.
pub fn boltzmann_lambda(nu: f64) -> Result<f64> {
    if !(nu >= 0.0) || !nu.is_finite() {
        return Err(Error::domain(format!("boltzmann_lambda needs a nonnegative finite argument, got {nu}")));
    }
    if nu < 1e-12 {
        return Ok(1.0 - nu);
    }
    let y = 1.0 - nu;
    if y.abs() < 0.5 {
        let mut p = y * y;
        let mut sum = 0.5 * p;
        let mut k = 3usize;
        loop {
            p *= y;
            let inc = p / ((k * (k - 1)) as f64);
            sum += inc;
            if inc.abs() < 1e-17 * sum || k > 200 {
                return Ok(sum);
            }
            k += 1;
        }
    }
    Ok(nu * nu.ln() - nu + 1.0)
}

/// Snapshot of the fields on a grid: densities `u` (one array per species)
/// and internal energy `e`.
#[derive(Debug, Clone)]
pub struct StateField {
    pub grid: Grid,
    pub u: Vec<Vec<f64>>,
    pub e: Vec<f64>,
}

impl StateField {
    pub fn new(grid: Grid, u: Vec<Vec<f64>>, e: Vec<f64>) -> Result<Self> {
        if u.is_empty() {
            return Err(Error::argument("state needs at least one density field"));
        }
        for (i, ui) in u.iter().enumerate() {
            if ui.len() != grid.cells() {
                return Err(Error::argument(format!("density field {i} has {} cells, grid has {}", ui.len(), grid.cells())));
            }
            if ui.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::domain(format!("density field {i} must be nonnegative and finite")));
            }
        }
        if e.len() != grid.cells() {
            return Err(Error::argument("energy field length does not match grid"));
        }
        if e.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::domain("energy field must be positive and finite"));
        }
        Ok(StateField { grid, u, e })
    }

    /// Spatially constant state.
    pub fn constant(grid: Grid, u: &[f64], e: f64) -> Result<Self> {
        let cells = grid.cells();
        StateField::new(grid, u.iter().map(|&v| vec![v; cells]).collect(), vec![e; cells])
    }

    pub fn species_count(&self) -> usize {
        self.u.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnergyForm {
    /// `s = c e^sigma γ^{1-sigma}`.
    Power { sigma: f64 },
    /// `s = c log e`.
    Log,
}

#[derive(Debug, Clone)]
pub enum EntropyModel {
    /// `S = s(x,e) - Σ_i (λ_B(u_i) - u_i log w_i(x,e))`.
    Separable { c: f64, energy: EnergyForm, b: Vec<f64>, coef: Vec<f64> },
    /// `S = Σ_i (c_i u_i log e - u*_i λ_B(u_i / u*_i))`; homogeneous.
    LogMixture { c: Vec<f64>, u_star: Vec<f64> },
}

impl EntropyModel {
    pub fn separable(c: f64, energy: EnergyForm, b: Vec<f64>, coef: Vec<f64>) -> Result<Self> {
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::domain(format!("heat weight c must be nonnegative and finite, got {c}")));
        }
        if let EnergyForm::Power { sigma } = energy {
            // sigma = 1 makes s linear and kills the concavity margin in e.
            if !(sigma > 0.0 && sigma < 1.0) {
                return Err(Error::domain(format!("energy exponent sigma must lie strictly in (0, 1), got {sigma}")));
            }
        }
        if b.is_empty() || b.len() != coef.len() {
            return Err(Error::argument("b and coef must be nonempty and of equal length"));
        }
        if b.iter().any(|&bi| !(0.0..=1.0).contains(&bi)) {
            return Err(Error::domain("weight exponents b_i must lie in [0, 1]"));
        }
        if coef.iter().any(|&ci| !(ci > 0.0) || !ci.is_finite()) {
            return Err(Error::domain("weight coefficients must be positive and finite"));
        }
        Ok(EntropyModel::Separable { c, energy, b, coef })
    }

    /// The square-root family `s = c√(eγ)`, `w_i = √(eγ)`, used by both
    /// simulation scenarios.
    pub fn sqrt_family(c: f64, species: usize) -> Result<Self> {
        EntropyModel::separable(c, EnergyForm::Power { sigma: 0.5 }, vec![0.5; species], vec![1.0; species])
    }

    pub fn log_mixture(c: Vec<f64>, u_star: Vec<f64>) -> Result<Self> {
        if c.is_empty() || c.len() != u_star.len() {
            return Err(Error::argument("c and u_star must be nonempty and of equal length"));
        }
        // Same window as the b_i: it is what keeps w(e) = u* e^{c_i} concave.
        if c.iter().any(|&ci| !(0.0..=1.0).contains(&ci)) {
            return Err(Error::domain("energy couplings c_i must lie in [0, 1]"));
        }
        if u_star.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::domain("reference densities must be positive and finite"));
        }
        Ok(EntropyModel::LogMixture { c, u_star })
    }

    pub fn species_count(&self) -> usize {
        match self {
            EntropyModel::Separable { b, .. } => b.len(),
            EntropyModel::LogMixture { c, .. } => c.len(),
        }
    }

    /// Energy exponents of the species weights (`b_i`, or `c_i` for the
    /// mixture family where `w_i = u*_i e^{c_i}`).
    pub fn weight_exponents(&self) -> &[f64] {
        match self {
            EntropyModel::Separable { b, .. } => b,
            EntropyModel::LogMixture { c, .. } => c,
        }
    }

    /// True when the model has no strictly concave energy term of its own;
    /// concavity in `e` then hinges on the species terms.
    pub fn degenerate_heat(&self) -> bool {
        match self {
            EntropyModel::Separable { c, .. } => *c == 0.0,
            EntropyModel::LogMixture { .. } => true,
        }
    }

    /// `log w_i(x, e)` at local weight value `gamma`.
    pub fn log_weight(&self, i: usize, e: f64, gamma: f64) -> f64 {
        match self {
            EntropyModel::Separable { b, coef, .. } => {
                coef[i].ln() + b[i] * e.ln() + (1.0 - b[i]) * gamma.ln()
            }
            EntropyModel::LogMixture { c, u_star } => u_star[i].ln() + c[i] * e.ln(),
        }
    }

    pub fn weight(&self, i: usize, e: f64, gamma: f64) -> f64 {
        self.log_weight(i, e, gamma).exp()
    }

    /// `∂_e s(x, e)`.
    pub fn s_prime(&self, e: f64, gamma: f64) -> f64 {
        match self {
            EntropyModel::Separable { c, energy: EnergyForm::Power { sigma }, .. } => {
                c * sigma * e.powf(sigma - 1.0) * gamma.powf(1.0 - sigma)
            }
            EntropyModel::Separable { c, energy: EnergyForm::Log, .. } => c / e,
            EntropyModel::LogMixture { .. } => 0.0,
        }
    }

    /// `∂_e² s(x, e)`; nonpositive for every constructible model.
    pub fn s_second(&self, e: f64, gamma: f64) -> f64 {
        match self {
            EntropyModel::Separable { c, energy: EnergyForm::Power { sigma }, .. } => {
                c * sigma * (sigma - 1.0) * e.powf(sigma - 2.0) * gamma.powf(1.0 - sigma)
            }
            EntropyModel::Separable { c, energy: EnergyForm::Log, .. } => -c / (e * e),
            EntropyModel::LogMixture { .. } => 0.0,
        }
    }

    fn s_value(&self, e: f64, gamma: f64) -> f64 {
        match self {
            EntropyModel::Separable { c, energy: EnergyForm::Power { sigma }, .. } => {
                c * e.powf(*sigma) * gamma.powf(1.0 - sigma)
            }
            EntropyModel::Separable { c, energy: EnergyForm::Log, .. } => c * e.ln(),
            EntropyModel::LogMixture { .. } => 0.0,
        }
    }
}

fn check_point(model: &EntropyModel, u: &[f64], e: f64, gamma: f64) -> Result<()> {
    if u.len() != model.species_count() {
        return Err(Error::argument("density vector length does not match model species count"));
    }
    if !(e > 0.0) || !e.is_finite() {
        return Err(Error::domain(format!("internal energy must be positive and finite, got {e}")));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::domain(format!("weight field value must be positive and finite, got {gamma}")));
    }
    if u.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::domain("densities must be nonnegative and finite"));
    }
    Ok(())
}

/// `S(x, u, e)` at local weight value `gamma`. Zero densities enter through
/// the continuous extension of `u log u`.
pub fn entropy_density(model: &EntropyModel, u: &[f64], e: f64, gamma: f64) -> Result<f64> {
    check_point(model, u, e, gamma)?;
    match model {
        EntropyModel::Separable { .. } => {
            let mut s = model.s_value(e, gamma);
            for (i, &ui) in u.iter().enumerate() {
                let w = model.weight(i, e, gamma);
                // λ_B(u) - u log w  =  w λ_B(u/w) + 1 - w.
                s -= w * boltzmann_lambda(ui / w)? + 1.0 - w;
            }
            Ok(s)
        }
        EntropyModel::LogMixture { c, u_star } => {
            let mut s = 0.0;
            for (i, &ui) in u.iter().enumerate() {
                s += c[i] * ui * e.ln() - u_star[i] * boltzmann_lambda(ui / u_star[i])?;
            }
            Ok(s)
        }
    }
}

/// `(∂_u S, ∂_e S)`; needs strictly positive densities. Errors when the
/// energy slope is not positive, which only degenerate models can reach.
pub fn entropy_gradient(model: &EntropyModel, u: &[f64], e: f64, gamma: f64) -> Result<(Vec<f64>, f64)> {
    check_point(model, u, e, gamma)?;
    if u.iter().any(|&x| x == 0.0) {
        return Err(Error::domain("entropy gradient needs strictly positive densities"));
    }
    let exps = model.weight_exponents();
    let mut du = Vec::with_capacity(u.len());
    let mut de = model.s_prime(e, gamma);
    for (i, &ui) in u.iter().enumerate() {
        du.push(model.log_weight(i, e, gamma) - ui.ln());
        de += ui * exps[i] / e;
    }
    if !(de > 0.0) {
        return Err(Error::numerical(format!("energy slope of the entropy is not positive ({de})"), None));
    }
    Ok((du, de))
}

/// Full Hessian `D²S` as an `(I+1) x (I+1)` matrix, densities first;
/// negative semidefinite by the construction constraints.
pub fn entropy_hessian(model: &EntropyModel, u: &[f64], e: f64, gamma: f64) -> Result<DMatrix<f64>> {
    check_point(model, u, e, gamma)?;
    if u.iter().any(|&x| x == 0.0) {
        return Err(Error::domain("entropy Hessian needs strictly positive densities"));
    }
    let n = u.len();
    let exps = model.weight_exponents();
    let mut h = DMatrix::zeros(n + 1, n + 1);
    let mut corner = model.s_second(e, gamma);
    for i in 0..n {
        h[(i, i)] = -1.0 / u[i];
        h[(i, n)] = exps[i] / e;
        h[(n, i)] = exps[i] / e;
        corner -= u[i] * exps[i] / (e * e);
    }
    h[(n, n)] = corner;
    Ok(h)
}

/// Scalar mobility `M(u, e) = -e² ∂_e²s + Σ_i u_i b_i (1 - b_i)`, the Schur
/// complement that controls the energy column of the mobility tensor.
pub fn mobility_scalar(model: &EntropyModel, u: &[f64], e: f64, gamma: f64) -> Result<f64> {
    check_point(model, u, e, gamma)?;
    let exps = model.weight_exponents();
    let mut m = -e * e * model.s_second(e, gamma);
    for (i, &ui) in u.iter().enumerate() {
        m += ui * exps[i] * (1.0 - exps[i]);
    }
    if m <= 1e-300 {
        return Err(Error::domain("degenerate mobility: the energy channel of the entropy Hessian is singular here"));
    }
    Ok(m)
}

/// Mobility tensor `κ (-D²S)^{-1}` in closed form. The product with the
/// Hessian is checked against `κ I` before returning.
pub fn mobility_tensor(model: &EntropyModel, u: &[f64], e: f64, gamma: f64, kappa: f64) -> Result<DMatrix<f64>> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::domain(format!("diffusion strength must be positive and finite, got {kappa}")));
    }
    let m = mobility_scalar(model, u, e, gamma)?;
    if u.iter().any(|&x| x == 0.0) {
        return Err(Error::domain("mobility tensor needs strictly positive densities"));
    }
    let n = u.len();
    let exps = model.weight_exponents();
    let v: Vec<f64> = u.iter().zip(exps).map(|(&ui, &bi)| ui * bi).collect();
    let over_m = kappa / m;
    let mut t = DMatrix::zeros(n + 1, n + 1);
    for i in 0..n {
        t[(i, i)] = kappa * u[i];
        for j in 0..n {
            // Symmetric products so the transpose matches bit for bit.
            t[(i, j)] += over_m * (v[i] * v[j]);
        }
        let cross = over_m * (e * v[i]);
        t[(i, n)] = cross;
        t[(n, i)] = cross;
    }
    t[(n, n)] = over_m * (e * e);

    let product = &t * -entropy_hessian(model, u, e, gamma)?;
    for i in 0..=n {
        for j in 0..=n {
            let want = if i == j { kappa } else { 0.0 };
            if (product[(i, j)] - want).abs() > 1e-8 * kappa {
                return Err(Error::numerical("mobility tensor does not invert the entropy Hessian", None));
            }
        }
    }
    Ok(t)
}

/// `∫ S(x, u(x), e(x)) dx` with an optional per-cell weight field `gamma`.
pub fn total_entropy(state: &StateField, model: &EntropyModel, gamma: Option<&[f64]>) -> Result<f64> {
    if let Some(g) = gamma {
        if g.len() != state.grid.cells() {
            return Err(Error::argument("weight field length does not match grid"));
        }
    }
    let mut total = 0.0;
    let mut point = vec![0.0; state.species_count()];
    for cell in 0..state.grid.cells() {
        for (i, ui) in state.u.iter().enumerate() {
            point[i] = ui[cell];
        }
        let g = gamma.map_or(1.0, |g| g[cell]);
        total += entropy_density(model, &point, state.e[cell], g)?;
    }
    Ok(total * state.grid.cell_volume)
}

// Coefficient prefactors shift the entropy by a term linear in the
// densities, which cancels in every relative quantity, so only the
// exponents are constrained here.
pub(crate) fn sqrt_family_heat(model: &EntropyModel, species: usize) -> Result<f64> {
    if let EntropyModel::Separable { c, energy: EnergyForm::Power { sigma }, b, .. } = model {
        if b.len() == species
            && (sigma - 0.5).abs() < 1e-12
            && b.iter().all(|&bi| (bi - 0.5).abs() < 1e-12)
        {
            return Ok(*c);
        }
    }
    Err(Error::argument("closed-form relative entropy needs the square-root weight family (sigma = b_i = 1/2)"))
}

pub(crate) fn bipolar_constants(eq: &EquilibriumState) -> Result<(f64, f64)> {
    if eq.c_tilde.len() != 2 {
        return Err(Error::argument("relative entropy formula needs the two-species equilibrium"));
    }
    Ok((eq.c_tilde[0], eq.c_tilde[1]))
}

/// Relative entropy for the homogeneous two-species system,
///
/// `H = ∫ w_n λ_B(n/w_n) + w_p λ_B(p/w_p) + Σ_e (√e - √e*)² dx`
///
/// with `w_n = C_n √e`, `w_p = C_p √e`, `Σ_e = (c + C_n + C_p)/(2√e*)`.
/// Vanishes exactly at the equilibrium and equals the defining difference
/// of total entropies for arbitrary states, mass-constrained or not.
pub fn relative_entropy_torus(state: &StateField, eq: &EquilibriumState, model: &EntropyModel) -> Result<f64> {
    let c = sqrt_family_heat(model, 2)?;
    if state.species_count() != 2 {
        return Err(Error::argument("torus relative entropy needs exactly two density fields"));
    }
    let es = eq.e_star.constant()?;
    let (cn, cp) = bipolar_constants(eq)?;
    let sig_e = (c + cn + cp) / (2.0 * es.sqrt());
    let mut acc = 0.0;
    for cell in 0..state.grid.cells() {
        let e = state.e[cell];
        let se = e.sqrt();
        let wn = cn * se;
        let wp = cp * se;
        acc += wn * boltzmann_lambda(state.u[0][cell] / wn)?;
        acc += wp * boltzmann_lambda(state.u[1][cell] / wp)?;
        let d = (e - es) / (se + es.sqrt());
        acc += sig_e * d * d;
    }
    Ok(acc * state.grid.cell_volume)
}

/// Relative entropy for the confined two-species system; the weights carry
/// the equilibrium profile, `w_i = C_i √(e e*(x))`, and the energy term has
/// the constant coefficient `Σ_e = (c + C_n + C_p)/2`.
pub fn relative_entropy_confined(state: &StateField, eq: &EquilibriumState, model: &EntropyModel) -> Result<f64> {
    let c = sqrt_family_heat(model, 2)?;
    if state.species_count() != 2 {
        return Err(Error::argument("confined relative entropy needs exactly two density fields"));
    }
    let cells = state.grid.cells();
    let estar = eq.e_star.field(cells)?;
    let (cn, cp) = bipolar_constants(eq)?;
    let sig_e = (c + cn + cp) / 2.0;
    let mut acc = 0.0;
    for cell in 0..cells {
        let e = state.e[cell];
        let root = (e * estar[cell]).sqrt();
        let wn = cn * root;
        let wp = cp * root;
        acc += wn * boltzmann_lambda(state.u[0][cell] / wn)?;
        acc += wp * boltzmann_lambda(state.u[1][cell] / wp)?;
        let d = (e - estar[cell]) / (e.sqrt() + estar[cell].sqrt());
        acc += sig_e * d * d;
    }
    Ok(acc * state.grid.cell_volume)
}

/// Relative entropy for homogeneous power-law models with arbitrary species
/// count and exponents,
///
/// `H = Σ_i ∫ w̃_i λ_B(u_i/w̃_i) dx
///    + Σ_i C̃_i coef_i (e*)^{b_i-1} ∫ (b_i e - e^{b_i} (e*)^{1-b_i} + (1-b_i) e*) dx
///    + c (e*)^{σ-1} ∫ (σ e - e^σ (e*)^{1-σ} + (1-σ) e*) dx`
///
/// with `w̃_i = C̃_i coef_i e^{b_i}`. Every integrand is nonnegative; the
/// energy ones by the weighted arithmetic-geometric mean inequality.
pub fn relative_entropy_general(state: &StateField, eq: &EquilibriumState, model: &EntropyModel) -> Result<f64> {
    let EntropyModel::Separable { c, energy: EnergyForm::Power { sigma }, b, coef } = model else {
        return Err(Error::argument("general relative entropy needs a separable power-law model"));
    };
    if state.species_count() != b.len() || eq.c_tilde.len() != b.len() {
        return Err(Error::argument("species counts of state, equilibrium and model disagree"));
    }
    let es = eq.e_star.constant()?;
    let mut acc = 0.0;
    for cell in 0..state.grid.cells() {
        let e = state.e[cell];
        for i in 0..b.len() {
            let w = eq.c_tilde[i] * coef[i] * e.powf(b[i]);
            acc += w * boltzmann_lambda(state.u[i][cell] / w)?;
            acc += eq.c_tilde[i] * coef[i] * es.powf(b[i] - 1.0)
                * (b[i] * e - e.powf(b[i]) * es.powf(1.0 - b[i]) + (1.0 - b[i]) * es);
        }
        acc += c * es.powf(sigma - 1.0) * (sigma * e - e.powf(*sigma) * es.powf(1.0 - sigma) + (1.0 - sigma) * es);
    }
    Ok(acc * state.grid.cell_volume)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{solve_torus_equilibrium, Profile};
    use crate::grid::Grid;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn boltzmann_lambda_frozen_values() {
        assert_eq!(boltzmann_lambda(1.0).unwrap(), 0.0);
        assert_eq!(boltzmann_lambda(0.0).unwrap(), 1.0);
        assert_abs_diff_eq!(boltzmann_lambda(std::f64::consts::E).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(boltzmann_lambda(2.0).unwrap(), 2.0 * 2f64.ln() - 1.0, epsilon = 1e-15);
        assert!(boltzmann_lambda(-0.1).is_err());
        assert!(boltzmann_lambda(f64::NAN).is_err());
    }

    #[test]
    fn boltzmann_lambda_series_is_accurate() {
        // Quadratic contact at the root: λ_B(1+x) ~ x²/2.
        for nominal in [1e-9, -1e-9, 1e-6, -1e-6, 1e-3, -1e-3] {
            let v = boltzmann_lambda(1.0 + nominal).unwrap();
            let x = (1.0 + nominal) - 1.0; // the perturbation that survives rounding
            let x2 = x * x;
            let lead = x2 * (0.5 - x / 6.0 + x2 / 12.0 - x2 * x / 20.0);
            assert!((v - lead).abs() <= 1e-10 * lead.abs() + 1e-300, "x={x}: {v} vs {lead}");
        }
        // Continuity across the series/direct switch at |1-ν| = 0.5.
        for nu in [0.4999999, 0.5000001, 1.4999999, 1.5000001] {
            let v = boltzmann_lambda(nu).unwrap();
            let direct = nu * nu.ln() - nu + 1.0;
            assert_abs_diff_eq!(v, direct, epsilon = 1e-14);
        }
    }

    fn sqrt_model(c: f64) -> EntropyModel {
        EntropyModel::sqrt_family(c, 2).unwrap()
    }

    #[test]
    fn entropy_density_frozen_values() {
        let m = sqrt_model(1.0);
        assert_abs_diff_eq!(entropy_density(&m, &[1.0, 1.0], 1.0, 1.0).unwrap(), 1.0, epsilon = 1e-15);
        let mix = EntropyModel::log_mixture(vec![1.0], vec![1.0]).unwrap();
        assert_abs_diff_eq!(entropy_density(&mix, &[1.0], 1.0, 1.0).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn gradient_frozen_value_and_stationarity() {
        let m = sqrt_model(2.0);
        let (du, de) = entropy_gradient(&m, &[1.0, 1.0], 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(de, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(1.0 / de, 0.5, epsilon = 1e-15);
        // u = w(e): density gradient vanishes.
        let e = 2.7;
        let w = m.weight(0, e, 1.0);
        let (du_w, _) = entropy_gradient(&m, &[w, w], e, 1.0).unwrap();
        assert_abs_diff_eq!(du_w[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(du_w[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(du[0], 0.0, epsilon = 1e-15);
    }

    fn random_model(rng: &mut ChaCha8Rng, species: usize) -> EntropyModel {
        if rng.random_bool(0.75) {
            let energy = if rng.random_bool(0.8) {
                EnergyForm::Power { sigma: rng.random_range(0.1..0.9) }
            } else {
                EnergyForm::Log
            };
            EntropyModel::separable(
                rng.random_range(0.1..3.0),
                energy,
                (0..species).map(|_| rng.random_range(0.05..0.95)).collect(),
                (0..species).map(|_| rng.random_range(0.3..3.0)).collect(),
            )
            .unwrap()
        } else {
            EntropyModel::log_mixture(
                (0..species).map(|_| rng.random_range(0.05..0.95)).collect(),
                (0..species).map(|_| rng.random_range(0.3..3.0)).collect(),
            )
            .unwrap()
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for _ in 0..200 {
            let species = rng.random_range(1..=3);
            let m = random_model(&mut rng, species);
            let gamma = rng.random_range(0.5..2.0);
            let u: Vec<f64> = (0..species).map(|_| rng.random_range(0.5..2.0)).collect();
            let e = rng.random_range(0.5..2.0);
            let (du, de) = entropy_gradient(&m, &u, e, gamma).unwrap();
            for i in 0..species {
                let mut up = u.clone();
                let mut dn = u.clone();
                up[i] += h;
                dn[i] -= h;
                let fd = (entropy_density(&m, &up, e, gamma).unwrap() - entropy_density(&m, &dn, e, gamma).unwrap()) / (2.0 * h);
                assert!((fd - du[i]).abs() <= 1e-6 * du[i].abs().max(1.0), "du[{i}]: {fd} vs {}", du[i]);
            }
            let fd = (entropy_density(&m, &u, e + h, gamma).unwrap() - entropy_density(&m, &u, e - h, gamma).unwrap()) / (2.0 * h);
            assert!((fd - de).abs() <= 1e-6 * de.abs().max(1.0), "de: {fd} vs {de}");
        }
    }

    #[test]
    fn hessian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = 1e-6;
        for _ in 0..100 {
            let species = rng.random_range(1..=3);
            let m = random_model(&mut rng, species);
            let gamma = rng.random_range(0.5..2.0);
            let u: Vec<f64> = (0..species).map(|_| rng.random_range(0.5..2.0)).collect();
            let e = rng.random_range(0.5..2.0);
            let hess = entropy_hessian(&m, &u, e, gamma).unwrap();
            for i in 0..species {
                let mut up = u.clone();
                let mut dn = u.clone();
                up[i] += h;
                dn[i] -= h;
                let (gu, ge) = entropy_gradient(&m, &up, e, gamma).unwrap();
                let (gu2, ge2) = entropy_gradient(&m, &dn, e, gamma).unwrap();
                for j in 0..species {
                    let fd = (gu[j] - gu2[j]) / (2.0 * h);
                    assert!((fd - hess[(j, i)]).abs() <= 1e-5 * hess[(j, i)].abs().max(1.0));
                }
                let fd = (ge - ge2) / (2.0 * h);
                assert!((fd - hess[(species, i)]).abs() <= 1e-5 * hess[(species, i)].abs().max(1.0));
            }
            let (gu, _) = entropy_gradient(&m, &u, e + h, gamma).unwrap();
            let (gu2, _) = entropy_gradient(&m, &u, e - h, gamma).unwrap();
            for j in 0..species {
                let fd = (gu[j] - gu2[j]) / (2.0 * h);
                assert!((fd - hess[(j, species)]).abs() <= 1e-5 * hess[(j, species)].abs().max(1.0));
            }
        }
    }

    #[test]
    fn hessian_is_negative_semidefinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let m = sqrt_model(rng.random_range(0.0..3.0));
            let u = [10f64.powf(rng.random_range(-2.0..2.0)), 10f64.powf(rng.random_range(-2.0..2.0))];
            let e = 10f64.powf(rng.random_range(-2.0..2.0));
            let h = entropy_hessian(&m, &u, e, 1.0).unwrap();
            let eig = h.symmetric_eigen();
            for ev in eig.eigenvalues.iter() {
                assert!(*ev <= 1e-10, "eigenvalue {ev} at u={u:?} e={e}");
            }
        }
    }

    #[test]
    fn hessian_quadratic_form_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..500 {
            let species = rng.random_range(1..=3);
            let m = random_model(&mut rng, species);
            let gamma = rng.random_range(0.5..2.0);
            let u: Vec<f64> = (0..species).map(|_| 10f64.powf(rng.random_range(-1.0..1.0))).collect();
            let e = 10f64.powf(rng.random_range(-1.0..1.0));
            let h = entropy_hessian(&m, &u, e, gamma).unwrap();
            let mu: Vec<f64> = (0..species).map(|_| rng.random_range(-1.0..1.0)).collect();
            let eps: f64 = rng.random_range(-1.0..1.0);
            let mut quad = 0.0;
            for i in 0..species {
                for j in 0..species {
                    quad += mu[i] * h[(i, j)] * mu[j];
                }
                quad += 2.0 * mu[i] * h[(i, species)] * eps;
            }
            quad += eps * eps * h[(species, species)];
            // -(μ,ε) D²S (μ,ε) = Σ u (μ/u - ε w′/w)² + ε² (-s″ - Σ u w″/w).
            let exps = m.weight_exponents();
            let mut want = eps * eps * (-m.s_second(e, gamma));
            for i in 0..species {
                let dlw = exps[i] / e;
                let w2w = exps[i] * (exps[i] - 1.0) / (e * e);
                want += u[i] * (mu[i] / u[i] - eps * dlw).powi(2) - eps * eps * u[i] * w2w;
            }
            let scale = want.abs().max(1.0);
            assert!((-quad - want).abs() <= 1e-10 * scale, "{} vs {}", -quad, want);
        }
    }

    #[test]
    fn mobility_frozen_values() {
        let m = sqrt_model(2.0);
        let mob = mobility_scalar(&m, &[1.0, 1.0], 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(mob, 1.0, epsilon = 1e-15);
        // N = n + p + c√e counts the four quarters.
        assert_abs_diff_eq!(4.0 * mob, 4.0, epsilon = 1e-15);
        // Zero densities leave the heat term.
        let mob0 = mobility_scalar(&m, &[0.0, 0.0], 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(mob0, 0.5, epsilon = 1e-15);
        // Integer exponents and no heat term: singular.
        let lin = EntropyModel::separable(0.0, EnergyForm::Power { sigma: 0.5 }, vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
        assert!(mobility_scalar(&lin, &[1.0, 1.0], 1.0, 1.0).is_err());
    }

    #[test]
    fn mobility_tensor_inverts_hessian() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..300 {
            let species = rng.random_range(1..=3);
            let m = random_model(&mut rng, species);
            let gamma = rng.random_range(0.5..2.0);
            let u: Vec<f64> = (0..species).map(|_| 10f64.powf(rng.random_range(-1.0..1.0))).collect();
            let e = 10f64.powf(rng.random_range(-1.0..1.0));
            let kappa = rng.random_range(0.2..3.0);
            let Ok(t) = mobility_tensor(&m, &u, e, gamma, kappa) else {
                continue; // degenerate mobility draw
            };
            let asym = (&t - t.transpose()).abs().max();
            assert_eq!(asym, 0.0);
            let h = entropy_hessian(&m, &u, e, gamma).unwrap();
            let inv = (-h).try_inverse().unwrap();
            let diff = (&t - inv * kappa).abs().max();
            assert!(diff <= 1e-8 * kappa * t.abs().max().max(1.0), "diff {diff}");
        }
    }

    #[test]
    fn mobility_tensor_decouples_without_cross_terms() {
        let m = EntropyModel::separable(1.5, EnergyForm::Power { sigma: 0.5 }, vec![0.0], vec![1.0]).unwrap();
        let (u, e, kappa) = ([0.7], 1.3, 2.0);
        let t = mobility_tensor(&m, &u, e, 1.0, kappa).unwrap();
        assert_abs_diff_eq!(t[(0, 0)], kappa * u[0], epsilon = 1e-15);
        assert_eq!(t[(0, 1)], 0.0);
        assert_abs_diff_eq!(t[(1, 1)], kappa * e * e / (-e * e * m.s_second(e, 1.0)), epsilon = 1e-12);
    }

    #[test]
    fn relative_entropy_torus_frozen_value() {
        let grid = Grid::torus(1, 16).unwrap();
        let eq = solve_torus_equilibrium(0.0, 1.0, 2.0).unwrap();
        let m = sqrt_model(2.0);
        let state = StateField::constant(grid, &[2.0, 0.5], 1.0).unwrap();
        let h = relative_entropy_torus(&state, &eq, &m).unwrap();
        let want = boltzmann_lambda(2.0).unwrap() + boltzmann_lambda(0.5).unwrap();
        assert_abs_diff_eq!(h, want, epsilon = 1e-14);
        assert_abs_diff_eq!(h, 0.539_720, epsilon = 1e-6);
        let eq_state = StateField::constant(grid, &[1.0, 1.0], 1.0).unwrap();
        assert_eq!(relative_entropy_torus(&eq_state, &eq, &m).unwrap(), 0.0);
    }

    #[test]
    fn relative_entropy_matches_entropy_difference() {
        // H must equal -S(state) + S(eq) + Σ_e ∫(e - e*) for the model whose
        // weights absorb C_n, C_p, on fields with no constraint imposed.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let grid = Grid::torus(1, 24).unwrap();
        for &(c0, e0, c) in &[(0.0, 1.0, 2.0), (1.5, 1.0, 1.0), (-0.8, 2.5, 0.7)] {
            let eq = solve_torus_equilibrium(c0, e0, c).unwrap();
            let plain = sqrt_model(c);
            let folded = EntropyModel::separable(
                c,
                EnergyForm::Power { sigma: 0.5 },
                vec![0.5, 0.5],
                vec![eq.c_tilde[0], eq.c_tilde[1]],
            )
            .unwrap();
            for _ in 0..20 {
                let mut mk = |lo: f64, hi: f64| -> Vec<f64> {
                    (0..grid.cells()).map(|_| rng.random_range(lo..hi)).collect()
                };
                let state = StateField::new(grid, vec![mk(0.05, 4.0), mk(0.05, 4.0)], mk(0.1, 5.0)).unwrap();
                let h = relative_entropy_torus(&state, &eq, &plain).unwrap();
                let es = eq.e_star.constant().unwrap();
                let eq_state = StateField::constant(grid, &[eq.u_star[0].constant().unwrap(), eq.u_star[1].constant().unwrap()], es).unwrap();
                let defining = -total_entropy(&state, &folded, None).unwrap()
                    + total_entropy(&eq_state, &folded, None).unwrap()
                    + eq.sigma_e * (grid.integrate(&state.e) - es);
                assert!((h - defining).abs() <= 1e-10 * h.max(1.0), "{h} vs {defining}");
            }
        }
    }

    #[test]
    fn relative_entropy_confined_closed_form() {
        // e = 4 e*, densities on the weight manifold: only the energy term
        // remains and integrates to (c + C_n + C_p)/2.
        let grid = Grid::boxed(1, 128, 6.0).unwrap();
        let c = 1.3;
        let cn: f64 = 1.9;
        let cp = 1.0 / cn;
        let mut estar: Vec<f64> = (0..grid.cells())
            .map(|i| {
                let x = grid.axis_coord(0, i);
                (-x * x).exp()
            })
            .collect();
        let z = grid.integrate(&estar);
        for v in estar.iter_mut() {
            *v /= z;
        }
        let e: Vec<f64> = estar.iter().map(|&v| 4.0 * v).collect();
        let n: Vec<f64> = estar.iter().zip(&e).map(|(&s, &ev)| cn * (ev * s).sqrt()).collect();
        let p: Vec<f64> = estar.iter().zip(&e).map(|(&s, &ev)| cp * (ev * s).sqrt()).collect();
        let eq = EquilibriumState {
            e_star: Profile::Field(estar.clone()),
            u_star: vec![
                Profile::Field(estar.iter().map(|&s| cn * s).collect()),
                Profile::Field(estar.iter().map(|&s| cp * s).collect()),
            ],
            c_tilde: vec![cn, cp],
            sigma_u: vec![0.0, 0.0],
            sigma_e: (c + cn + cp) / 2.0,
            e0: 1.0,
            cons0: vec![(cn - cp) / 2.0, -(cn - cp) / 2.0],
        };
        let state = StateField::new(grid, vec![n, p], e).unwrap();
        let m = sqrt_model(c);
        let h = relative_entropy_confined(&state, &eq, &m).unwrap();
        assert_abs_diff_eq!(h, (c + cn + cp) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn relative_entropy_general_reduces_to_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let grid = Grid::torus(1, 24).unwrap();
        for &(c0, e0, c) in &[(0.0, 1.0, 2.0), (1.5, 1.0, 1.0)] {
            let eq = solve_torus_equilibrium(c0, e0, c).unwrap();
            let m = sqrt_model(c);
            for _ in 0..20 {
                let mut mk = |lo: f64, hi: f64| -> Vec<f64> {
                    (0..grid.cells()).map(|_| rng.random_range(lo..hi)).collect()
                };
                let state = StateField::new(grid, vec![mk(0.05, 4.0), mk(0.05, 4.0)], mk(0.1, 5.0)).unwrap();
                let h = relative_entropy_torus(&state, &eq, &m).unwrap();
                let g = relative_entropy_general(&state, &eq, &m).unwrap();
                assert!((h - g).abs() <= 1e-10 * h.max(1.0), "{h} vs {g}");
            }
        }
    }

    #[test]
    fn relative_entropy_general_terms_nonnegative() {
        // Both energy integrands are weighted arithmetic-geometric gaps.
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        for _ in 0..10_000 {
            let b: f64 = rng.random_range(0.0..=1.0);
            let e = 10f64.powf(rng.random_range(-2.0..2.0));
            let es = 10f64.powf(rng.random_range(-2.0..2.0));
            let gap = b * e - e.powf(b) * es.powf(1.0 - b) + (1.0 - b) * es;
            assert!(gap >= -1e-13 * (e + es), "b={b} e={e} e*={es}: {gap}");
        }
    }

    #[test]
    fn model_construction_guards() {
        assert!(EntropyModel::separable(1.0, EnergyForm::Power { sigma: 1.0 }, vec![0.5], vec![1.0]).is_err());
        assert!(EntropyModel::separable(1.0, EnergyForm::Power { sigma: 0.0 }, vec![0.5], vec![1.0]).is_err());
        assert!(EntropyModel::separable(-1.0, EnergyForm::Power { sigma: 0.5 }, vec![0.5], vec![1.0]).is_err());
        assert!(EntropyModel::separable(1.0, EnergyForm::Power { sigma: 0.5 }, vec![1.5], vec![1.0]).is_err());
        assert!(EntropyModel::separable(0.0, EnergyForm::Power { sigma: 0.5 }, vec![0.5], vec![1.0]).is_ok());
        assert!(EntropyModel::log_mixture(vec![0.5], vec![0.0]).is_err());
    }

    #[test]
    fn state_field_validation() {
        let grid = Grid::torus(1, 16).unwrap();
        assert!(StateField::new(grid, vec![vec![1.0; 16]], vec![0.0; 16]).is_err());
        assert!(StateField::new(grid, vec![vec![-1.0; 16]], vec![1.0; 16]).is_err());
        assert!(StateField::new(grid, vec![vec![1.0; 15]], vec![1.0; 16]).is_err());
        assert!(StateField::new(grid, vec![vec![1.0; 16]], vec![1.0; 16]).is_ok());
    }
}
