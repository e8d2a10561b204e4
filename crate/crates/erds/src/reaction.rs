//! Mass-action reaction networks written against reference densities.
//!
//! A network holds reactions `alpha -> beta` (integer stoichiometry). With a
//! positive reference state `w` and per-reaction coefficients `k*`, the net
//! rate is
//!
//! `R(u) = -Σ_r k*_r (u^α/w^α - u^β/w^β) (α - β)`
//!
//! and the associated symmetric positive-semidefinite exchange matrix is
//!
//! `H(u) = Σ_r k*_r Λ(u^α/w^α, u^β/w^β) (α - β) ⊗ (α - β)`
//!
//! with `Λ` the logarithmic mean. These two satisfy
//! `H(u) (log u - log w) = -R(u)`; both are evaluated from the shared
//! log-ratios so the identity survives in floating point.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Logarithmic mean `(a - b) / (log a - log b)`, continuously extended by
/// `Λ(a, a) = a`. Near-equal arguments use the midpoint series to avoid the
/// 0/0 cancellation.
pub fn lambda_mean(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0) || !(b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::domain(format!("lambda_mean needs positive finite arguments, got ({a}, {b})")));
    }
    let d = a.ln() - b.ln();
    if d.abs() < 1e-8 {
        let m = 0.5 * (a + b);
        return Ok(m - (a - b) * (a - b) / (12.0 * m));
    }
    Ok((a - b) / d)
}

/// Reaction coefficient `k` as a function of the state. The exchange
/// coefficient fed to [`reaction_rhs`]/[`onsager_matrix`] for the
/// recombination systems is `k* = k(u) * e`.
#[derive(Clone)]
pub enum RateForm {
    Constant { k: f64 },
    /// `k = k0 / (1 + c_n * u[0] + c_p * u[1])`.
    ReadShockleyHall { k0: f64, c_n: f64, c_p: f64 },
    /// Direct exchange coefficient `(u, e) -> k*`.
    Custom(Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for RateForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RateForm::Constant { k } => write!(f, "Constant {{ k: {k} }}"),
            RateForm::ReadShockleyHall { k0, c_n, c_p } => {
                write!(f, "ReadShockleyHall {{ k0: {k0}, c_n: {c_n}, c_p: {c_p} }}")
            }
            RateForm::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl RateForm {
    /// The state-dependent coefficient `k(u)`; does not include the factor `e`.
    pub fn coefficient(&self, u: &[f64]) -> f64 {
        match self {
            RateForm::Constant { k } => *k,
            RateForm::ReadShockleyHall { k0, c_n, c_p } => {
                k0 / (1.0 + c_n * u.first().copied().unwrap_or(0.0) + c_p * u.get(1).copied().unwrap_or(0.0))
            }
            RateForm::Custom(_) => f64::NAN,
        }
    }

    /// Exchange coefficient `k*(u, e)`.
    pub fn k_star(&self, u: &[f64], e: f64) -> f64 {
        match self {
            RateForm::Custom(f) => f(u, e),
            _ => self.coefficient(u) * e,
        }
    }

    /// Upper bound of `k(u)` over all nonnegative states; `None` for custom
    /// rates, which carry no a priori bound.
    pub fn coefficient_upper(&self) -> Option<f64> {
        match self {
            RateForm::Constant { k } => Some(*k),
            RateForm::ReadShockleyHall { k0, .. } => Some(*k0),
            RateForm::Custom(_) => None,
        }
    }

    /// Lower bound of `k(u)` when `0 <= u_i <= u_max_i`.
    pub fn coefficient_lower(&self, u_max: &[f64]) -> f64 {
        match self {
            RateForm::Constant { k } => *k,
            RateForm::ReadShockleyHall { k0, c_n, c_p } => {
                k0 / (1.0
                    + c_n * u_max.first().copied().unwrap_or(0.0)
                    + c_p * u_max.get(1).copied().unwrap_or(0.0))
            }
            RateForm::Custom(_) => f64::NAN,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Reaction {
    pub alpha: Vec<u32>,
    pub beta: Vec<u32>,
    pub rate: RateForm,
}

impl Reaction {
    pub fn new(alpha: Vec<u32>, beta: Vec<u32>, rate: RateForm) -> Result<Self> {
        if alpha.len() != beta.len() {
            return Err(Error::argument("alpha and beta must have equal length"));
        }
        if alpha == beta {
            return Err(Error::argument("reaction with alpha == beta exchanges nothing"));
        }
        Ok(Reaction { alpha, beta, rate })
    }

    /// Net stoichiometric vector `alpha - beta`.
    pub fn gamma(&self) -> Vec<f64> {
        self.alpha.iter().zip(&self.beta).map(|(&a, &b)| a as f64 - b as f64).collect()
    }
}

#[derive(Debug, Clone)]
pub struct ReactionNetwork {
    species: usize,
    reactions: Vec<Reaction>,
    /// Orthonormal basis of the stoichiometric subspace `S = span{alpha - beta}`.
    stoich_basis: Vec<Vec<f64>>,
    /// Orthonormal basis of the conserved complement `S_perp`.
    sperp_basis: Vec<Vec<f64>>,
    /// Orthogonal projection onto `S_perp`, row-major `species x species`.
    projection: DMatrix<f64>,
}

fn orthonormalize(vectors: impl Iterator<Item = Vec<f64>>, dim: usize, basis: &mut Vec<Vec<f64>>) {
    for mut v in vectors {
        debug_assert_eq!(v.len(), dim);
        let norm0: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            continue;
        }
        // Two Gram-Schmidt passes keep the basis orthogonal to ~1e-15.
        for _ in 0..2 {
            for q in basis.iter() {
                let dot: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (qi, vi) in q.iter().zip(v.iter_mut()) {
                    *vi -= dot * qi;
                }
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 * norm0 {
            for x in v.iter_mut() {
                *x /= norm;
            }
            basis.push(v);
        }
    }
}

impl ReactionNetwork {
    pub fn new(species: usize, reactions: Vec<Reaction>) -> Result<Self> {
        if species == 0 {
            return Err(Error::argument("network needs at least one species"));
        }
        for (r, reac) in reactions.iter().enumerate() {
            if reac.alpha.len() != species {
                return Err(Error::argument(format!(
                    "reaction {r} has {} species, network has {species}",
                    reac.alpha.len()
                )));
            }
        }
        let mut stoich_basis = Vec::new();
        orthonormalize(reactions.iter().map(|r| r.gamma()), species, &mut stoich_basis);
        let mut sperp_basis = stoich_basis.clone();
        let before = sperp_basis.len();
        orthonormalize(
            (0..species).map(|i| {
                let mut e = vec![0.0; species];
                e[i] = 1.0;
                e
            }),
            species,
            &mut sperp_basis,
        );
        let sperp_basis: Vec<Vec<f64>> = sperp_basis.split_off(before);
        let mut projection = DMatrix::zeros(species, species);
        for q in &sperp_basis {
            for i in 0..species {
                for j in 0..species {
                    projection[(i, j)] += q[i] * q[j];
                }
            }
        }
        Ok(ReactionNetwork { species, reactions, stoich_basis, sperp_basis, projection })
    }

    /// Two-species recombination `(1,1) -> (0,0)` with the given rate.
    pub fn bipolar(rate: RateForm) -> Self {
        ReactionNetwork::new(2, vec![Reaction::new(vec![1, 1], vec![0, 0], rate).unwrap()]).unwrap()
    }

    pub fn species_count(&self) -> usize {
        self.species
    }

    pub fn reactions(&self) -> &[Reaction] {
        &self.reactions
    }

    pub fn stoich_basis(&self) -> &[Vec<f64>] {
        &self.stoich_basis
    }

    /// Orthonormal basis of the space of conserved linear combinations.
    pub fn sperp_basis(&self) -> &[Vec<f64>] {
        &self.sperp_basis
    }

    /// Orthogonal projection onto the conserved complement of the
    /// stoichiometric subspace.
    pub fn projection(&self) -> &DMatrix<f64> {
        &self.projection
    }

    /// Apply the projection to a vector.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.species];
        for q in &self.sperp_basis {
            let dot: f64 = q.iter().zip(v).map(|(a, b)| a * b).sum();
            for (o, qi) in out.iter_mut().zip(q) {
                *o += dot * qi;
            }
        }
        out
    }
}

/// Projection onto the conserved complement of `span{alpha - beta}`.
/// Fails on an empty reaction list; a network with no reactions projects
/// with the identity instead (see [`ReactionNetwork::projection`]).
pub fn stoich_projection(species: usize, reactions: &[Reaction]) -> Result<DMatrix<f64>> {
    if reactions.is_empty() {
        return Err(Error::argument("stoich_projection needs at least one reaction"));
    }
    Ok(ReactionNetwork::new(species, reactions.to_vec())?.projection().clone())
}

/// Per-reaction log ratios shared by [`reaction_rhs`] and [`onsager_matrix`].
/// Returns `(lb, delta)` with `lb = beta . mu`, `delta = (alpha - beta) . mu`,
/// `mu_i = log(u_i / w_i)`.
fn log_monomials(reaction: &Reaction, mu: &[f64]) -> (f64, f64) {
    let mut lb = 0.0;
    let mut delta = 0.0;
    for i in 0..mu.len() {
        lb += reaction.beta[i] as f64 * mu[i];
        delta += (reaction.alpha[i] as f64 - reaction.beta[i] as f64) * mu[i];
    }
    (lb, delta)
}

fn check_state(network: &ReactionNetwork, u: &[f64], w: &[f64], k_star: &[f64]) -> Result<()> {
    if u.len() != network.species || w.len() != network.species {
        return Err(Error::argument("state/reference length does not match species count"));
    }
    if k_star.len() != network.reactions.len() {
        return Err(Error::argument("k_star length does not match reaction count"));
    }
    if w.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::domain("reference densities must be positive and finite"));
    }
    if u.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::domain("densities must be nonnegative and finite"));
    }
    if k_star.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::domain("exchange coefficients must be nonnegative and finite"));
    }
    Ok(())
}

/// Net mass-action rate `R(u)`; accepts zero densities.
pub fn reaction_rhs(network: &ReactionNetwork, u: &[f64], w: &[f64], k_star: &[f64]) -> Result<Vec<f64>> {
    check_state(network, u, w, k_star)?;
    let mut rhs = vec![0.0; network.species];
    if u.iter().all(|&x| x > 0.0) {
        let mu: Vec<f64> = u.iter().zip(w).map(|(&ui, &wi)| ui.ln() - wi.ln()).collect();
        for (r, reac) in network.reactions.iter().enumerate() {
            let (lb, delta) = log_monomials(reac, &mu);
            if lb.abs() > 700.0 || (lb + delta).abs() > 700.0 {
                return Err(Error::domain("mass-action monomial overflows f64 range"));
            }
            let flux = k_star[r] * lb.exp() * delta.exp_m1();
            for i in 0..network.species {
                rhs[i] -= flux * (reac.alpha[i] as f64 - reac.beta[i] as f64);
            }
        }
    } else {
        // Direct monomials so exact zeros stay exact.
        for (r, reac) in network.reactions.iter().enumerate() {
            let mut a = 1.0;
            let mut b = 1.0;
            for i in 0..network.species {
                let ratio = u[i] / w[i];
                a *= ratio.powi(reac.alpha[i] as i32);
                b *= ratio.powi(reac.beta[i] as i32);
            }
            let flux = k_star[r] * (a - b);
            for i in 0..network.species {
                rhs[i] -= flux * (reac.alpha[i] as f64 - reac.beta[i] as f64);
            }
        }
    }
    Ok(rhs)
}

/// Exchange matrix `H(u)`; needs strictly positive densities.
pub fn onsager_matrix(network: &ReactionNetwork, u: &[f64], w: &[f64], k_star: &[f64]) -> Result<DMatrix<f64>> {
    check_state(network, u, w, k_star)?;
    if u.iter().any(|&x| x == 0.0) {
        return Err(Error::domain("onsager_matrix needs strictly positive densities"));
    }
    let mu: Vec<f64> = u.iter().zip(w).map(|(&ui, &wi)| ui.ln() - wi.ln()).collect();
    let i_count = network.species;
    let mut h = DMatrix::zeros(i_count, i_count);
    for (r, reac) in network.reactions.iter().enumerate() {
        let (lb, delta) = log_monomials(reac, &mu);
        if lb.abs() > 700.0 || (lb + delta).abs() > 700.0 {
            return Err(Error::domain("mass-action monomial overflows f64 range"));
        }
        // Λ(a, b) = b (e^δ - 1)/δ with the same δ used in the chain rule,
        // so H (log u - log w) = -R holds to rounding.
        let lam = if delta.abs() < 1e-5 {
            lb.exp() * (1.0 + delta * (0.5 + delta * (1.0 / 6.0 + delta / 24.0)))
        } else {
            lb.exp() * delta.exp_m1() / delta
        };
        let gamma = reac.gamma();
        for i in 0..i_count {
            for j in 0..i_count {
                h[(i, j)] += k_star[r] * lam * gamma[i] * gamma[j];
            }
        }
    }
    Ok(h)
}

/// Scale-aware residual of `H(u)(log u - log w) + R(u) = 0`, reported as
/// `max_i |residual_i| / scale_i` where `scale_i` sums the unsigned
/// per-reaction contributions to component `i`.
pub fn gradient_identity_residual(
    network: &ReactionNetwork,
    u: &[f64],
    w: &[f64],
    k_star: &[f64],
) -> Result<f64> {
    let h = onsager_matrix(network, u, w, k_star)?;
    let r = reaction_rhs(network, u, w, k_star)?;
    let mu: Vec<f64> = u.iter().zip(w).map(|(&ui, &wi)| ui.ln() - wi.ln()).collect();

    let mut scale = vec![1e-300; network.species];
    for (ri, reac) in network.reactions.iter().enumerate() {
        let (lb, delta) = log_monomials(reac, &mu);
        let (a, b) = ((lb + delta).exp(), lb.exp());
        for i in 0..network.species {
            scale[i] += k_star[ri] * (a + b) * (reac.alpha[i] as f64 - reac.beta[i] as f64).abs();
        }
    }
    let mut worst: f64 = 0.0;
    for i in 0..network.species {
        let mut hv = 0.0;
        for j in 0..network.species {
            hv += h[(i, j)] * mu[j];
        }
        worst = worst.max((hv + r[i]).abs() / scale[i]);
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct DetailedBalanceReport {
    pub ok: bool,
    /// Per reaction: `log(k_fw w^alpha) - log(k_bw w^beta)`.
    pub log_residuals: Vec<f64>,
}

/// Checks `k_fw_r w^alpha = k_bw_r w^beta` for every reaction, with a
/// relative tolerance of 1e-10. Vacuously true for an empty network.
pub fn check_detailed_balance(
    network: &ReactionNetwork,
    w: &[f64],
    forward_rates: &[f64],
    backward_rates: &[f64],
) -> Result<DetailedBalanceReport> {
    if w.len() != network.species {
        return Err(Error::argument("reference length does not match species count"));
    }
    if forward_rates.len() != network.reactions.len() || backward_rates.len() != network.reactions.len() {
        return Err(Error::argument("rate list length does not match reaction count"));
    }
    if w.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::domain("reference densities must be positive"));
    }
    let lw: Vec<f64> = w.iter().map(|x| x.ln()).collect();
    let mut log_residuals = Vec::with_capacity(network.reactions.len());
    for (r, reac) in network.reactions.iter().enumerate() {
        if !(forward_rates[r] > 0.0) || !(backward_rates[r] > 0.0) {
            return Err(Error::domain("rates must be positive where evaluated"));
        }
        let la: f64 = reac.alpha.iter().zip(&lw).map(|(&a, &l)| a as f64 * l).sum();
        let lb: f64 = reac.beta.iter().zip(&lw).map(|(&b, &l)| b as f64 * l).sum();
        log_residuals.push(forward_rates[r].ln() + la - backward_rates[r].ln() - lb);
    }
    let ok = log_residuals.iter().all(|r| r.abs() <= 1e-10);
    Ok(DetailedBalanceReport { ok, log_residuals })
}
