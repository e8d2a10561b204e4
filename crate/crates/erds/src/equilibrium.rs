//! Constrained maximum-entropy equilibria: closed forms for the two
//! simulation scenarios and a damped Newton iteration on the conserved-moment
//! multipliers for general networks.

use crate::entropy::{entropy_gradient, EntropyModel};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::reaction::ReactionNetwork;

/// A field that is known to be spatially constant, or a per-cell array.
#[derive(Debug, Clone)]
pub enum Profile {
    Constant(f64),
    Field(Vec<f64>),
}

impl Profile {
    pub fn at(&self, cell: usize) -> f64 {
        match self {
            Profile::Constant(v) => *v,
            Profile::Field(f) => f[cell],
        }
    }

    pub fn constant(&self) -> Result<f64> {
        match self {
            Profile::Constant(v) => Ok(*v),
            Profile::Field(_) => Err(Error::argument("expected a spatially constant profile")),
        }
    }

    /// Materialize on a grid with `cells` cells.
    pub fn field(&self, cells: usize) -> Result<Vec<f64>> {
        match self {
            Profile::Constant(v) => Ok(vec![*v; cells]),
            Profile::Field(f) if f.len() == cells => Ok(f.clone()),
            Profile::Field(f) => Err(Error::argument(format!("profile has {} cells, expected {cells}", f.len()))),
        }
    }
}

/// Maximizer of the entropy under the conserved moments. The density
/// multipliers of the two closed-form scenarios are folded into `c_tilde`
/// (so `sigma_u = 0` there); the general solver reports them separately.
#[derive(Debug, Clone)]
pub struct EquilibriumState {
    pub e_star: Profile,
    pub u_star: Vec<Profile>,
    /// Per-species factors with `u*_i = c_tilde_i w_i(x, e*)`.
    pub c_tilde: Vec<f64>,
    /// Density multipliers relative to the model weights; lies in the
    /// conserved subspace.
    pub sigma_u: Vec<f64>,
    /// Energy multiplier `∂_e S` at the equilibrium.
    pub sigma_e: f64,
    pub e0: f64,
    /// Projected conserved moments; for the recombination pair this is
    /// `(C0/2, -C0/2)` with `C0` the density difference.
    pub cons0: Vec<f64>,
}

impl EquilibriumState {
    pub fn c_n(&self) -> f64 {
        self.c_tilde[0]
    }

    pub fn c_p(&self) -> f64 {
        self.c_tilde[1]
    }
}

/// Positive root of `C² - qC - 1 = 0`, stable for either sign of `q`.
fn positive_root(q: f64) -> f64 {
    if q >= 0.0 {
        0.5 * (q + (q * q + 4.0).sqrt())
    } else {
        2.0 / ((q * q + 4.0).sqrt() - q)
    }
}

/// Equilibrium of the homogeneous two-species system with density difference
/// `c0`, total energy `e0` and heat weight `c`:
/// `e* = e0`, `C_n C_p = 1`, `C_n - C_p = c0/√e*`, `u* = C √e*`.
pub fn solve_torus_equilibrium(c0: f64, e0: f64, c: f64) -> Result<EquilibriumState> {
    if !(e0 > 0.0) || !e0.is_finite() {
        return Err(Error::domain(format!("total energy must be positive and finite, got {e0}")));
    }
    if !c0.is_finite() || !(c >= 0.0) || !c.is_finite() {
        return Err(Error::domain("density difference must be finite and the heat weight nonnegative"));
    }
    let root_e = e0.sqrt();
    let cn = positive_root(c0 / root_e);
    let cp = 1.0 / cn;
    Ok(EquilibriumState {
        e_star: Profile::Constant(e0),
        u_star: vec![Profile::Constant(cn * root_e), Profile::Constant(cp * root_e)],
        c_tilde: vec![cn, cp],
        sigma_u: vec![0.0, 0.0],
        sigma_e: (cn + cp + c) / (2.0 * root_e),
        e0,
        cons0: vec![0.5 * c0, -0.5 * c0],
    })
}

/// Equilibrium of the confined two-species system on a box grid. The
/// potential is renormalized so the discrete integral of `exp(-2V)` is one;
/// then `e* = exp(-2V)`, `u* = C exp(-2V)` with `C_n - C_p = c0`,
/// `C_n C_p = 1`, and the total energy is one.
pub fn confined_equilibrium(grid: &Grid, v: &[f64], c0: f64, c: f64) -> Result<EquilibriumState> {
    if grid.is_torus() {
        return Err(Error::argument("confined equilibrium needs a box grid"));
    }
    grid.assert_field(v, "potential")?;
    if !c0.is_finite() || !(c >= 0.0) || !c.is_finite() {
        return Err(Error::domain("density difference must be finite and the heat weight nonnegative"));
    }
    let mut estar: Vec<f64> = v.iter().map(|&vi| (-2.0 * vi).exp()).collect();
    let z = grid.integrate(&estar);
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::domain("exp(-2V) is not integrable on this grid"));
    }
    for x in estar.iter_mut() {
        *x /= z;
    }
    let mut boundary_mass = 0.0;
    let (nx, ny) = (grid.n[0], grid.n[1]);
    for iy in 0..ny {
        for ix in 0..nx {
            let edge = ix == 0 || ix == nx - 1 || (grid.dim == 2 && (iy == 0 || iy == ny - 1));
            if edge {
                boundary_mass += estar[grid.idx(ix, iy)] * grid.cell_volume;
            }
        }
    }
    if boundary_mass > 1e-6 {
        return Err(Error::domain(format!(
            "potential leaves {boundary_mass:.2e} of the reference energy in the outermost cells; \
             the box truncates a non-decayed profile, enlarge it or steepen the potential"
        )));
    }
    let cn = positive_root(c0);
    let cp = 1.0 / cn;
    Ok(EquilibriumState {
        e_star: Profile::Field(estar.clone()),
        u_star: vec![
            Profile::Field(estar.iter().map(|&s| cn * s).collect()),
            Profile::Field(estar.iter().map(|&s| cp * s).collect()),
        ],
        c_tilde: vec![cn, cp],
        sigma_u: vec![0.0, 0.0],
        sigma_e: (cn + cp + c) / 2.0,
        e0: 1.0,
        cons0: vec![0.5 * c0, -0.5 * c0],
    })
}

/// Maximum-entropy state for a homogeneous model under the conserved moments
/// `cons0` (a vector in the conserved subspace) and total energy `e0`.
/// Newton iteration on the multiplier coordinates; the step is halved while
/// the constraint residual fails to decrease.
pub fn general_max_entropy(
    model: &EntropyModel,
    network: &ReactionNetwork,
    cons0: &[f64],
    e0: f64,
) -> Result<EquilibriumState> {
    general_max_entropy_from(model, network, cons0, e0, None).map(|(eq, _)| eq)
}

/// Same as [`general_max_entropy`], also reporting the Newton iteration
/// count.
pub fn general_max_entropy_counted(
    model: &EntropyModel,
    network: &ReactionNetwork,
    cons0: &[f64],
    e0: f64,
) -> Result<(EquilibriumState, usize)> {
    general_max_entropy_from(model, network, cons0, e0, None)
}

/// Same as [`general_max_entropy`] with an explicit start for the multiplier
/// coordinates in the conserved-subspace basis; returns the state and the
/// Newton iteration count.
pub fn general_max_entropy_from(
    model: &EntropyModel,
    network: &ReactionNetwork,
    cons0: &[f64],
    e0: f64,
    start: Option<&[f64]>,
) -> Result<(EquilibriumState, usize)> {
    let species = network.species_count();
    if model.species_count() != species || cons0.len() != species {
        return Err(Error::argument("model, network and constraint dimensions disagree"));
    }
    if !(e0 > 0.0) || !e0.is_finite() {
        return Err(Error::domain(format!("total energy must be positive and finite, got {e0}")));
    }
    let projected = network.project(cons0);
    let off = cons0.iter().zip(&projected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale0 = cons0.iter().map(|x| x.abs()).fold(1.0, f64::max);
    if off > 1e-10 * scale0 {
        return Err(Error::argument("constraint vector has a component along the reactive directions"));
    }
    let q = network.sperp_basis();
    let m = q.len();
    let targets: Vec<f64> = q.iter().map(|qj| qj.iter().zip(cons0).map(|(a, b)| a * b).sum()).collect();
    let w: Vec<f64> = (0..species).map(|i| model.weight(i, e0, 1.0)).collect();

    let mut theta = match start {
        Some(t) if t.len() == m => t.to_vec(),
        Some(_) => return Err(Error::argument("start vector length does not match the conserved subspace dimension")),
        None => vec![0.0; m],
    };
    let scale = targets.iter().map(|t| t.abs()).fold(1.0, f64::max);

    let eval = |theta: &[f64]| -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let mut s = vec![0.0; species];
        for (j, qj) in q.iter().enumerate() {
            for i in 0..species {
                s[i] += theta[j] * qj[i];
            }
        }
        if s.iter().any(|x| x.abs() > 700.0) {
            return Err(Error::numerical("equilibrium multipliers overflow the representable density range", None));
        }
        let u: Vec<f64> = (0..species).map(|i| w[i] * (-s[i]).exp()).collect();
        let f: Vec<f64> = q
            .iter()
            .zip(&targets)
            .map(|(qj, t)| qj.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() - t)
            .collect();
        let res = f.iter().map(|x| x.abs()).fold(0.0, f64::max);
        Ok((u, f, res))
    };

    let (mut u, mut f, mut res) = eval(&theta)?;
    let mut iters = 0usize;
    while res > 1e-12 * scale {
        iters += 1;
        if iters > 100 {
            return Err(Error::numerical(
                format!(
                    "equilibrium iteration did not converge in 100 steps \
                     (constraint residual {res:.3e}, multipliers {theta:?}); \
                     the requested moments may be unreachable from positive densities"
                ),
                None,
            ));
        }
        let mut jac = nalgebra::DMatrix::zeros(m, m);
        for j in 0..m {
            for l in 0..m {
                jac[(j, l)] = (0..species).map(|i| q[j][i] * q[l][i] * u[i]).sum();
            }
        }
        let rhs = nalgebra::DVector::from_iterator(m, f.iter().map(|x| -x));
        let delta = match jac.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => jac
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::numerical("singular constraint Jacobian in the equilibrium iteration", None))?,
        };
        // Multipliers move along -δ: du/dθ carries the minus sign already.
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=30 {
            let trial: Vec<f64> = theta.iter().enumerate().map(|(j, t)| t - lambda * delta[j]).collect();
            if let Ok((ut, ft, rt)) = eval(&trial) {
                if rt < res {
                    theta = trial;
                    (u, f, res) = (ut, ft, rt);
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::numerical(
                format!("equilibrium iteration stalled (constraint residual {res:.3e}, multipliers {theta:?})"),
                None,
            ));
        }
    }

    let mut sigma_u = vec![0.0; species];
    for (j, qj) in q.iter().enumerate() {
        for i in 0..species {
            sigma_u[i] += theta[j] * qj[i];
        }
    }
    // Stationarity is structural (u = w e^{-σ}), but verify the recomputed
    // gradient anyway before reporting success.
    let (du, sigma_e) = entropy_gradient(model, &u, e0, 1.0)?;
    let stat = du.iter().zip(&sigma_u).map(|(g, s)| (g - s).abs()).fold(0.0, f64::max);
    if stat > 1e-10 {
        return Err(Error::numerical(format!("equilibrium stationarity residual {stat:.3e} exceeds tolerance"), None));
    }
    Ok((
        EquilibriumState {
            e_star: Profile::Constant(e0),
            u_star: u.iter().map(|&ui| Profile::Constant(ui)).collect(),
            c_tilde: u.iter().zip(&w).map(|(ui, wi)| ui / wi).collect(),
            sigma_u,
            sigma_e,
            e0,
            cons0: projected,
        },
        iters,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::{total_entropy, EnergyForm, StateField};
    use crate::reaction::RateForm;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn torus_frozen_cases() {
        let eq = solve_torus_equilibrium(0.0, 1.0, 2.0).unwrap();
        assert_eq!(eq.c_n(), 1.0);
        assert_eq!(eq.c_p(), 1.0);
        assert_abs_diff_eq!(eq.sigma_e, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(eq.u_star[0].constant().unwrap(), 1.0, epsilon = 1e-15);

        let eq = solve_torus_equilibrium(1.5, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(eq.c_n(), 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(eq.c_p(), 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(eq.sigma_e, 1.75, epsilon = 1e-14);

        let eq = solve_torus_equilibrium(1.5, 4.0, 0.0).unwrap();
        let want_cn = 0.5 * (0.75 + 4.5625f64.sqrt());
        assert_abs_diff_eq!(eq.c_n(), want_cn, epsilon = 1e-14);
        assert_abs_diff_eq!(eq.u_star[0].constant().unwrap(), 2.0 * want_cn, epsilon = 1e-13);
        assert_abs_diff_eq!(eq.c_n(), 1.443, epsilon = 1e-3);

        assert!(solve_torus_equilibrium(0.0, 0.0, 1.0).is_err());
        assert!(solve_torus_equilibrium(0.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn torus_detailed_balance_and_constraints() {
        for &(c0, e0) in &[(0.0, 1.0), (1.5, 1.0), (-3.0, 0.3), (1e8, 2.0), (-1e8, 2.0)] {
            let eq = solve_torus_equilibrium(c0, e0, 1.0).unwrap();
            let (n, p) = (eq.u_star[0].constant().unwrap(), eq.u_star[1].constant().unwrap());
            assert!(n > 0.0 && p > 0.0);
            assert!((n * p - e0).abs() <= 1e-12 * e0, "detailed balance off at c0={c0}");
            assert!((n - p - c0).abs() <= 1e-12 * c0.abs().max(1.0), "difference constraint off");
            assert!(eq.sigma_e > 0.0);
        }
    }

    fn gaussian_potential(grid: &Grid) -> Vec<f64> {
        (0..grid.cells())
            .map(|i| {
                let x = grid.axis_coord(0, i);
                0.5 * x * x + 0.25 * std::f64::consts::PI.ln()
            })
            .collect()
    }

    #[test]
    fn confined_gaussian_profile() {
        let grid = Grid::boxed(1, 384, 6.0).unwrap();
        let v = gaussian_potential(&grid);
        let eq = confined_equilibrium(&grid, &v, 0.0, 1.0).unwrap();
        let estar = eq.e_star.field(grid.cells()).unwrap();
        assert!((grid.integrate(&estar) - 1.0).abs() <= 1e-14);
        // Renormalization is a no-op here up to truncation: the analytic
        // profile exp(-x²)/√π already integrates to one.
        let mid = grid.cells() / 2;
        let x = grid.axis_coord(0, mid);
        let want = (-x * x).exp() / std::f64::consts::PI.sqrt();
        assert!((estar[mid] - want).abs() <= 2e-4 * want);
        // C0 = 0 collapses the three profiles.
        let nstar = eq.u_star[0].field(grid.cells()).unwrap();
        assert_eq!(nstar, estar);
    }

    #[test]
    fn confined_constraints_and_rejection() {
        let grid = Grid::boxed(1, 256, 6.0).unwrap();
        let v = gaussian_potential(&grid);
        let c0 = 0.8;
        let eq = confined_equilibrium(&grid, &v, c0, 0.5).unwrap();
        assert_abs_diff_eq!(eq.c_n() * eq.c_p(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(eq.c_n() - eq.c_p(), c0, epsilon = 1e-14);
        let n = eq.u_star[0].field(grid.cells()).unwrap();
        let p = eq.u_star[1].field(grid.cells()).unwrap();
        let diff: Vec<f64> = n.iter().zip(&p).map(|(a, b)| a - b).collect();
        assert_abs_diff_eq!(grid.integrate(&diff), c0, epsilon = 1e-13);
        assert_abs_diff_eq!(eq.sigma_e, (eq.c_n() + eq.c_p() + 0.5) / 2.0, epsilon = 1e-15);
        // Detailed balance against the local weights: n* p* = e* exp(-2V).
        let estar = eq.e_star.field(grid.cells()).unwrap();
        for i in (0..grid.cells()).step_by(17) {
            assert!((n[i] * p[i] - estar[i] * estar[i]).abs() <= 1e-14 * estar[i]);
        }

        // A flat potential has no decay; the boundary-mass guard fires.
        let flat = vec![0.0; grid.cells()];
        assert!(confined_equilibrium(&grid, &flat, 0.0, 1.0).is_err());
    }

    fn bipolar() -> ReactionNetwork {
        ReactionNetwork::bipolar(RateForm::Constant { k: 1.0 })
    }

    #[test]
    fn general_matches_torus_closed_form() {
        for &(c0, e0, c) in &[(0.0, 1.0, 2.0), (1.5, 1.0, 1.0), (-0.7, 2.3, 0.4)] {
            let closed = solve_torus_equilibrium(c0, e0, c).unwrap();
            let model = EntropyModel::sqrt_family(c, 2).unwrap();
            let eq = general_max_entropy(&model, &bipolar(), &[0.5 * c0, -0.5 * c0], e0).unwrap();
            for i in 0..2 {
                let got = eq.u_star[i].constant().unwrap();
                let want = closed.u_star[i].constant().unwrap();
                assert!((got - want).abs() <= 1e-10 * want, "u*[{i}]: {got} vs {want}");
                assert!((eq.c_tilde[i] - closed.c_tilde[i]).abs() <= 1e-10 * closed.c_tilde[i]);
            }
            assert!((eq.sigma_e - closed.sigma_e).abs() <= 1e-10 * closed.sigma_e);
            assert_eq!(eq.e_star.constant().unwrap(), e0);
        }
    }

    #[test]
    fn general_single_species_mass_constraint() {
        let model =
            EntropyModel::separable(1.0, EnergyForm::Power { sigma: 0.5 }, vec![0.5], vec![1.0]).unwrap();
        let net = ReactionNetwork::new(1, vec![]).unwrap();
        let (m0, e0) = (2.5, 1.7);
        let eq = general_max_entropy(&model, &net, &[m0], e0).unwrap();
        assert_abs_diff_eq!(eq.u_star[0].constant().unwrap(), m0, epsilon = 1e-12);
        assert_abs_diff_eq!(eq.c_tilde[0], m0 / e0.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn general_perturbed_start_converges_to_same_point() {
        let model = EntropyModel::sqrt_family(1.0, 2).unwrap();
        let cons0 = [0.75, -0.75];
        let base = general_max_entropy(&model, &bipolar(), &cons0, 1.0).unwrap();
        let start: Vec<f64> = base.sigma_u.iter().map(|s| s * 1.5).collect();
        // Coordinates of the scaled multiplier in the conserved basis.
        let qs = bipolar();
        let coords: Vec<f64> = qs
            .sperp_basis()
            .iter()
            .map(|q| q.iter().zip(&start).map(|(a, b)| a * b).sum())
            .collect();
        let (again, iters) = general_max_entropy_from(&model, &bipolar(), &cons0, 1.0, Some(&coords)).unwrap();
        assert!(iters <= 20, "restarted iteration took {iters} steps");
        for i in 0..2 {
            let a = base.u_star[i].constant().unwrap();
            let b = again.u_star[i].constant().unwrap();
            assert!((a - b).abs() <= 1e-11 * a);
        }
    }

    #[test]
    fn general_rejects_bad_constraints() {
        let model = EntropyModel::sqrt_family(1.0, 2).unwrap();
        // Component along the reactive direction (1, 1).
        assert!(general_max_entropy(&model, &bipolar(), &[1.0, 1.0], 1.0).is_err());
        assert!(general_max_entropy(&model, &bipolar(), &[0.5, -0.5], -1.0).is_err());
        // Unreachable mass for a single species.
        let m1 = EntropyModel::separable(1.0, EnergyForm::Power { sigma: 0.5 }, vec![0.5], vec![1.0]).unwrap();
        let net = ReactionNetwork::new(1, vec![]).unwrap();
        let err = general_max_entropy(&m1, &net, &[-1.0], 1.0).unwrap_err();
        assert!(format!("{err}").contains("converge") || format!("{err}").contains("stalled"));
    }

    #[test]
    fn equilibrium_is_entropy_maximal_over_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let grid = Grid::torus(1, 32).unwrap();
        let model = EntropyModel::sqrt_family(1.1, 2).unwrap();
        let net = bipolar();
        let eq = general_max_entropy(&model, &net, &[0.3, -0.3], 1.3).unwrap();
        let es = eq.e_star.constant().unwrap();
        let ustar = [eq.u_star[0].constant().unwrap(), eq.u_star[1].constant().unwrap()];
        let eq_state = StateField::constant(grid, &ustar, es).unwrap();
        let s_star = total_entropy(&eq_state, &model, None).unwrap();
        for _ in 0..100 {
            let amp = 0.2 * ustar[0].min(ustar[1]).min(es);
            let mut du: Vec<Vec<f64>> = (0..2)
                .map(|_| (0..grid.cells()).map(|_| rng.random_range(-amp..amp)).collect())
                .collect();
            let means = [grid.integrate(&du[0]), grid.integrate(&du[1])];
            let proj = net.project(&means);
            for i in 0..2 {
                for v in du[i].iter_mut() {
                    *v -= proj[i];
                }
            }
            let mut de: Vec<f64> = (0..grid.cells()).map(|_| rng.random_range(-amp..amp)).collect();
            let mean_e = grid.integrate(&de);
            for v in de.iter_mut() {
                *v -= mean_e;
            }
            let state = StateField::new(
                grid,
                (0..2).map(|i| du[i].iter().map(|d| ustar[i] + d).collect()).collect(),
                de.iter().map(|d| es + d).collect(),
            )
            .unwrap();
            let s = total_entropy(&state, &model, None).unwrap();
            assert!(s <= s_star + 1e-12, "entropy rose by {}", s - s_star);
        }
    }

    #[test]
    fn profile_accessors() {
        let p = Profile::Constant(2.0);
        assert_eq!(p.at(5), 2.0);
        assert_eq!(p.field(3).unwrap(), vec![2.0; 3]);
        let f = Profile::Field(vec![1.0, 2.0]);
        assert!(f.constant().is_err());
        assert!(f.field(3).is_err());
    }
}
