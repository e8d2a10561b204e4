//! IMEX time integration of the three evolution systems: reaction-diffusion
//! on the torus, drift-diffusion with a confining potential, and the general
//! drift system driven by an x-dependent entropy.
//!
//! Every stepper treats the stiff linear transport implicitly (backward
//! Euler through [`linalg`], an M-matrix solve with unit column sums) and
//! the reaction explicitly. Discrete conservation of the stoichiometric
//! invariants and of total energy therefore holds to rounding, and the
//! implicit part obeys a maximum principle. Positivity of the explicit part
//! is enforced by reject-and-halve: a step producing a negative density is
//! discarded and the run continues with half the step, up to 20 halvings.

mod linalg;

use crate::entropy::{EntropyModel, StateField};
use crate::equilibrium::{confined_equilibrium, general_max_entropy, solve_torus_equilibrium, EquilibriumState};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::reaction::{reaction_rhs, RateForm, ReactionNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    Torus,
    Confined,
    General,
}

/// A fully resolved simulation setup: grid, entropy model with the
/// equilibrium coefficients folded into its weights, reaction network,
/// initial data, and the reference equilibrium the relative entropy is
/// measured against.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub kind: SystemKind,
    pub grid: Grid,
    pub model: EntropyModel,
    pub network: ReactionNetwork,
    pub kappa: f64,
    pub equilibrium: EquilibriumState,
    pub initial: StateField,
    /// Confining potential per cell, shifted so that `exp(-2V)` is the
    /// normalized stationary energy profile.
    pub potential: Option<Vec<f64>>,
    /// Spatial entropy weight γ per cell for the general system; `None`
    /// means spatially homogeneous.
    pub gamma: Option<Vec<f64>>,
    /// Explicit time step; `None` selects `0.1·h/√κ` capped by the reaction
    /// stability bound. Either way the step is snapped to divide the cadence.
    pub dt: Option<f64>,
    pub t_end: f64,
    pub cadence: f64,
}

fn check_field(grid: &Grid, f: &[f64], what: &str, positive: bool) -> Result<()> {
    if f.len() != grid.cells() {
        return Err(Error::argument(format!("{what} has {} cells, grid has {}", f.len(), grid.cells())));
    }
    let lo = if positive { f.iter().all(|&x| x > 0.0) } else { f.iter().all(|&x| x >= 0.0) };
    if !lo || f.iter().any(|&x| !x.is_finite()) {
        return Err(Error::domain(format!("{what} must be {} and finite", if positive { "positive" } else { "nonnegative" })));
    }
    Ok(())
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        for (v, what) in [(self.kappa, "kappa"), (self.cadence, "cadence")] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::argument(format!("{what} must be positive and finite, got {v}")));
            }
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(Error::argument("t_end must be nonnegative and finite"));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) || !dt.is_finite() {
                return Err(Error::argument("dt must be positive and finite"));
            }
        }
        if self.initial.grid != self.grid {
            return Err(Error::argument("initial state lives on a different grid"));
        }
        let species = self.initial.species_count();
        if self.model.species_count() != species
            || self.network.species_count() != species
            || self.equilibrium.u_star.len() != species
        {
            return Err(Error::argument("model, network, equilibrium, and state disagree on the species count"));
        }
        for (s, u) in self.initial.u.iter().enumerate() {
            check_field(&self.grid, u, &format!("density field {s}"), false)?;
        }
        check_field(&self.grid, &self.initial.e, "energy field", true)?;
        match self.kind {
            SystemKind::Torus => {
                if !self.grid.is_torus() {
                    return Err(Error::argument("torus scenario needs a torus grid"));
                }
            }
            SystemKind::Confined => {
                if self.grid.is_torus() {
                    return Err(Error::argument("confined scenario needs a box grid"));
                }
                let v = self.potential.as_deref().ok_or_else(|| Error::argument("confined scenario needs a potential"))?;
                if v.len() != self.grid.cells() || v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::argument("potential must be finite with one value per cell"));
                }
            }
            SystemKind::General => {
                if let Some(g) = self.gamma.as_deref() {
                    check_field(&self.grid, g, "entropy weight field", true)?;
                }
            }
        }
        Ok(())
    }

    /// The spatial entropy weight seen by the model at each cell.
    pub fn gamma_field(&self) -> Result<Option<Vec<f64>>> {
        match self.kind {
            SystemKind::Torus => Ok(None),
            SystemKind::Confined => Ok(Some(self.equilibrium.e_star.field(self.grid.cells())?)),
            SystemKind::General => Ok(self.gamma.clone()),
        }
    }

    /// Time step and the number of steps per output cadence.
    pub fn resolved_dt(&self) -> Result<(f64, u64)> {
        let base = match self.dt {
            Some(dt) => dt,
            None => {
                let mut k_bar = 0.0f64;
                for reac in self.network.reactions() {
                    match reac.rate.coefficient_upper() {
                        Some(k) => k_bar = k_bar.max(k),
                        None => {
                            return Err(Error::argument("custom rate laws carry no a priori bound; set dt explicitly"))
                        }
                    }
                }
                let h_min = self.grid.h[..self.grid.dim].iter().cloned().fold(f64::MAX, f64::min);
                let mut dt = 0.1 * h_min / self.kappa.sqrt();
                let sup: f64 = self.initial.u.iter().map(|u| u.iter().cloned().fold(0.0, f64::max)).sum();
                if k_bar * sup > 0.0 {
                    dt = dt.min(0.5 / (k_bar * sup));
                }
                dt
            }
        };
        let m = ((self.cadence / base - 1e-9).ceil() as u64).max(1);
        Ok((self.cadence / m as f64, m))
    }
}

/// Builds a torus scenario around the equilibrium matching the discrete
/// conserved quantities of `initial`.
#[allow(clippy::too_many_arguments)]
pub fn torus_scenario(
    grid: Grid,
    kappa: f64,
    rate: RateForm,
    c: f64,
    initial: StateField,
    dt: Option<f64>,
    t_end: f64,
    cadence: f64,
) -> Result<Scenario> {
    if initial.species_count() != 2 {
        return Err(Error::argument("the torus system is bipolar; expected two density fields"));
    }
    let c0 = grid.integrate(&initial.u[0]) - grid.integrate(&initial.u[1]);
    let e0 = grid.integrate(&initial.e);
    let eq = solve_torus_equilibrium(c0, e0, c)?;
    let model = EntropyModel::separable(
        c,
        crate::entropy::EnergyForm::Power { sigma: 0.5 },
        vec![0.5, 0.5],
        vec![eq.c_n(), eq.c_p()],
    )?;
    let sc = Scenario {
        kind: SystemKind::Torus,
        grid,
        model,
        network: ReactionNetwork::bipolar(rate),
        kappa,
        equilibrium: eq,
        initial,
        potential: None,
        gamma: None,
        dt,
        t_end,
        cadence,
    };
    sc.validate()?;
    Ok(sc)
}

/// Builds a confined scenario on a box grid. `v` is the raw confining
/// potential per cell; its additive normalization is adjusted so that
/// `exp(-2V)` integrates to one, which is the stationary energy profile.
#[allow(clippy::too_many_arguments)]
pub fn confined_scenario(
    grid: Grid,
    kappa: f64,
    rate: RateForm,
    c: f64,
    v: Vec<f64>,
    initial: StateField,
    dt: Option<f64>,
    t_end: f64,
    cadence: f64,
) -> Result<Scenario> {
    if initial.species_count() != 2 {
        return Err(Error::argument("the confined system is bipolar; expected two density fields"));
    }
    let c0 = grid.integrate(&initial.u[0]) - grid.integrate(&initial.u[1]);
    let eq = confined_equilibrium(&grid, &v, c0, c)?;
    let e_star = eq.e_star.field(grid.cells())?;
    let potential: Vec<f64> = e_star.iter().map(|&es| -0.5 * es.ln()).collect();
    let model = EntropyModel::separable(
        c,
        crate::entropy::EnergyForm::Power { sigma: 0.5 },
        vec![0.5, 0.5],
        vec![eq.c_n(), eq.c_p()],
    )?;
    let sc = Scenario {
        kind: SystemKind::Confined,
        grid,
        model,
        network: ReactionNetwork::bipolar(rate),
        kappa,
        equilibrium: eq,
        initial,
        potential: Some(potential),
        gamma: None,
        dt,
        t_end,
        cadence,
    };
    sc.validate()?;
    Ok(sc)
}

/// Builds a general scenario; the equilibrium is the constrained entropy
/// maximizer for the conserved quantities of `initial`.
#[allow(clippy::too_many_arguments)]
pub fn general_scenario(
    grid: Grid,
    kappa: f64,
    model: EntropyModel,
    network: ReactionNetwork,
    gamma: Option<Vec<f64>>,
    initial: StateField,
    dt: Option<f64>,
    t_end: f64,
    cadence: f64,
) -> Result<Scenario> {
    let measure = grid.measure();
    let means: Vec<f64> = initial.u.iter().map(|u| grid.integrate(u) / measure).collect();
    let cons0 = network.project(&means);
    let e0 = grid.integrate(&initial.e) / measure;
    let eq = general_max_entropy(&model, &network, &cons0, e0)?;
    let sc = Scenario {
        kind: SystemKind::General,
        grid,
        model,
        network,
        kappa,
        equilibrium: eq,
        initial,
        potential: None,
        gamma,
        dt,
        t_end,
        cadence,
    };
    sc.validate()?;
    Ok(sc)
}

impl Scenario {
    /// Bipolar torus benchmark: single-mode perturbations of the flat
    /// equilibrium, slow enough that the relative entropy stays above the
    /// rounding floor over the whole run.
    pub fn default_torus() -> Result<Scenario> {
        Scenario::default_torus_sized(256, None, 12.0, 0.05)
    }

    /// The torus benchmark at explicit resolution, step, horizon, and
    /// cadence, for refinement studies against [`Scenario::default_torus`].
    pub fn default_torus_sized(
        cells: usize,
        dt: Option<f64>,
        t_end: f64,
        cadence: f64,
    ) -> Result<Scenario> {
        let grid = Grid::torus(1, cells)?;
        let tau = 2.0 * std::f64::consts::PI;
        let field = |a: f64, phase: f64| -> Vec<f64> {
            (0..grid.cells()).map(|i| 1.0 + a * (tau * grid.axis_coord(0, i) + phase).cos()).collect()
        };
        let initial = StateField::new(
            grid,
            vec![field(0.2, 0.0), field(0.2, -0.5 * std::f64::consts::PI)],
            field(0.1, 0.0),
        )?;
        // k = 2 keeps every reaction channel faster than the slowest
        // diffusion mode, so ln H stays affine over the whole run.
        torus_scenario(grid, 0.04, RateForm::Constant { k: 2.0 }, 2.0, initial, dt, t_end, cadence)
    }

    /// Bipolar confined benchmark: Gaussian stationary profile from
    /// `V = x²/2 + (ln π)/4` on `[-6, 6]`, perturbed along an odd mode.
    pub fn default_confined() -> Result<Scenario> {
        let grid = Grid::boxed(1, 384, 6.0)?;
        let v: Vec<f64> = (0..grid.cells())
            .map(|i| {
                let x = grid.axis_coord(0, i);
                0.5 * x * x + 0.25 * std::f64::consts::PI.ln()
            })
            .collect();
        // Normalize the discrete reference profile to unit energy before
        // perturbing it, so the initial total energy matches the equilibrium
        // (the odd perturbations integrate to zero) and the relative entropy
        // can decay all the way to rounding.
        let mut e_star: Vec<f64> = v.iter().map(|&vi| (-2.0 * vi).exp()).collect();
        let z = grid.integrate(&e_star);
        for x in e_star.iter_mut() {
            *x /= z;
        }
        let bump = |a: f64| -> Vec<f64> {
            (0..grid.cells())
                .map(|i| {
                    let x = grid.axis_coord(0, i);
                    1.0 + a * (std::f64::consts::PI * x / 6.0).sin()
                })
                .collect()
        };
        let mul = |f: &[f64], g: &[f64]| -> Vec<f64> { f.iter().zip(g).map(|(a, b)| a * b).collect() };
        let initial = StateField::new(
            grid,
            vec![mul(&e_star, &bump(0.2)), mul(&e_star, &bump(-0.2))],
            mul(&e_star, &bump(0.1)),
        )?;
        confined_scenario(grid, 1.0, RateForm::Constant { k: 2.0 }, 2.0, v, initial, None, 8.0, 0.05)
    }

    /// General-system benchmark with homogeneous entropy weights; the drift
    /// fluxes vanish and the dynamics coincide with the torus system.
    pub fn default_general() -> Result<Scenario> {
        let torus = Scenario::default_torus()?;
        let model = EntropyModel::sqrt_family(2.0, 2)?;
        general_scenario(
            torus.grid,
            torus.kappa,
            model,
            ReactionNetwork::bipolar(RateForm::Constant { k: 2.0 }),
            None,
            torus.initial,
            None,
            2.0,
            0.05,
        )
    }
}

/// Explicit reaction term per species and cell, evaluated against the
/// model's local reference densities.
fn reaction_terms(sc: &Scenario, state: &StateField, gamma: Option<&[f64]>) -> Result<Vec<Vec<f64>>> {
    let cells = sc.grid.cells();
    let species = state.species_count();
    let n_reac = sc.network.reactions().len();
    let mut out = vec![vec![0.0; cells]; species];
    let mut u = vec![0.0; species];
    let mut w = vec![0.0; species];
    let mut ks = vec![0.0; n_reac];
    for cell in 0..cells {
        let g = gamma.map_or(1.0, |g| g[cell]);
        let e = state.e[cell];
        for s in 0..species {
            u[s] = state.u[s][cell];
            w[s] = sc.model.weight(s, e, g);
        }
        for (r, reac) in sc.network.reactions().iter().enumerate() {
            ks[r] = reac.rate.k_star(&u, e);
        }
        let rhs = reaction_rhs(&sc.network, &u, &w, &ks)?;
        for s in 0..species {
            out[s][cell] = rhs[s];
        }
    }
    Ok(out)
}

/// Wraps freshly computed fields into a state, converting negativity into a
/// step rejection (the run loop reacts by halving dt).
fn finalize_step(grid: Grid, u: Vec<Vec<f64>>, e: Vec<f64>) -> Result<StateField> {
    for field in u.iter().chain(std::iter::once(&e)) {
        if field.iter().any(|x| !x.is_finite()) {
            return Err(Error::numerical("non-finite field value after step", None));
        }
    }
    if u.iter().any(|f| f.iter().any(|&x| x < 0.0)) {
        return Err(Error::StepRejected { what: "negative density".into(), t: f64::NAN });
    }
    if e.iter().any(|&x| x <= 0.0) {
        return Err(Error::StepRejected { what: "nonpositive energy".into(), t: f64::NAN });
    }
    Ok(StateField { grid, u, e })
}

/// One IMEX step of the torus system: explicit reaction, implicit periodic
/// diffusion for the densities and the energy.
pub fn step_torus(state: &StateField, sc: &Scenario, dt: f64) -> Result<StateField> {
    let r = reaction_terms(sc, state, None)?;
    let kdt = sc.kappa * dt;
    let mut u_new = Vec::with_capacity(state.species_count());
    for (s, field) in state.u.iter().enumerate() {
        let mut rhs: Vec<f64> = field.iter().zip(&r[s]).map(|(ui, ri)| ui + dt * ri).collect();
        linalg::implicit_step(&sc.grid, kdt, None, &mut rhs);
        u_new.push(rhs);
    }
    let mut e_new = state.e.clone();
    linalg::implicit_step(&sc.grid, kdt, None, &mut e_new);
    finalize_step(sc.grid, u_new, e_new)
}

/// One IMEX step of the confined system: explicit reaction against the
/// weighted reference densities, implicit exponential-fitted drift-diffusion
/// with potential `2V` for densities and energy alike.
pub fn step_confined(state: &StateField, sc: &Scenario, dt: f64) -> Result<StateField> {
    let v = sc
        .potential
        .as_deref()
        .ok_or_else(|| Error::argument("confined stepper needs the scenario potential"))?;
    let e_star = sc.equilibrium.e_star.field(sc.grid.cells())?;
    let r = reaction_terms(sc, state, Some(&e_star))?;
    let w: Vec<f64> = v.iter().map(|&vi| 2.0 * vi).collect();
    let kdt = sc.kappa * dt;
    let mut u_new = Vec::with_capacity(state.species_count());
    for (s, field) in state.u.iter().enumerate() {
        let mut rhs: Vec<f64> = field.iter().zip(&r[s]).map(|(ui, ri)| ui + dt * ri).collect();
        linalg::implicit_step(&sc.grid, kdt, Some(&w), &mut rhs);
        u_new.push(rhs);
    }
    let mut e_new = state.e.clone();
    linalg::implicit_step(&sc.grid, kdt, Some(&w), &mut e_new);
    finalize_step(sc.grid, u_new, e_new)
}

/// Face-centered correction fluxes of the general system beyond the
/// per-species drift `u_i ∇V_i`: `G_i = u_i b_i T / M` for the densities and
/// `e T / M` for the energy, with `T = Σ_j b_j u_j ∇V_j - e ∇_(x) s'`.
/// Returns their conservative divergences and the face-mobility range.
fn correction_divergence(
    sc: &Scenario,
    state: &StateField,
    gamma: &[f64],
) -> Result<(Vec<Vec<f64>>, Vec<f64>, f64, f64)> {
    let grid = &sc.grid;
    let species = state.species_count();
    let b = sc.model.weight_exponents().to_vec();
    let mut div_u = vec![vec![0.0; grid.cells()]; species];
    let mut div_e = vec![0.0; grid.cells()];
    let mut m_min = f64::MAX;
    let mut m_max = f64::MIN;
    let mut failure: Option<Error> = None;
    let mut u_f = vec![0.0; species];
    grid.for_each_face(|i, j, axis| {
        if failure.is_some() {
            return;
        }
        let h = grid.h[axis];
        let e_f = 0.5 * (state.e[i] + state.e[j]);
        for (s, uf) in u_f.iter_mut().enumerate() {
            *uf = 0.5 * (state.u[s][i] + state.u[s][j]);
        }
        let g_f = 0.5 * (gamma[i] + gamma[j]);
        let m = match crate::entropy::mobility_scalar(&sc.model, &u_f, e_f, g_f) {
            Ok(m) => m,
            Err(_) => {
                failure = Some(Error::numerical(
                    "mobility M(u, e) is singular on a face: the entropy has no energy curvature at this state",
                    None,
                ));
                return;
            }
        };
        m_min = m_min.min(m);
        m_max = m_max.max(m);
        let dsp = (sc.model.s_prime(e_f, gamma[j]) - sc.model.s_prime(e_f, gamma[i])) / h;
        let mut t = -e_f * dsp;
        for s in 0..species {
            let dv = -(sc.model.log_weight(s, 1.0, gamma[j]) - sc.model.log_weight(s, 1.0, gamma[i])) / h;
            t += b[s] * u_f[s] * dv;
        }
        for s in 0..species {
            let flux = u_f[s] * b[s] * t / m;
            div_u[s][i] += flux / h;
            div_u[s][j] -= flux / h;
        }
        let flux_e = e_f * t / m;
        div_e[i] += flux_e / h;
        div_e[j] -= flux_e / h;
    });
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((div_u, div_e, m_min, m_max))
}

/// One IMEX step of the general drift system: explicit correction fluxes and
/// reaction, implicit exponential-fitted transport with the per-species
/// spatial potentials carried by the entropy weights.
pub fn step_general(state: &StateField, sc: &Scenario, dt: f64) -> Result<StateField> {
    let species = state.species_count();
    let kdt = sc.kappa * dt;
    let gamma = sc.gamma.as_deref();

    let r = reaction_terms(sc, state, gamma)?;
    let (div_u, div_e) = match gamma {
        Some(g) => {
            let (du, de, m_min, m_max) = correction_divergence(sc, state, g)?;
            if m_min <= 1e-12 * m_max.max(1.0) {
                return Err(Error::numerical(
                    format!(
                        "mobility M(u, e) = {m_min:.3e} is nearly degenerate on a face; \
                         the explicit correction flux is stiff there, reduce dt"
                    ),
                    None,
                ));
            }
            (Some(du), Some(de))
        }
        None => (None, None),
    };

    let mut u_new = Vec::with_capacity(species);
    for s in 0..species {
        let mut rhs: Vec<f64> = (0..sc.grid.cells())
            .map(|i| {
                let drift = div_u.as_ref().map_or(0.0, |d| d[s][i]);
                state.u[s][i] + dt * (sc.kappa * drift + r[s][i])
            })
            .collect();
        let pot = gamma.map(|g| {
            let base = sc.model.log_weight(s, 1.0, 1.0);
            g.iter().map(|&gi| -(sc.model.log_weight(s, 1.0, gi) - base)).collect::<Vec<f64>>()
        });
        linalg::implicit_step(&sc.grid, kdt, pot.as_deref(), &mut rhs);
        u_new.push(rhs);
    }
    let mut e_new: Vec<f64> = (0..sc.grid.cells())
        .map(|i| {
            let drift = div_e.as_ref().map_or(0.0, |d| d[i]);
            state.e[i] + kdt * drift
        })
        .collect();
    linalg::implicit_step(&sc.grid, kdt, None, &mut e_new);
    finalize_step(sc.grid, u_new, e_new)
}

/// Recorded states of a completed run, one snapshot per cadence tick.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateField>,
    /// Step actually used at the end of the run (after any halvings).
    pub dt: f64,
    pub steps_per_cadence: u64,
    pub halvings: u32,
}

/// Advances the scenario to `t_end`, recording a snapshot every `cadence`.
/// Rejected steps halve dt permanently, at most 20 times.
pub fn integrate(sc: &Scenario) -> Result<Trajectory> {
    let (traj, failure) = integrate_partial(sc)?;
    match failure {
        Some(err) => Err(err),
        None => Ok(traj),
    }
}

/// Like [`integrate`], but a mid-run failure returns the snapshots recorded
/// up to that point together with the error, so callers can report the state
/// the run died in. Setup problems are still hard errors.
pub fn integrate_partial(sc: &Scenario) -> Result<(Trajectory, Option<Error>)> {
    sc.validate()?;
    let (mut dt, mut steps_per_cadence) = sc.resolved_dt()?;
    let step: fn(&StateField, &Scenario, f64) -> Result<StateField> = match sc.kind {
        SystemKind::Torus => step_torus,
        SystemKind::Confined => step_confined,
        SystemKind::General => step_general,
    };

    let mut state = sc.initial.clone();
    let mut times = vec![0.0];
    let mut states = vec![state.clone()];
    let mut halvings: u32 = 0;

    let segments = ((sc.t_end / sc.cadence - 1e-9).ceil() as u64).max(if sc.t_end > 0.0 { 1 } else { 0 });
    let mut failure: Option<Error> = None;
    'run: for seg in 1..=segments {
        let seg_start = (seg - 1) as f64 * sc.cadence;
        let seg_end = (seg as f64 * sc.cadence).min(sc.t_end);
        let seg_len = seg_end - seg_start;
        let full = (seg_len - sc.cadence).abs() <= 1e-12 * sc.cadence;
        let mut steps_left = if full {
            steps_per_cadence
        } else {
            ((steps_per_cadence as f64 * seg_len / sc.cadence - 1e-9).ceil() as u64).max(1)
        };
        let mut sub_dt = seg_len / steps_left as f64;
        while steps_left > 0 {
            let t_now = seg_end - steps_left as f64 * sub_dt;
            match step(&state, sc, sub_dt) {
                Ok(next) => {
                    state = next;
                    steps_left -= 1;
                }
                Err(Error::StepRejected { what, .. }) => {
                    halvings += 1;
                    if halvings > 20 {
                        failure = Some(Error::numerical(
                            format!("step rejected after 20 dt halvings ({what})"),
                            Some(t_now),
                        ));
                        break 'run;
                    }
                    sub_dt *= 0.5;
                    steps_left *= 2;
                    if full {
                        dt *= 0.5;
                        steps_per_cadence *= 2;
                    }
                }
                Err(Error::Numerical { what, t: None }) => {
                    failure = Some(Error::numerical(what, Some(t_now)));
                    break 'run;
                }
                Err(other) => {
                    failure = Some(other);
                    break 'run;
                }
            }
        }
        times.push(seg_end);
        states.push(state.clone());
    }
    Ok((Trajectory { times, states, dt, steps_per_cadence, halvings }, failure))
}

/// Advances the scenario to its horizon and runs the full diagnostic pass
/// over the recorded snapshots.
pub fn run(sc: &Scenario) -> Result<(Trajectory, crate::diagnostics::DiagnosticsReport)> {
    let traj = integrate(sc)?;
    let report = crate::diagnostics::analyze(&traj, sc, None)?;
    Ok((traj, report))
}
