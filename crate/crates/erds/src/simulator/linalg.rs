//! Tridiagonal solvers and the implicit drift-diffusion sweep.
//!
//! The backward-Euler factor `(I - a·A)` of the exponential-fitted
//! drift-diffusion operator is tridiagonal along each grid axis (cyclic on
//! the torus). Off-diagonals are `-a·B(±δ)` with the Bernoulli function
//! `B(z) = z/(e^z - 1)` and `δ` the face increment of the potential, so the
//! matrix is an M-matrix with unit column sums: the solve preserves mass
//! exactly and maps `[min, max]` of the right side into itself. `δ = 0`
//! recovers the plain Laplacian.

use crate::grid::Grid;

/// `z / (e^z - 1)`, positive for all `z`, `B(0) = 1`.
pub(crate) fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-5 {
        // 1 - z/2 + z²/12 - z⁴/720 + ..., truncation below 1e-21 here.
        1.0 - z * (0.5 - z / 12.0)
    } else {
        z / z.exp_m1()
    }
}

/// Thomas algorithm for `sub[i]·x[i-1] + diag[i]·x[i] + sup[i]·x[i+1] = rhs[i]`.
/// `sub[0]` and `sup[n-1]` are ignored. Unpivoted; callers supply diagonally
/// dominant systems.
pub(crate) fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64], scratch: &mut Vec<f64>) {
    let n = diag.len();
    scratch.clear();
    scratch.resize(n, 0.0);
    let mut pivot = diag[0];
    rhs[0] /= pivot;
    for i in 1..n {
        scratch[i] = sup[i - 1] / pivot;
        pivot = diag[i] - sub[i] * scratch[i];
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i + 1] * rhs[i + 1];
    }
}

/// Cyclic tridiagonal solve via the Sherman-Morrison rank-one update.
/// `corner_top` sits at (0, n-1), `corner_bottom` at (n-1, 0).
#[allow(clippy::too_many_arguments)]
pub(crate) fn solve_cyclic(
    sub: &[f64],
    diag: &[f64],
    sup: &[f64],
    corner_top: f64,
    corner_bottom: f64,
    rhs: &mut [f64],
    z: &mut Vec<f64>,
    scratch: &mut Vec<f64>,
) {
    let n = diag.len();
    let gamma = -diag[0];
    let mut d = vec![0.0; n];
    d.copy_from_slice(diag);
    d[0] -= gamma;
    d[n - 1] -= corner_top * corner_bottom / gamma;
    solve_tridiagonal(sub, &d, sup, rhs, scratch);
    z.clear();
    z.resize(n, 0.0);
    z[0] = gamma;
    z[n - 1] = corner_bottom;
    solve_tridiagonal(sub, &d, sup, z, scratch);
    // v = (1, 0, ..., corner_top/gamma)
    let vy = rhs[0] + corner_top / gamma * rhs[n - 1];
    let vz = z[0] + corner_top / gamma * z[n - 1];
    let factor = vy / (1.0 + vz);
    for i in 0..n {
        rhs[i] -= factor * z[i];
    }
}

/// One implicit axis factor: solves `(I - a·A_axis) x = field` line by line
/// and writes `x` back into `field`. `a = dt·κ/h²` for the given axis;
/// `w` is the cell potential whose face increments feed the exponential
/// fitting (`None` for plain diffusion).
fn implicit_axis(grid: &Grid, axis: usize, a: f64, w: Option<&[f64]>, field: &mut [f64]) {
    let len = grid.n[axis];
    let lines = grid.cells() / len;
    let stride = if axis == 0 { 1 } else { grid.n[0] };
    let wrap = grid.is_torus();

    let mut sub = vec![0.0; len];
    let mut diag = vec![0.0; len];
    let mut sup = vec![0.0; len];
    let mut line = vec![0.0; len];
    let mut bp = vec![0.0; len]; // B(δ) at the face right of cell i
    let mut bm = vec![0.0; len]; // B(-δ) at the same face
    let mut z = Vec::new();
    let mut scratch = Vec::new();

    for l in 0..lines {
        let base = if axis == 0 { l * grid.n[0] } else { l };
        let cell = |i: usize| base + i * stride;
        for i in 0..len {
            line[i] = field[cell(i)];
        }
        let faces = if wrap { len } else { len - 1 };
        for f in 0..faces {
            let delta = match w {
                Some(w) => w[cell((f + 1) % len)] - w[cell(f)],
                None => 0.0,
            };
            bp[f] = bernoulli(delta);
            bm[f] = bernoulli(-delta);
        }
        for i in 0..len {
            let right = if wrap || i + 1 < len { Some(i) } else { None };
            let left = if i > 0 {
                Some(i - 1)
            } else if wrap {
                Some(len - 1)
            } else {
                None
            };
            let mut d = 1.0;
            if let Some(f) = right {
                d += a * bp[f];
                sup[i] = -a * bm[f];
            }
            if let Some(f) = left {
                d += a * bm[f];
                sub[i] = -a * bp[f];
            }
            diag[i] = d;
        }
        if wrap {
            let corner_top = -a * bp[len - 1]; // row 0, column len-1
            let corner_bottom = -a * bm[len - 1]; // row len-1, column 0
            // The wrap face couples through sub[0]/sup[len-1] slots too;
            // clear them so only the corners carry it.
            sub[0] = 0.0;
            sup[len - 1] = 0.0;
            solve_cyclic(&sub, &diag, &sup, corner_top, corner_bottom, &mut line, &mut z, &mut scratch);
        } else {
            solve_tridiagonal(&sub, &diag, &sup, &mut line, &mut scratch);
        }
        for i in 0..len {
            field[cell(i)] = line[i];
        }
    }
}

/// Backward-Euler drift-diffusion update: factorized per axis in two
/// dimensions (each factor conserves mass and satisfies the maximum
/// principle, hence so does the product).
pub(crate) fn implicit_step(grid: &Grid, kappa_dt: f64, w: Option<&[f64]>, field: &mut [f64]) {
    for axis in 0..grid.dim {
        let a = kappa_dt / (grid.h[axis] * grid.h[axis]);
        implicit_axis(grid, axis, a, w, field);
    }
}
