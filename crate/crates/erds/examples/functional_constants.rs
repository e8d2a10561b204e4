//! Estimates the Poincare, log-Sobolev, and H^1-to-L^1 embedding constants
//! that enter the certified decay rate, on the unit torus and on a no-flux
//! box, and compares the torus Poincare value with its continuum limit.

use erds::diagnostics::estimate_functional_constants;
use erds::grid::Grid;

fn main() -> erds::Result<()> {
    let continuum = 1.0 / (4.0 * std::f64::consts::PI * std::f64::consts::PI);
    println!("unit torus, d = 1 (continuum C_P = {continuum:.6e}):");
    println!("{:>8} {:>14} {:>14} {:>14}", "N", "C_P", "C_LS", "C_S");
    for n in [32, 64, 128, 256] {
        let grid = Grid::torus(1, n)?;
        let c = estimate_functional_constants(&grid, None)?;
        println!("{n:>8} {:>14.6e} {:>14.6e} {:>14.6e}", c.c_p, c.c_ls, c.c_s);
    }
    println!();

    println!("no-flux box [-6, 6] with a normalized Gaussian weight:");
    let grid = Grid::boxed(1, 192, 6.0)?;
    let mut weight: Vec<f64> = (0..grid.cells())
        .map(|i| {
            let x = grid.axis_coord(0, i);
            (-x * x).exp()
        })
        .collect();
    let z = grid.integrate(&weight);
    for w in weight.iter_mut() {
        *w /= z;
    }
    let c = estimate_functional_constants(&grid, Some(&weight))?;
    println!("  C_P  = {:.6e}", c.c_p);
    println!("  C_LS = {:.6e}", c.c_ls);
    if let Some(w) = c.c_ls_weighted {
        println!("  C_LS(weight) = {w:.6e}");
    }
    println!("  C_S  = {:.6e}", c.c_s);
    Ok(())
}
