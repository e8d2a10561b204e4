//! Runs the confined benchmark: a Gaussian stationary energy profile from
//! the harmonic well `V = x^2/2 + (ln pi)/4` on `[-6, 6]`, no-flux walls,
//! and densities relaxing toward `C sqrt(e e*)`. Prints the decay fit and
//! the weighted-equilibrium bound chain.

use erds::simulator::{run, Scenario};

fn main() -> erds::Result<()> {
    let sc = Scenario::default_confined()?;
    println!(
        "confined benchmark: N={}, kappa={}, t_end={}",
        sc.grid.cells(),
        sc.kappa,
        sc.t_end
    );

    let (_, report) = run(&sc)?;
    let first = &report.series[0];
    let last = report.series.last().unwrap();
    println!("{} records", report.series.len());
    println!();

    println!("entropy      H(0) = {:.6e}   H(t_end) = {:.6e}", first.entropy, last.entropy);
    println!("energy bracket at t_end: [{:.6e}, {:.6e}]", last.e_min, last.e_max);
    println!();

    println!("fitted decay rate     {:.6}  (r^2 = {:.12})", report.k_fit, report.r_squared);
    println!("certified rate 1/K    {:.6e}", 1.0 / report.k_hat);
    println!("decay-bound factor    {:.9}", report.decay_factor);
    println!("worst H / (K P)       {:.3e}", report.eep_margin);
    println!();

    let c = &report.constants;
    println!("grid constants (trial-based = {}):", c.trial_based);
    println!("  C_P  = {:.6e}", c.c_p);
    println!("  C_LS = {:.6e}", c.c_ls);
    if let Some(w) = c.c_ls_weighted {
        println!("  C_LS(e* weight) = {w:.6e}");
    }
    println!("  C_S  = {:.6e}", c.c_s);
    if !report.flags.is_empty() {
        println!("flags: {}", report.flags.join(", "));
    }
    Ok(())
}
