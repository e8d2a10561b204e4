//! Solves for maximum-entropy equilibria two ways: the closed form for the
//! flat two-species system, and the Newton solver on the conserved subspace
//! for a general network where no closed form exists.

use erds::entropy::EntropyModel;
use erds::equilibrium::{general_max_entropy_counted, solve_torus_equilibrium};
use erds::reaction::{RateForm, Reaction, ReactionNetwork};

fn main() -> erds::Result<()> {
    // Closed form: charge C0 and energy E0 pin the state completely.
    let eq = solve_torus_equilibrium(1.5, 1.0, 1.0)?;
    println!("flat bipolar equilibrium for C0 = 1.5, E0 = 1, c = 1:");
    println!("  C_n = {}, C_p = {}, Sigma_e = {}", eq.c_n(), eq.c_p(), eq.sigma_e);
    println!("  n* = {:.6}, p* = {:.6}, e* = E0 = {}", eq.c_n() * eq.e0.sqrt(), eq.c_p() * eq.e0.sqrt(), eq.e0);
    println!();

    // The Newton solver reproduces it from the constraint data alone.
    let model = EntropyModel::sqrt_family(1.0, 2)?;
    let bipolar = ReactionNetwork::bipolar(RateForm::Constant { k: 1.0 });
    let (found, iters) = general_max_entropy_counted(&model, &bipolar, &[0.75, -0.75], 1.0)?;
    println!("Newton on the conserved subspace ({iters} iterations):");
    println!("  C_n = {:.12}, C_p = {:.12}", found.c_tilde[0], found.c_tilde[1]);
    println!();

    // A three-species chain A + B <-> C, B <-> C with no closed form. The
    // conserved directions are picked out numerically and the multipliers
    // solved on that subspace.
    let network = ReactionNetwork::new(
        3,
        vec![
            Reaction::new(vec![1, 1, 0], vec![0, 0, 1], RateForm::Constant { k: 1.0 })?,
            Reaction::new(vec![0, 1, 0], vec![0, 0, 1], RateForm::Constant { k: 1.0 })?,
        ],
    )?;
    let model3 = EntropyModel::sqrt_family(2.0, 3)?;
    // Project an arbitrary composition onto the conserved subspace to get
    // admissible constraint data.
    let cons = network.project(&[1.2, 0.9, 0.4]);
    let (eq3, iters3) = general_max_entropy_counted(&model3, &network, &cons, 1.3)?;
    println!("three-species chain ({iters3} iterations):");
    println!("  conserved data  {cons:?}");
    println!("  C coefficients  {:?}", eq3.c_tilde);
    let u: Vec<f64> = eq3.c_tilde.iter().map(|c| c * eq3.e0.sqrt()).collect();
    println!("  densities       {u:?}");
    println!("  constraint check {:?}", network.project(&u));
    Ok(())
}
