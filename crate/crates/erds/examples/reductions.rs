//! Consistency between the three system families: the general stepper with
//! trivial weights reproduces the torus stepper exactly, and the confined
//! production formulas with a flat potential converge to the torus formulas
//! as the grid refines.

use erds::diagnostics::{entropy_production_confined, entropy_production_torus};
use erds::entropy::StateField;
use erds::equilibrium::{EquilibriumState, Profile};
use erds::grid::Grid;
use erds::reaction::RateForm;
use erds::simulator::{step_general, step_torus, torus_scenario, Scenario, SystemKind};

fn sup_diff(a: &StateField, b: &StateField) -> f64 {
    let mut worst = 0.0f64;
    for (ua, ub) in a.u.iter().zip(&b.u) {
        for (x, y) in ua.iter().zip(ub) {
            worst = worst.max((x - y).abs());
        }
    }
    for (x, y) in a.e.iter().zip(&b.e) {
        worst = worst.max((x - y).abs());
    }
    worst
}

fn main() -> erds::Result<()> {
    let sc = Scenario::default_torus_sized(128, None, 1.0, 0.05)?;
    let general = Scenario { kind: SystemKind::General, ..sc.clone() };
    let mut a = sc.initial.clone();
    let mut b = sc.initial.clone();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        a = step_torus(&a, &sc, 1e-3)?;
        b = step_general(&b, &general, 1e-3)?;
        worst = worst.max(sup_diff(&a, &b));
    }
    println!("general stepper vs torus stepper, 20 steps: sup difference {worst:.3e}");
    println!();

    println!("flat-potential production vs torus production on the unit box:");
    println!("{:>8} {:>14} {:>14} {:>14}", "N", "torus", "box", "rel diff");
    let tau = 2.0 * std::f64::consts::PI;
    for n in [512usize, 2048, 8192] {
        let even = |grid: &Grid, amp: f64| -> Vec<f64> {
            (0..grid.cells()).map(|i| 1.0 + amp * (tau * grid.axis_coord(0, i)).cos()).collect()
        };
        let make = |grid: Grid| -> erds::Result<StateField> {
            StateField::new(grid, vec![even(&grid, 0.2), even(&grid, -0.1)], even(&grid, 0.1))
        };
        let torus_grid = Grid::torus(1, n)?;
        let box_grid = Grid::boxed(1, n, 0.5)?;
        let torus_state = make(torus_grid)?;
        let box_state = make(box_grid)?;
        let sc_torus = torus_scenario(
            torus_grid,
            0.04,
            RateForm::Constant { k: 2.0 },
            2.0,
            torus_state.clone(),
            None,
            1.0,
            0.05,
        )?;
        let flat_eq = EquilibriumState {
            e_star: Profile::Field(vec![1.0; n]),
            ..sc_torus.equilibrium.clone()
        };
        let sc_box = Scenario {
            kind: SystemKind::Confined,
            grid: box_grid,
            equilibrium: flat_eq.clone(),
            initial: box_state.clone(),
            potential: Some(vec![0.0; n]),
            ..sc_torus.clone()
        };
        let p_torus = entropy_production_torus(&torus_state, &sc_torus, &sc_torus.equilibrium)?.total;
        let p_box = entropy_production_confined(&box_state, &sc_box, &flat_eq)?.total;
        println!(
            "{n:>8} {p_torus:>14.8e} {p_box:>14.8e} {:>14.3e}",
            (p_torus - p_box).abs() / p_torus
        );
    }
    Ok(())
}
