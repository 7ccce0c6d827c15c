//! Width/depth pairs meeting a complexity right-hand side, with the realized
//! network sizes, plus both right-hand sides for the desk problem.
//!
//! cargo run --release --example bounds_frontier -- [rhs]

use relu_mpc::bounds::{feasible_pairs, realized_architecture, theorem1_rhs, theorem2_rhs, BoundGeometry};
use relu_mpc::mpc::{estimate_constants, MpcProblem};

fn main() -> relu_mpc::Result<()> {
    let rhs: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100.0);
    println!("n_w' n_d'      n_w  n_d");
    for (w, d) in feasible_pairs(rhs, 12)? {
        let (n_w, n_d) = realized_architecture(w, d, 2, 1)?;
        println!("{w:4} {d:4} {n_w:8} {n_d:4}");
    }

    let prob = MpcProblem::double_integrator()?;
    let c = estimate_constants(&prob, 10_000, 0, 1.1)?;
    let g = BoundGeometry {
        n_x: 2,
        n_u: 1,
        u_radius: c.u_radius,
        u_inradius: c.u_inradius,
        xinv_radius: c.xinv_radius,
        l_u: c.l_u,
    };
    let uniform = theorem1_rhs(c.delta_bar, c.delta_bar, &g)?;
    println!("uniform bound at delta_bar: 10^{:.3}", uniform.log10);
    for d_target in [0.5, 0.1, 0.01] {
        let t = theorem2_rhs(c.delta_bar, c.c1, c.c6, c.c8, d_target, &g)?;
        let at_lo = theorem1_rhs(t.delta_lo, c.delta_bar, &g)?;
        println!(
            "target inradius {d_target}: delta_lo {:.3e}, D2 {:.2}, scaled 10^{:.3} vs uniform at delta_lo 10^{:.3}",
            t.delta_lo, t.d2, t.rhs.log10, at_lo.log10
        );
    }
    Ok(())
}
