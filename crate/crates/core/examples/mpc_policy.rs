//! Evaluate the MPC policy and value of the double integrator along a line
//! of states, with the envelope-theorem gradient of the value.
//!
//! cargo run --release --example mpc_policy

use nalgebra::DVector;
use relu_mpc::mpc::MpcProblem;

fn main() -> relu_mpc::Result<()> {
    let prob = MpcProblem::double_integrator()?;
    println!("P = {:.4}", prob.p());
    println!("K = {:.4}", prob.lqr_gain()?);
    println!("{:>7} {:>7} {:>9} {:>11} {:>22}", "x_0", "x_1", "u", "v", "grad v");
    for i in -5..=5 {
        let x = DVector::from_vec(vec![i as f64, 1.0]);
        let e = prob.solve(&x)?;
        if !e.feasible {
            println!("{:7.2} {:7.2}   infeasible", x[0], x[1]);
            continue;
        }
        let g = prob.value_gradient(&x, &e);
        println!("{:7.2} {:7.2} {:9.5} {:11.5} {:>10.4} {:>10.4}", x[0], x[1], e.u[0], e.v, g[0], g[1]);
    }
    Ok(())
}
