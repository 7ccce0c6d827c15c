//! Estimate the stability constants of the double-integrator MPC and print
//! them as tagged JSON.
//!
//! cargo run --release --example estimate_constants -- [n_samples] [seed]

use relu_mpc::mpc::{estimate_constants, MpcProblem};

fn main() -> relu_mpc::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let prob = MpcProblem::double_integrator()?;
    println!("terminal set: {} rows", prob.xf().n_rows());
    let c = estimate_constants(&prob, n, seed, 1.1)?;
    println!("{}", serde_json::to_string_pretty(&c)?);
    println!("delta limit c7*sqrt(gamma) = {:.6}", c.delta_limit());
    Ok(())
}
