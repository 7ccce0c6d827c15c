//! Certify a policy that meets the uniform error budget by construction:
//! the tightened MPC target pushed by the full training tolerance. Reports
//! the pointwise check, rollouts and the Lyapunov envelope.
//!
//! cargo run --release --example certify -- [out.csv]

use nalgebra::DVector;
use relu_mpc::mpc::{estimate_constants, MpcProblem};
use relu_mpc::pipeline::{sample_states, uniform_eps, Domain};
use relu_mpc::scaling::project_tightened;
use relu_mpc::verify::{
    check_pointwise, dominance_failures, lyapunov_sequence, simulate_many, write_trajectories, ErrorBound, Policy,
    RolloutSummary, Target,
};

struct Pushed<'a> {
    prob: &'a MpcProblem,
    eps: f64,
}

impl Policy for Pushed<'_> {
    fn control(&self, x: &DVector<f64>) -> relu_mpc::Result<DVector<f64>> {
        let u = project_tightened(&self.prob.solve(x)?.u, self.eps, self.prob.u_set())?;
        Ok(u.add_scalar(if x[0] + x[1] >= 0.0 { -self.eps } else { self.eps }))
    }
}

fn main() -> relu_mpc::Result<()> {
    let prob = MpcProblem::double_integrator()?;
    let c = estimate_constants(&prob, 10_000, 0, 1.1)?;
    let delta1 = c.delta_bar;
    let policy = Pushed { prob: &prob, eps: uniform_eps(delta1, &c) };

    let report = check_pointwise(&prob, &c, &policy, &ErrorBound::Uniform { delta1 }, 5000, 1)?;
    println!("{}", serde_json::to_string_pretty(&report)?);

    let target = Target::uniform(&c, delta1);
    let x0s = sample_states(&prob, &c, 20, 2, Domain::Invariant)?.states;
    let runs = simulate_many(&prob, &policy, &x0s, 100, &target, 12)?;
    let summary = RolloutSummary::from_runs(&runs, 100, target);
    println!("{}", serde_json::to_string_pretty(&summary)?);

    let seq = lyapunov_sequence(c.gamma, &c, delta1, 100)?;
    let above: usize = runs.iter().map(|(t, _)| dominance_failures(t, &seq)).sum();
    println!("steps above the Lyapunov envelope: {above}");

    if let Some(path) = std::env::args().nth(1) {
        write_trajectories(path.as_ref(), &runs.iter().map(|r| &r.0).collect::<Vec<_>>())?;
        println!("trajectories written to {path}");
    }
    Ok(())
}
