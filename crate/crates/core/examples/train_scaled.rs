//! Train on a scaled dataset for a few lower budgets and compare where the
//! closed loop settles.
//!
//! cargo run --release --example train_scaled -- [n] [epochs]

use relu_mpc::mpc::{estimate_constants, MpcProblem};
use relu_mpc::nn::{train, TrainConfig};
use relu_mpc::pipeline::{build_scaled_dataset, sample_states, uniform_eps, Domain};
use relu_mpc::scaling::ScalingParams;
use relu_mpc::verify::{simulate_many, NnPolicy, RolloutSummary, Target};

fn main() -> relu_mpc::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(10_000);
    let epochs = args.get(1).copied().unwrap_or(150);

    let prob = MpcProblem::double_integrator()?;
    let c = estimate_constants(&prob, 10_000, 0, 1.1)?;
    let x0s = sample_states(&prob, &c, 50, 99, Domain::Invariant)?.states;
    let cfg = TrainConfig { epochs, lr_decay: 0.995, patience: 50, ..TrainConfig::default() };
    for frac in [0.4, 0.2, 0.1] {
        let params = ScalingParams::new(c.c8, frac * c.delta_bar, c.delta_bar, uniform_eps(c.delta_bar, &c))?;
        let ds = build_scaled_dataset(&prob, &c, &params, n, 3, Domain::Invariant)?;
        let out = train(&ds.inputs, &ds.targets, &[2, 32, 32, 32, 1], &cfg)?;
        let policy = NnPolicy::new(out.net, ds.input_map())?;
        let target = Target::Ball { radius: c.target_radius(params.delta_lo) };
        let runs = simulate_many(&prob, &policy, &x0s, 200, &target, 12)?;
        let s = RolloutSummary::from_runs(&runs, 200, target);
        println!(
            "delta_lo = {frac} delta_bar: val mse {:.3e}, median tail |x| {:.3e}, {}/{} settled, {} violations",
            out.best_val_mse, s.median_tail_mean_state_norm, s.entered_and_stayed, s.n_rollouts, s.total_violations
        );
    }
    Ok(())
}
