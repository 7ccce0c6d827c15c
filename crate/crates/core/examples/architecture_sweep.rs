//! Validation MSE against width at fixed depth, median over seeds.
//!
//! cargo run --release --example architecture_sweep -- [n] [epochs] [seeds]

use relu_mpc::mpc::{estimate_constants, MpcProblem};
use relu_mpc::nn::{train, TrainConfig};
use relu_mpc::pipeline::{build_uniform_dataset, Domain};
use relu_mpc::verify::median;

fn main() -> relu_mpc::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(5000);
    let epochs = args.get(1).copied().unwrap_or(100);
    let seeds = args.get(2).copied().unwrap_or(3) as u64;

    let prob = MpcProblem::double_integrator()?;
    let c = estimate_constants(&prob, 10_000, 0, 1.1)?;
    let ds = build_uniform_dataset(&prob, &c, c.delta_bar, n, 5, Domain::Invariant)?;
    println!("width,depth,median_val_mse");
    for depth in [1usize, 2, 3] {
        for width in [4usize, 8, 16, 32] {
            let mut dims = vec![2];
            dims.extend(std::iter::repeat_n(width, depth));
            dims.push(1);
            let mut mse = Vec::new();
            for seed in 0..seeds {
                let cfg = TrainConfig { epochs, seed, lr_decay: 0.995, patience: 50, ..TrainConfig::default() };
                mse.push(train(&ds.inputs, &ds.targets, &dims, &cfg)?.best_val_mse);
            }
            println!("{width},{depth},{:e}", median(&mut mse));
        }
    }
    Ok(())
}
