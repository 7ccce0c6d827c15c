//! Build a uniform-regime dataset over the invariant set, train a ReLU
//! network on it, run the minimax refinement and report the achieved sup
//! error against the budget.
//!
//! cargo run --release --example train_uniform -- [n] [epochs] [refine_lr] [refine_steps]

use relu_mpc::mpc::{estimate_constants, MpcProblem};
use relu_mpc::nn::{refine_sup, sup_error, train, RefineConfig, TrainConfig};
use relu_mpc::pipeline::{build_uniform_dataset, Domain};

fn main() -> relu_mpc::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let n = arg(0, 20_000.0) as usize;

    let prob = MpcProblem::double_integrator()?;
    let c = estimate_constants(&prob, 10_000, 0, 1.1)?;
    let delta1 = c.delta_bar;
    let ds = build_uniform_dataset(&prob, &c, delta1, n, 1, Domain::Invariant)?;
    println!("delta1 = {delta1:.3e}, eps = {:.3e}", ds.meta.eps);

    let epochs = arg(1, 300.0) as usize;
    let cfg = TrainConfig {
        epochs,
        lr_decay: 0.995,
        patience: 50,
        ..TrainConfig::default()
    };
    let out = train(&ds.inputs, &ds.targets, &[2, 32, 32, 32, 1], &cfg)?;
    let sup = sup_error(&out.net, &ds.inputs, &ds.targets)?;
    println!("adam: best epoch {} val mse {:.3e} sup {sup:.3e}", out.best_epoch, out.best_val_mse);

    let rcfg = RefineConfig {
        lr: arg(2, 1e-4),
        steps_per_stage: arg(3, 1000.0) as usize,
        ..RefineConfig::default()
    };
    let (net, sup) = refine_sup(&out.net, &ds.inputs, &ds.targets, &rcfg)?;
    let errs = (net.forward_batch(&ds.inputs)? - &ds.targets).map(f64::abs);
    let above = errs.iter().filter(|&&e| e > ds.meta.eps).count();
    println!("refined: sup {sup:.3e}, {above} of {n} samples above eps");
    println!("within budget: {}", sup <= ds.meta.eps);
    Ok(())
}
