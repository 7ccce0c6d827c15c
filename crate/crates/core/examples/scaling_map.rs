//! Tabulate the state-aware input map, its inverse and the output factor
//! along a ray.
//!
//! cargo run --release --example scaling_map

use nalgebra::DVector;
use relu_mpc::scaling::{beta, delta2, t_forward, t_inverse, ScalingParams};

fn main() -> relu_mpc::Result<()> {
    let p = ScalingParams::new(0.5, 0.3, 1.0, 0.25)?;
    let (inner, outer) = p.radii();
    println!("branch radii {inner} and {outer}, offset {:.6}", p.offset());
    println!("{:>6} {:>10} {:>10} {:>10} {:>12}", "|x|", "|T(x)|", "delta2", "beta", "round trip");
    for i in 0..=12 {
        let r = 0.25 * i as f64;
        let x = DVector::from_vec(vec![0.6 * r, 0.8 * r]);
        let y = t_forward(&x, &p);
        let back = t_inverse(&y, &p);
        println!(
            "{r:6.2} {:10.6} {:10.6} {:10.6} {:12.1e}",
            y.norm(),
            delta2(&x, &p),
            beta(&x, &p),
            (back - &x).norm()
        );
    }
    Ok(())
}
