//! Tighten an input polytope by a Euclidean ball, project onto the result,
//! and compare the worst projection distance with its inradius bounds.
//!
//! cargo run --release --example tightening

use nalgebra::{DMatrix, DVector};
use relu_mpc::geometry::{BallRadius, Polytope};

fn main() -> relu_mpc::Result<()> {
    let tri = Polytope::new(
        DMatrix::from_row_slice(3, 2, &[-1.0, 0.0, 0.0, -1.0, 1.0, 1.0]),
        DVector::from_vec(vec![1.0, 1.0, 1.0]),
    )?;
    let (d, big_d) = (tri.inradius().value(), tri.radius()?.value());
    println!("inradius d = {d:.6}, radius D = {big_d:.6}");
    println!("{:>8} {:>12} {:>12}", "eps", "r(eps)", "eps D / d");
    for k in 1..=5 {
        let eps = 0.15 * d * k as f64;
        let r = tri.max_projection_distance(BallRadius::new(eps)?)?;
        println!("{eps:8.4} {r:12.6} {:12.6}", eps * big_d / d);
    }
    let inner = tri.tighten(BallRadius::new(0.2)?)?;
    let z = DVector::from_vec(vec![2.0, 2.0]);
    let p = inner.project(&z)?;
    println!("project (2, 2) onto the 0.2-tightened set: ({:.6}, {:.6})", p[0], p[1]);
    Ok(())
}
