//! Solve a small inequality-constrained QP with the active-set solver and
//! print its KKT residuals, then show the infeasibility certificate.
//!
//! cargo run --release --example qp_solve

use nalgebra::{DMatrix, DVector};
use relu_mpc::qp::{kkt_residuals, solve_qp, QpData};

fn main() -> relu_mpc::Result<()> {
    // min (z0 - 2)^2 + (z1 - 1)^2  s.t.  z0 + z1 <= 1, z >= 0
    let q = QpData::new(
        DMatrix::identity(2, 2) * 2.0,
        DVector::from_vec(vec![-4.0, -2.0]),
        DMatrix::from_row_slice(3, 2, &[1.0, 1.0, -1.0, 0.0, 0.0, -1.0]),
        DVector::from_vec(vec![1.0, 0.0, 0.0]),
    );
    let sol = solve_qp(&q, None)?;
    println!("status {:?} after {} iterations", sol.status, sol.iterations);
    println!("z = {:?}, duals = {:?}", sol.z.as_slice(), sol.duals.as_slice());
    println!("{:?}", kkt_residuals(&q, &sol));

    // z0 <= -1 and z0 >= 1 cannot both hold
    let bad = QpData::new(
        DMatrix::identity(1, 1),
        DVector::zeros(1),
        DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
        DVector::from_vec(vec![-1.0, -1.0]),
    );
    let sol = solve_qp(&bad, None)?;
    println!("status {:?}, certificate {:?}", sol.status, sol.farkas.map(|f| f.as_slice().to_vec()));
    Ok(())
}
