//! Maximal constraint-admissible invariant set of `x+ = (A - BK)x`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::Polytope;

pub const TERMINAL_MAX_ITER: usize = 200;

const REDUNDANCY_TOL: f64 = 1e-9;

/// Rows `G x <= g` of `{x in X, -Kx in U}` propagated through `A_cl` until
/// every new row is implied by the current set.
pub fn max_invariant_set(a_cl: &DMatrix<f64>, k: &DMatrix<f64>, x_set: &Polytope, u_set: &Polytope) -> Result<Polytope> {
    let n = a_cl.nrows();
    let hu_k = -(u_set.h_mat() * k);
    let mut base_rows: Vec<(DVector<f64>, f64)> = Vec::new();
    for i in 0..x_set.n_rows() {
        base_rows.push((x_set.h_mat().row(i).transpose(), x_set.h_vec()[i]));
    }
    for i in 0..u_set.n_rows() {
        let row = hu_k.row(i).transpose();
        if row.norm() > 0.0 {
            base_rows.push((row, u_set.h_vec()[i]));
        }
    }

    let mut rows = base_rows.clone();
    let mut power = DMatrix::<f64>::identity(n, n);
    for _ in 0..TERMINAL_MAX_ITER {
        power = &power * a_cl;
        let current = to_parts(&rows, n);
        let mut added = false;
        for (c, g) in &base_rows {
            let cand = power.transpose() * c;
            if cand.norm() <= 1e-14 * c.norm() {
                continue;
            }
            let sup = support(&current, &cand);
            if sup > g + REDUNDANCY_TOL * (1.0 + g.abs()) {
                rows.push((cand, *g));
                added = true;
            }
        }
        if !added {
            return Ok(remove_redundant(rows, n));
        }
    }
    Err(Error::TerminalSet(TERMINAL_MAX_ITER))
}

fn to_parts(rows: &[(DVector<f64>, f64)], n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let m = rows.len();
    let mut h = DMatrix::zeros(m, n);
    let mut b = DVector::zeros(m);
    for (i, (r, g)) in rows.iter().enumerate() {
        h.set_row(i, &r.transpose());
        b[i] = *g;
    }
    (h, b)
}

fn support(parts: &(DMatrix<f64>, DVector<f64>), c: &DVector<f64>) -> f64 {
    match crate::lp::maximize(c, &parts.0, &parts.1) {
        crate::lp::LpOutcome::Optimal { value, .. } => value,
        crate::lp::LpOutcome::Unbounded => f64::INFINITY,
    }
}

/// Drop rows implied by the others, scanning from the last row back.
fn remove_redundant(mut rows: Vec<(DVector<f64>, f64)>, n: usize) -> Polytope {
    let mut i = rows.len();
    while i > 0 {
        i -= 1;
        if rows.len() <= n + 1 {
            break;
        }
        let (c, g) = rows[i].clone();
        let others: Vec<_> = rows.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, r)| r.clone()).collect();
        let parts = to_parts(&others, n);
        let sup = support(&parts, &c);
        if sup.is_finite() && sup <= g + REDUNDANCY_TOL * (1.0 + g.abs()) {
            rows.remove(i);
        }
    }
    let (h, b) = to_parts(&rows, n);
    Polytope::from_parts_unchecked(h, b)
}
