use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const DARE_MAX_ITER: usize = 100_000;
pub const DARE_TOL: f64 = 1e-9;

fn riccati_map(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let bt_p = b.transpose() * p;
    let s = r + &bt_p * b;
    let gain = s.cholesky()?.solve(&(&bt_p * a));
    let next = q + a.transpose() * p * a - a.transpose() * p.transpose() * b * gain;
    Some((&next + next.transpose()) * 0.5)
}

/// Residual `P - (Q + A'PA - A'PB (R + B'PB)^{-1} B'PA)` in max-abs norm.
pub fn dare_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    match riccati_map(a, b, q, r, p) {
        Some(next) => (p - next).amax(),
        None => f64::INFINITY,
    }
}

/// Stabilizing solution of the discrete algebraic Riccati equation by
/// fixed-point iteration from `P = Q`.
pub fn dare(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut p = q.clone();
    for _ in 0..DARE_MAX_ITER {
        let next = riccati_map(a, b, q, r, &p).ok_or_else(|| Error::Validation("R + B'PB is not positive definite".into()))?;
        if !next.iter().all(|v| v.is_finite()) {
            break;
        }
        let step = (&next - &p).amax();
        p = next;
        if step <= 1e-13 * p.amax().max(1.0) && dare_residual(a, b, q, r, &p) <= DARE_TOL {
            return Ok(p);
        }
    }
    if dare_residual(a, b, q, r, &p) <= DARE_TOL {
        return Ok(p);
    }
    Err(Error::Stabilizability(DARE_MAX_ITER))
}

/// LQR gain `K` for the feedback `u = -Kx`.
pub fn lqr_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let bt_p = b.transpose() * p;
    let s = r + &bt_p * b;
    s.cholesky()
        .map(|c| c.solve(&(&bt_p * a)))
        .ok_or_else(|| Error::Validation("R + B'PB is not positive definite".into()))
}
