//! Small dense simplex for `maximize c'x  s.t.  Ax <= b` with free `x` and `b >= 0`.
//!
//! Every LP in this crate has the origin as a feasible point (all sets are
//! C-sets), so the slack basis is an immediate feasible start and no phase one
//! is needed. Bland's rule keeps the pivoting finite.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: DVector<f64>, value: f64 },
    Unbounded,
}

const PIVOT_TOL: f64 = 1e-11;

pub fn maximize(c: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> LpOutcome {
    let (m, n) = a.shape();
    debug_assert_eq!(c.len(), n);
    debug_assert_eq!(b.len(), m);
    debug_assert!(b.iter().all(|&bi| bi >= -1e-12), "origin must be feasible");

    // Columns: x+ (n), x- (n), slacks (m), rhs.
    let cols = 2 * n + m;
    let mut t = DMatrix::<f64>::zeros(m + 1, cols + 1);
    for i in 0..m {
        for j in 0..n {
            t[(i, j)] = a[(i, j)];
            t[(i, n + j)] = -a[(i, j)];
        }
        t[(i, 2 * n + i)] = 1.0;
        t[(i, cols)] = b[i].max(0.0);
    }
    // Objective row holds reduced costs -c (we pivot while any entry is negative).
    for j in 0..n {
        t[(m, j)] = -c[j];
        t[(m, n + j)] = c[j];
    }
    let mut basis: Vec<usize> = (0..m).map(|i| 2 * n + i).collect();

    let max_pivots = 50 * (cols + m).max(10);
    for _ in 0..max_pivots {
        // Bland: lowest index with negative reduced cost enters.
        let Some(enter) = (0..cols).find(|&j| t[(m, j)] < -PIVOT_TOL) else {
            break;
        };
        let mut leave: Option<usize> = None;
        let mut best = f64::INFINITY;
        for i in 0..m {
            let coef = t[(i, enter)];
            if coef > PIVOT_TOL {
                let ratio = t[(i, cols)] / coef;
                let better = match leave {
                    None => true,
                    Some(l) => {
                        ratio < best - 1e-14 || (ratio <= best + 1e-14 && basis[i] < basis[l])
                    }
                };
                if better {
                    best = ratio;
                    leave = Some(i);
                }
            }
        }
        let Some(row) = leave else {
            return LpOutcome::Unbounded;
        };
        pivot(&mut t, row, enter);
        basis[row] = enter;
    }

    let mut x = DVector::zeros(n);
    for (i, &bv) in basis.iter().enumerate() {
        if bv < n {
            x[bv] += t[(i, cols)];
        } else if bv < 2 * n {
            x[bv - n] -= t[(i, cols)];
        }
    }
    let value = c.dot(&x);
    LpOutcome::Optimal { x, value }
}

fn pivot(t: &mut DMatrix<f64>, row: usize, col: usize) {
    let p = t[(row, col)];
    let ncols = t.ncols();
    for j in 0..ncols {
        t[(row, j)] /= p;
    }
    for i in 0..t.nrows() {
        if i == row {
            continue;
        }
        let f = t[(i, col)];
        if f != 0.0 {
            for j in 0..ncols {
                let v = t[(row, j)];
                t[(i, j)] -= f * v;
            }
        }
    }
}
