//! Dense strictly convex QP solver.
//!
//! ```text
//!     minimize    1/2 z'Hz + g'z
//!     subject to  A_in z <= b_in
//!                 A_eq z  = b_eq
//! ```
//!
//! The solver is the dual active-set method of Goldfarb and Idnani: it starts at
//! the unconstrained minimizer, adds the lowest-index violated constraint, and
//! drops active constraints whose multiplier would turn negative. Every
//! intermediate point is optimal for its working set, so the method needs no
//! feasible starting point and an infeasible system is detected exactly when a
//! violated constraint lies in the span of the working set with non-positive
//! coefficients. That situation yields a Farkas ray, which is returned.
//!
//! Working-set algebra is recomputed from a thin QR of `L^{-1} N` at each step
//! (`H = LL'`); at the sizes used here this costs less than the bookkeeping of
//! incremental Givens updates and stays well conditioned.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QpData {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_ineq: DMatrix<f64>,
    pub b_ineq: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// Inequality multipliers, nonnegative.
    pub duals: DVector<f64>,
    /// Equality multipliers (sign free).
    pub eq_duals: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub iterations: usize,
    /// On infeasibility: `(y, w)` stacked, with `y >= 0`, `A_in'y + A_eq'w = 0`
    /// and `b_in'y + b_eq'w < 0`.
    pub farkas: Option<DVector<f64>>,
}

impl QpData {
    /// Inequality-only problem.
    pub fn new(h: DMatrix<f64>, g: DVector<f64>, a_ineq: DMatrix<f64>, b_ineq: DVector<f64>) -> Self {
        let n = g.len();
        QpData {
            h,
            g,
            a_ineq,
            b_ineq,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
        }
    }

    pub fn with_equalities(mut self, a_eq: DMatrix<f64>, b_eq: DVector<f64>) -> Self {
        self.a_eq = a_eq;
        self.b_eq = b_eq;
        self
    }

    pub fn n(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.g.dot(z)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.g.len();
        if self.h.shape() != (n, n) {
            return Err(Error::Validation(format!(
                "Hessian is {}x{}, expected {n}x{n}",
                self.h.nrows(),
                self.h.ncols()
            )));
        }
        if self.a_ineq.ncols() != n || self.a_ineq.nrows() != self.b_ineq.len() {
            return Err(Error::Validation("inequality block has inconsistent shape".into()));
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return Err(Error::Validation("equality block has inconsistent shape".into()));
        }
        let scale = self.h.amax().max(1.0);
        if (&self.h - self.h.transpose()).amax() > 1e-9 * scale {
            return Err(Error::Validation("Hessian is not symmetric".into()));
        }
        let all_finite = self.h.iter().chain(self.g.iter()).chain(self.a_ineq.iter()).chain(self.b_ineq.iter())
            .chain(self.a_eq.iter()).chain(self.b_eq.iter()).all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Validation("QP data contains non-finite entries".into()));
        }
        let min_eig = self.h.clone().symmetric_eigenvalues().min();
        if min_eig <= 1e-10 {
            return Err(Error::Validation(format!(
                "Hessian is not positive definite (min eigenvalue {min_eig:e})"
            )));
        }
        Ok(())
    }
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// KKT residuals of a candidate primal/dual pair.
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    pub primal: f64,
    pub stationarity: f64,
    pub complementarity: f64,
    pub dual_sign: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.stationarity).max(self.complementarity).max(self.dual_sign)
    }
}

pub fn kkt_residuals(q: &QpData, sol: &QpSolution) -> KktResiduals {
    let z = &sol.z;
    let slack = &q.a_ineq * z - &q.b_ineq;
    let eq_res = &q.a_eq * z - &q.b_eq;
    let primal = slack.iter().fold(0.0f64, |m, &s| m.max(s)).max(eq_res.amax());
    let grad = &q.h * z + &q.g + q.a_ineq.transpose() * &sol.duals + q.a_eq.transpose() * &sol.eq_duals;
    let complementarity = sol
        .duals
        .iter()
        .zip(slack.iter())
        .fold(0.0f64, |m, (l, s)| m.max((l * s).abs()));
    let dual_sign = sol.duals.iter().fold(0.0f64, |m, &l| m.max(-l));
    KktResiduals {
        primal,
        stationarity: grad.amax(),
        complementarity,
        dual_sign,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Row {
    Ineq(usize),
    /// Equality row with the orientation used when it entered.
    Eq(usize, i8),
}

struct Active {
    row: Row,
    u: f64,
}

struct Solver<'a> {
    q: &'a QpData,
    chol: Cholesky<f64, Dyn>,
    l: DMatrix<f64>,
    lt: DMatrix<f64>,
    z: DVector<f64>,
    active: Vec<Active>,
    iterations: usize,
    cap: usize,
}

enum AddOutcome {
    Added,
    Infeasible(DVector<f64>),
    MaxIter,
}

/// Solve a strictly convex QP; `warm_start` is a primal guess whose tight
/// constraints seed a trial working set.
pub fn solve_qp(q: &QpData, warm_start: Option<&DVector<f64>>) -> Result<QpSolution> {
    q.validate()?;
    let chol = Cholesky::new(q.h.clone())
        .ok_or_else(|| Error::Validation("Hessian Cholesky factorization failed".into()))?;
    let n = q.n();
    let m = q.b_ineq.len();
    let me = q.b_eq.len();

    if let Some(z0) = warm_start {
        if z0.len() != n {
            return Err(Error::Dimension { expected: n, got: z0.len() });
        }
        if let Some(sol) = try_warm(q, &chol, z0) {
            return Ok(sol);
        }
    }

    let z = -chol.solve(&q.g);
    let l = chol.l();
    let lt = l.transpose();
    let mut s = Solver {
        q,
        chol,
        l,
        lt,
        z,
        active: Vec::new(),
        iterations: 0,
        cap: 50 * (n + m + me).max(1),
    };

    for e in 0..me {
        match s.add(Row::Eq(e, 1)) {
            AddOutcome::Added => {}
            AddOutcome::Infeasible(ray) => return Ok(s.finish_infeasible(ray)),
            AddOutcome::MaxIter => return Ok(s.finish(QpStatus::MaxIter)),
        }
    }
    loop {
        let Some(p) = s.lowest_violated() else {
            break;
        };
        match s.add(Row::Ineq(p)) {
            AddOutcome::Added => {}
            AddOutcome::Infeasible(ray) => return Ok(s.finish_infeasible(ray)),
            AddOutcome::MaxIter => return Ok(s.finish(QpStatus::MaxIter)),
        }
    }
    s.polish();
    Ok(s.finish(QpStatus::Optimal))
}

fn violation_tol(q: &QpData, i: usize, z: &DVector<f64>) -> f64 {
    let row_norm = q.a_ineq.row(i).norm();
    1e-12 * (1.0 + q.b_ineq[i].abs() + row_norm * z.amax())
}

impl<'a> Solver<'a> {
    /// Normal and offset in `c'z >= d` form.
    fn constraint(&self, row: Row) -> (DVector<f64>, f64) {
        match row {
            Row::Ineq(i) => (-self.q.a_ineq.row(i).transpose(), -self.q.b_ineq[i]),
            Row::Eq(e, sgn) => {
                let s = f64::from(sgn);
                (self.q.a_eq.row(e).transpose() * s, self.q.b_eq[e] * s)
            }
        }
    }

    fn lowest_violated(&self) -> Option<usize> {
        let slack = &self.q.a_ineq * &self.z - &self.q.b_ineq;
        (0..slack.len()).find(|&i| slack[i] > violation_tol(self.q, i, &self.z))
    }

    fn l_inv(&self, v: &DVector<f64>) -> DVector<f64> {
        self.l.solve_lower_triangular(v).expect("triangular solve")
    }

    fn lt_inv(&self, v: &DVector<f64>) -> DVector<f64> {
        self.lt.solve_upper_triangular(v).expect("triangular solve")
    }

    /// `L^{-1} N` for the working set.
    fn working_basis(&self) -> DMatrix<f64> {
        let n = self.q.n();
        let mut b = DMatrix::zeros(n, self.active.len());
        for (j, a) in self.active.iter().enumerate() {
            let (c, _) = self.constraint(a.row);
            b.set_column(j, &self.l_inv(&c));
        }
        b
    }

    /// Primal step direction `s` and dual change `r` for entering normal `c`.
    fn step(&self, c: &DVector<f64>) -> (DVector<f64>, DVector<f64>, bool) {
        let w = self.l_inv(c);
        let k = self.active.len();
        if k == 0 {
            let nz = w.norm() > 0.0;
            return (self.lt_inv(&w), DVector::zeros(0), nz);
        }
        let b = self.working_basis();
        let qr = b.qr();
        let q1 = qr.q();
        let r = qr.r();
        let proj = q1.transpose() * &w;
        let resid = &w - &q1 * &proj;
        let r_dual = r.solve_upper_triangular(&proj).unwrap_or_else(|| DVector::zeros(k));
        let nonzero = resid.norm() > 1e-12 * w.norm().max(1e-300);
        (self.lt_inv(&resid), r_dual, nonzero)
    }

    fn add(&mut self, row: Row) -> AddOutcome {
        let (mut row, mut c, mut d) = {
            let (c, d) = self.constraint(row);
            (row, c, d)
        };
        let mut slack = c.dot(&self.z) - d;
        if let Row::Eq(e, _) = row {
            if slack > 0.0 {
                row = Row::Eq(e, -1);
                c = -c;
                d = -d;
                slack = -slack;
            }
        }
        let is_eq = matches!(row, Row::Eq(..));
        let mut u_p = 0.0;
        loop {
            self.iterations += 1;
            if self.iterations > self.cap {
                return AddOutcome::MaxIter;
            }
            let (s, r, s_nonzero) = self.step(&c);
            if is_eq && !s_nonzero && slack.abs() <= 1e-12 * (1.0 + d.abs()) {
                // Redundant but consistent equality.
                return AddOutcome::Added;
            }

            let mut t1 = f64::INFINITY;
            let mut drop: Option<usize> = None;
            for (j, a) in self.active.iter().enumerate() {
                if matches!(a.row, Row::Ineq(_)) && r[j] > 1e-14 {
                    let ratio = a.u / r[j];
                    if ratio < t1 {
                        t1 = ratio;
                        drop = Some(j);
                    }
                }
            }
            let sc = s.dot(&c);
            let t2 = if s_nonzero && sc > 0.0 { (-slack / sc).max(0.0) } else { f64::INFINITY };
            let t = t1.min(t2);

            if !t.is_finite() {
                return AddOutcome::Infeasible(self.farkas_ray(row, &r));
            }
            for (j, a) in self.active.iter_mut().enumerate() {
                a.u -= t * r[j];
            }
            u_p += t;
            if t2.is_finite() {
                self.z += &s * t;
            }
            if t2 <= t1 {
                self.active.push(Active { row, u: u_p });
                return AddOutcome::Added;
            }
            let k = drop.expect("partial step has a blocking constraint");
            self.active.remove(k);
            slack = c.dot(&self.z) - d;
        }
    }

    fn farkas_ray(&self, entering: Row, r: &DVector<f64>) -> DVector<f64> {
        let m = self.q.b_ineq.len();
        let mut ray = DVector::zeros(m + self.q.b_eq.len());
        // Coefficient on the original row for a c'z >= d normal c = kappa * row.
        let put = |ray: &mut DVector<f64>, row: Row, coef: f64| match row {
            Row::Ineq(i) => ray[i] += -coef,
            Row::Eq(e, s) => ray[m + e] += coef * f64::from(s),
        };
        put(&mut ray, entering, -1.0);
        for (j, a) in self.active.iter().enumerate() {
            put(&mut ray, a.row, r[j]);
        }
        ray
    }

    /// Re-solve the equality-constrained problem on the final working set.
    fn polish(&mut self) {
        if let Some((z, u)) = solve_on_working_set(self.q, &self.chol, &self.active.iter().map(|a| a.row).collect::<Vec<_>>()) {
            let dual_ok = self
                .active
                .iter()
                .zip(u.iter())
                .all(|(a, &ui)| matches!(a.row, Row::Eq(..)) || ui >= -1e-10);
            if dual_ok {
                self.z = z;
                for (a, ui) in self.active.iter_mut().zip(u.iter()) {
                    a.u = if matches!(a.row, Row::Ineq(_)) { ui.max(0.0) } else { *ui };
                }
            }
        }
    }

    fn finish(self, status: QpStatus) -> QpSolution {
        let (duals, eq_duals) = split_duals(self.q, &self.active);
        let objective = self.q.objective(&self.z);
        QpSolution {
            z: self.z,
            duals,
            eq_duals,
            objective,
            status,
            iterations: self.iterations,
            farkas: None,
        }
    }

    fn finish_infeasible(self, ray: DVector<f64>) -> QpSolution {
        let mut sol = self.finish(QpStatus::Infeasible);
        sol.farkas = Some(ray);
        sol
    }
}

fn split_duals(q: &QpData, active: &[Active]) -> (DVector<f64>, DVector<f64>) {
    let mut duals = DVector::zeros(q.b_ineq.len());
    let mut eq_duals = DVector::zeros(q.b_eq.len());
    for a in active {
        match a.row {
            Row::Ineq(i) => duals[i] = a.u,
            // c = s * a_eq, Hz + g = u c  =>  nu = -s u
            Row::Eq(e, s) => eq_duals[e] = -f64::from(s) * a.u,
        }
    }
    (duals, eq_duals)
}

/// Minimize over `{c_j'z = d_j, j in working set}`; returns `(z, u)` with
/// `Hz + g = sum u_j c_j`.
fn solve_on_working_set(q: &QpData, chol: &Cholesky<f64, Dyn>, rows: &[Row]) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = q.n();
    let l = chol.l();
    let g_hat = l.solve_lower_triangular(&q.g)?;
    if rows.is_empty() {
        let y = -g_hat;
        return Some((l.transpose().solve_upper_triangular(&y)?, DVector::zeros(0)));
    }
    if rows.len() > n {
        return None;
    }
    let mut b = DMatrix::zeros(n, rows.len());
    let mut d = DVector::zeros(rows.len());
    for (j, &row) in rows.iter().enumerate() {
        let (c, dj) = match row {
            Row::Ineq(i) => (-q.a_ineq.row(i).transpose(), -q.b_ineq[i]),
            Row::Eq(e, s) => {
                let s = f64::from(s);
                (q.a_eq.row(e).transpose() * s, q.b_eq[e] * s)
            }
        };
        b.set_column(j, &l.solve_lower_triangular(&c)?);
        d[j] = dj;
    }
    let qr = b.clone().qr();
    let r = qr.r();
    let diag_min = r.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let diag_max = r.diagonal().amax();
    if diag_min <= 1e-12 * diag_max.max(1e-300) {
        return None;
    }
    let rhs = &d + b.transpose() * &g_hat;
    let tmp = r.transpose().solve_lower_triangular(&rhs)?;
    let u = r.solve_upper_triangular(&tmp)?;
    let y = -g_hat + &b * &u;
    let z = l.transpose().solve_upper_triangular(&y)?;
    Some((z, u))
}

fn try_warm(q: &QpData, chol: &Cholesky<f64, Dyn>, z0: &DVector<f64>) -> Option<QpSolution> {
    let slack = &q.a_ineq * z0 - &q.b_ineq;
    let mut rows: Vec<Row> = (0..q.b_eq.len()).map(|e| Row::Eq(e, 1)).collect();
    for i in 0..slack.len() {
        let scale = 1.0 + q.b_ineq[i].abs() + q.a_ineq.row(i).norm() * z0.amax();
        if slack[i].abs() <= 1e-9 * scale {
            rows.push(Row::Ineq(i));
        }
    }
    let (z, u) = solve_on_working_set(q, chol, &rows)?;
    let active: Vec<Active> = rows.iter().zip(u.iter()).map(|(&row, &u)| Active { row, u }).collect();
    if active.iter().any(|a| matches!(a.row, Row::Ineq(_)) && a.u < 0.0) {
        return None;
    }
    let slack = &q.a_ineq * &z - &q.b_ineq;
    if (0..slack.len()).any(|i| slack[i] > violation_tol(q, i, &z)) {
        return None;
    }
    let (duals, eq_duals) = split_duals(q, &active);
    let objective = q.objective(&z);
    Some(QpSolution {
        z,
        duals,
        eq_duals,
        objective,
        status: QpStatus::Optimal,
        iterations: 0,
        farkas: None,
    })
}
