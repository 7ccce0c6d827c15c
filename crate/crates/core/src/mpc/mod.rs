//! Linear MPC: problem data, condensed QP, policy and value evaluation.
//!
//! The finite-horizon problem
//!
//! ```text
//!     v(x) = min  x_N' P x_N + sum_{k<N} x_k' Q x_k + u_k' R u_k
//!            s.t. x_{k+1} = A x_k + B u_k,  x_k in X,  u_k in U,  x_N in Xf,  x_0 = x
//! ```
//!
//! is condensed by eliminating the states, `x_k = A^k x + sum_{j<k} A^{k-1-j} B u_j`,
//! which leaves a dense QP in the stacked inputs with `x` entering the linear
//! term and the right-hand side only.

mod constants;
mod riccati;
mod terminal;

pub use constants::{c6_closed_form, c7_closed_form, c8_closed_form, estimate_constants, in_sublevel, Constants};
pub use riccati::{dare, dare_residual, lqr_gain, DARE_MAX_ITER, DARE_TOL};
pub use terminal::{max_invariant_set, TERMINAL_MAX_ITER};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::Polytope;
use crate::qp::{self, QpData, QpStatus};

/// Serialized form of an MPC problem. `P` and `Xf` may be omitted, in which
/// case they are derived from the DARE and the LQR invariant set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemSpec {
    #[serde(rename = "A", with = "crate::serde_rows")]
    pub a: DMatrix<f64>,
    #[serde(rename = "B", with = "crate::serde_rows")]
    pub b: DMatrix<f64>,
    #[serde(rename = "Q", with = "crate::serde_rows")]
    pub q: DMatrix<f64>,
    #[serde(rename = "R", with = "crate::serde_rows")]
    pub r: DMatrix<f64>,
    #[serde(rename = "P", with = "crate::serde_rows::option", default, skip_serializing_if = "Option::is_none")]
    pub p: Option<DMatrix<f64>>,
    pub horizon: usize,
    #[serde(rename = "X")]
    pub x_set: Polytope,
    #[serde(rename = "U")]
    pub u_set: Polytope,
    #[serde(rename = "Xf", default, skip_serializing_if = "Option::is_none")]
    pub xf: Option<Polytope>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ProblemSpec", into = "ProblemSpec")]
pub struct MpcProblem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    p: DMatrix<f64>,
    horizon: usize,
    x_set: Polytope,
    u_set: Polytope,
    xf: Polytope,
    condensed: Condensed,
}

/// Condensed QP pieces: `H`, `g = F x`, constant `x'Yx`, and `A z <= b0 - E x`.
#[derive(Debug, Clone)]
struct Condensed {
    hess: DMatrix<f64>,
    f_mat: DMatrix<f64>,
    y_mat: DMatrix<f64>,
    a_ineq: DMatrix<f64>,
    b0: DVector<f64>,
    e_mat: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct PolicyEval {
    /// First input of the optimal sequence (zero when infeasible).
    pub u: DVector<f64>,
    /// Optimal cost (`+inf` when infeasible).
    pub v: f64,
    pub feasible: bool,
    /// Full optimal input sequence.
    pub sequence: DVector<f64>,
    /// Multipliers of the condensed inequality rows.
    pub duals: DVector<f64>,
}

impl TryFrom<ProblemSpec> for MpcProblem {
    type Error = Error;

    fn try_from(s: ProblemSpec) -> Result<Self> {
        MpcProblem::from_spec(s)
    }
}

impl From<MpcProblem> for ProblemSpec {
    fn from(p: MpcProblem) -> Self {
        ProblemSpec {
            a: p.a,
            b: p.b,
            q: p.q,
            r: p.r,
            p: Some(p.p),
            horizon: p.horizon,
            x_set: p.x_set,
            u_set: p.u_set,
            xf: Some(p.xf),
        }
    }
}

fn min_sym_eig(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().min()
}

fn check_sym(name: &str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(Error::Validation(format!("{name} must be {n}x{n}, got {}x{}", m.nrows(), m.ncols())));
    }
    if (m - m.transpose()).amax() > 1e-9 * m.amax().max(1.0) {
        return Err(Error::Validation(format!("{name} is not symmetric")));
    }
    Ok(())
}

impl MpcProblem {
    pub fn from_spec(s: ProblemSpec) -> Result<Self> {
        let nx = s.a.nrows();
        if s.a.ncols() != nx || nx == 0 {
            return Err(Error::Validation("A must be square and nonempty".into()));
        }
        let nu = s.b.ncols();
        if s.b.nrows() != nx || nu == 0 {
            return Err(Error::Validation(format!("B must be {nx}xn_u with n_u >= 1")));
        }
        check_sym("Q", &s.q, nx)?;
        check_sym("R", &s.r, nu)?;
        if min_sym_eig(&s.q) < -1e-12 {
            return Err(Error::Validation("Q must be positive semidefinite".into()));
        }
        if min_sym_eig(&s.r) <= 1e-12 {
            return Err(Error::Validation("R must be positive definite".into()));
        }
        if s.horizon == 0 {
            return Err(Error::Validation("horizon must be positive".into()));
        }
        if s.x_set.dim() != nx {
            return Err(Error::Validation(format!("X has dimension {}, expected {nx}", s.x_set.dim())));
        }
        if s.u_set.dim() != nu {
            return Err(Error::Validation(format!("U has dimension {}, expected {nu}", s.u_set.dim())));
        }
        // DARE convergence doubles as the stabilizability check.
        let dare_p = dare(&s.a, &s.b, &s.q, &s.r)?;
        let p = match s.p {
            Some(p) => {
                check_sym("P", &p, nx)?;
                if min_sym_eig(&p) < -1e-12 {
                    return Err(Error::Validation("P must be positive semidefinite".into()));
                }
                p
            }
            None => dare_p.clone(),
        };
        let xf = match s.xf {
            Some(xf) => {
                if xf.dim() != nx {
                    return Err(Error::Validation("Xf dimension mismatch".into()));
                }
                xf
            }
            None => {
                let k = lqr_gain(&s.a, &s.b, &s.r, &p)?;
                let a_cl = &s.a - &s.b * &k;
                max_invariant_set(&a_cl, &k, &s.x_set, &s.u_set)?
            }
        };
        xf.validate().map_err(|e| e.context("terminal set"))?;
        let condensed = Condensed::build(&s.a, &s.b, &s.q, &s.r, &p, s.horizon, &s.x_set, &s.u_set, &xf);
        Ok(MpcProblem {
            a: s.a,
            b: s.b,
            q: s.q,
            r: s.r,
            p,
            horizon: s.horizon,
            x_set: s.x_set,
            u_set: s.u_set,
            xf,
            condensed,
        })
    }

    /// Double integrator used throughout the tests and examples:
    /// `A = [[1,1],[0,1]]`, `B = [0.5, 1]'`, `Q = I`, `R = 1`, horizon 5,
    /// `U = [-1, 1]`, `X = [-5, 5]^2`, DARE terminal cost and LQR terminal set.
    pub fn double_integrator() -> Result<Self> {
        MpcProblem::from_spec(ProblemSpec {
            a: DMatrix::from_row_slice(2, 2, &[1., 1., 0., 1.]),
            b: DMatrix::from_row_slice(2, 1, &[0.5, 1.]),
            q: DMatrix::identity(2, 2),
            r: DMatrix::identity(1, 1),
            p: None,
            horizon: 5,
            x_set: Polytope::symmetric_box(&[5.0, 5.0])?,
            u_set: Polytope::symmetric_box(&[1.0])?,
            xf: None,
        })
    }

    pub fn nx(&self) -> usize {
        self.a.nrows()
    }
    pub fn nu(&self) -> usize {
        self.b.ncols()
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn x_set(&self) -> &Polytope {
        &self.x_set
    }
    pub fn u_set(&self) -> &Polytope {
        &self.u_set
    }
    pub fn xf(&self) -> &Polytope {
        &self.xf
    }

    pub fn lqr_gain(&self) -> Result<DMatrix<f64>> {
        lqr_gain(&self.a, &self.b, &self.r, &self.p)
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    pub fn stage_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        x.dot(&(&self.q * x)) + u.dot(&(&self.r * u))
    }

    /// SHA-256 of the canonical problem JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("problem serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Condensed QP for state `x` plus the constant term of the cost.
    pub fn condensed_qp(&self, x: &DVector<f64>) -> (QpData, f64) {
        let c = &self.condensed;
        let g = &c.f_mat * x;
        let b = &c.b0 - &c.e_mat * x;
        let constant = x.dot(&(&c.y_mat * x));
        (QpData::new(c.hess.clone(), g, c.a_ineq.clone(), b), constant)
    }

    pub fn solve(&self, x: &DVector<f64>) -> Result<PolicyEval> {
        self.solve_warm(x, None)
    }

    /// `u_mpc(x)` and `v_mpc(x)`; an infeasible state is reported through the
    /// `feasible` flag, never as an error.
    pub fn solve_warm(&self, x: &DVector<f64>, warm: Option<&DVector<f64>>) -> Result<PolicyEval> {
        if x.len() != self.nx() {
            return Err(Error::Dimension { expected: self.nx(), got: x.len() });
        }
        let nu = self.nu();
        let nz = nu * self.horizon;
        let infeasible = || PolicyEval {
            u: DVector::zeros(nu),
            v: f64::INFINITY,
            feasible: false,
            sequence: DVector::zeros(nz),
            duals: DVector::zeros(self.condensed.b0.len()),
        };
        if !x.iter().all(|v| v.is_finite()) || !self.x_set.contains(x, 1e-12)? {
            return Ok(infeasible());
        }
        let (qp_data, constant) = self.condensed_qp(x);
        let sol = qp::solve_qp(&qp_data, warm).map_err(|e| e.context("MPC condensed QP"))?;
        match sol.status {
            QpStatus::Optimal => {
                let v = (sol.objective + constant).max(0.0);
                Ok(PolicyEval {
                    u: sol.z.rows(0, nu).into_owned(),
                    v,
                    feasible: true,
                    sequence: sol.z,
                    duals: sol.duals,
                })
            }
            QpStatus::Infeasible => Ok(infeasible()),
            QpStatus::MaxIter => Err(Error::Solver {
                iterations: sol.iterations,
                reason: "MPC condensed QP hit the iteration cap".into(),
            }),
        }
    }

    /// Gradient of `v_mpc` at `x` from the envelope theorem, given a feasible
    /// evaluation at `x`.
    pub fn value_gradient(&self, x: &DVector<f64>, eval: &PolicyEval) -> DVector<f64> {
        let c = &self.condensed;
        c.f_mat.transpose() * &eval.sequence + &c.y_mat * x * 2.0 + c.e_mat.transpose() * &eval.duals
    }
}

impl Condensed {
    #[allow(clippy::too_many_arguments)]
    fn build(
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
        p: &DMatrix<f64>,
        horizon: usize,
        x_set: &Polytope,
        u_set: &Polytope,
        xf: &Polytope,
    ) -> Self {
        let nx = a.nrows();
        let nu = b.ncols();
        let n = horizon;
        let nz = nu * n;

        // powers[k] = A^k
        let mut powers = vec![DMatrix::identity(nx, nx)];
        for k in 1..=n {
            powers.push(&powers[k - 1] * a);
        }
        let mut phi = DMatrix::zeros((n + 1) * nx, nx);
        let mut gamma = DMatrix::zeros((n + 1) * nx, nz);
        for k in 0..=n {
            phi.view_mut((k * nx, 0), (nx, nx)).copy_from(&powers[k]);
            for j in 0..k {
                let blk = &powers[k - 1 - j] * b;
                gamma.view_mut((k * nx, j * nu), (nx, nu)).copy_from(&blk);
            }
        }
        let mut qbar = DMatrix::zeros((n + 1) * nx, (n + 1) * nx);
        for k in 0..n {
            qbar.view_mut((k * nx, k * nx), (nx, nx)).copy_from(q);
        }
        qbar.view_mut((n * nx, n * nx), (nx, nx)).copy_from(p);
        let mut rbar = DMatrix::zeros(nz, nz);
        for k in 0..n {
            rbar.view_mut((k * nu, k * nu), (nu, nu)).copy_from(r);
        }
        let gt_q = gamma.transpose() * &qbar;
        let hess = (&gt_q * &gamma + &rbar) * 2.0;
        let hess = (&hess + hess.transpose()) * 0.5;
        let f_mat = &gt_q * &phi * 2.0;
        let y_mat = phi.transpose() * &qbar * &phi;

        let mx = x_set.n_rows();
        let mu = u_set.n_rows();
        let mf = xf.n_rows();
        let rows = mx * (n - 1) + mu * n + mf;
        let mut a_ineq = DMatrix::zeros(rows, nz);
        let mut b0 = DVector::zeros(rows);
        let mut e_mat = DMatrix::zeros(rows, nx);
        let mut at = 0;
        for k in 1..n {
            let hx = x_set.h_mat();
            a_ineq.view_mut((at, 0), (mx, nz)).copy_from(&(hx * gamma.rows(k * nx, nx)));
            e_mat.view_mut((at, 0), (mx, nx)).copy_from(&(hx * &powers[k]));
            b0.rows_mut(at, mx).copy_from(x_set.h_vec());
            at += mx;
        }
        for k in 0..n {
            a_ineq.view_mut((at, k * nu), (mu, nu)).copy_from(u_set.h_mat());
            b0.rows_mut(at, mu).copy_from(u_set.h_vec());
            at += mu;
        }
        let hf = xf.h_mat();
        a_ineq.view_mut((at, 0), (mf, nz)).copy_from(&(hf * gamma.rows(n * nx, nx)));
        e_mat.view_mut((at, 0), (mf, nx)).copy_from(&(hf * &powers[n]));
        b0.rows_mut(at, mf).copy_from(xf.h_vec());

        Condensed {
            hess,
            f_mat,
            y_mat,
            a_ineq,
            b0,
            e_mat,
        }
    }
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}
