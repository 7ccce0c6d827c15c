//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relu_mpc::geometry::Polytope;
use relu_mpc::mpc::MpcProblem;
use relu_mpc::qp::{solve_qp, QpData, QpStatus};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random bounded polytope in `dim` dimensions with the origin strictly
/// inside: a box plus a few random half-spaces.
pub fn random_polytope(rng: &mut ChaCha8Rng, dim: usize) -> Polytope {
    let extra = rng.random_range(0..4);
    let rows = 2 * dim + extra;
    let mut h = DMatrix::zeros(rows, dim);
    let mut b = DVector::zeros(rows);
    for j in 0..dim {
        h[(2 * j, j)] = 1.0;
        h[(2 * j + 1, j)] = -1.0;
        b[2 * j] = rng.random_range(0.5..3.0);
        b[2 * j + 1] = rng.random_range(0.5..3.0);
    }
    for i in 2 * dim..rows {
        for j in 0..dim {
            h[(i, j)] = rng.random_range(-1.0..1.0);
        }
        if h.row(i).norm() < 1e-3 {
            h[(i, 0)] = 1.0;
        }
        b[i] = rng.random_range(0.3..2.0) * h.row(i).norm();
    }
    Polytope::new(h, b).expect("random polytope is valid")
}

/// Exact solution of a small inequality-constrained QP by enumerating every
/// active set and keeping the KKT point.
pub fn enumerate_qp(h: &DMatrix<f64>, g: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let m = a.nrows();
    let n = g.len();
    assert!(m <= 16, "enumeration oracle is for small problems");
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let act: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        if act.len() > n {
            continue;
        }
        let k = act.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(h);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-g));
        for (r, &i) in act.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = a[(i, j)];
                kkt[(j, n + r)] = a[(i, j)];
            }
            rhs[n + r] = b[i];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let z = sol.rows(0, n).into_owned();
        let lam = sol.rows(n, k);
        if lam.iter().any(|&l| l < -1e-10) {
            continue;
        }
        if (a * &z - b).iter().any(|&r| r > 1e-9) {
            continue;
        }
        let obj = 0.5 * z.dot(&(h * &z)) + g.dot(&z);
        if best.as_ref().is_none_or(|(o, _)| obj < *o) {
            best = Some((obj, z));
        }
    }
    best.map(|(_, z)| z)
}

/// `v_mpc(x)` and `u_mpc(x)` from the sparse formulation: decision vector
/// `[x_1..x_N, u_0..u_{N-1}]` with the dynamics as equality constraints.
pub fn sparse_mpc(prob: &MpcProblem, x0: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let (nx, nu, n) = (prob.nx(), prob.nu(), prob.horizon());
    let ns = nx * n;
    let nv = ns + nu * n;
    let xi = |k: usize| (k - 1) * nx;
    let ui = |k: usize| ns + k * nu;

    let mut h = DMatrix::zeros(nv, nv);
    for k in 1..n {
        h.view_mut((xi(k), xi(k)), (nx, nx)).copy_from(&(prob.q() * 2.0));
    }
    h.view_mut((xi(n), xi(n)), (nx, nx)).copy_from(&(prob.p() * 2.0));
    for k in 0..n {
        h.view_mut((ui(k), ui(k)), (nu, nu)).copy_from(&(prob.r() * 2.0));
    }

    let mut a_eq = DMatrix::zeros(ns, nv);
    let mut b_eq = DVector::zeros(ns);
    for k in 0..n {
        let row = k * nx;
        a_eq.view_mut((row, xi(k + 1)), (nx, nx)).copy_from(&DMatrix::identity(nx, nx));
        a_eq.view_mut((row, ui(k)), (nx, nu)).copy_from(&(-prob.b()));
        if k == 0 {
            b_eq.rows_mut(row, nx).copy_from(&(prob.a() * x0));
        } else {
            a_eq.view_mut((row, xi(k)), (nx, nx)).copy_from(&(-prob.a()));
        }
    }

    let (hx, bx) = (prob.x_set().h_mat(), prob.x_set().h_vec());
    let (hu, bu) = (prob.u_set().h_mat(), prob.u_set().h_vec());
    let (hf, bf) = (prob.xf().h_mat(), prob.xf().h_vec());
    let rows = hx.nrows() * (n - 1) + hu.nrows() * n + hf.nrows();
    let mut a_in = DMatrix::zeros(rows, nv);
    let mut b_in = DVector::zeros(rows);
    let mut r = 0;
    for k in 1..n {
        a_in.view_mut((r, xi(k)), (hx.nrows(), nx)).copy_from(hx);
        b_in.rows_mut(r, hx.nrows()).copy_from(bx);
        r += hx.nrows();
    }
    for k in 0..n {
        a_in.view_mut((r, ui(k)), (hu.nrows(), nu)).copy_from(hu);
        b_in.rows_mut(r, hu.nrows()).copy_from(bu);
        r += hu.nrows();
    }
    a_in.view_mut((r, xi(n)), (hf.nrows(), nx)).copy_from(hf);
    b_in.rows_mut(r, hf.nrows()).copy_from(bf);

    if !prob.x_set().contains(x0, 1e-12).unwrap() {
        return None;
    }
    let q = QpData::new(h, DVector::zeros(nv), a_in, b_in).with_equalities(a_eq, b_eq);
    let sol = solve_qp(&q, None).expect("sparse QP solves");
    match sol.status {
        QpStatus::Optimal => {
            let v = sol.objective + x0.dot(&(prob.q() * x0));
            Some((sol.z.rows(ui(0), nu).into_owned(), v))
        }
        _ => None,
    }
}

/// Checks the projection optimality conditions at `p = proj(z)`: `p` in the
/// set and `z - p` a nonnegative combination of active normals. Returns the
/// worst residual.
pub fn projection_kkt_residual(set: &Polytope, z: &DVector<f64>, p: &DVector<f64>) -> f64 {
    let (a, b) = (set.h_mat(), set.h_vec());
    let slack = a * p - b;
    let primal = slack.iter().cloned().fold(0.0, f64::max);
    let d = z - p;
    if d.norm() <= 1e-12 {
        return primal;
    }
    let scale = 1.0 + d.norm();
    let active: Vec<usize> = (0..a.nrows()).filter(|&i| slack[i].abs() <= 1e-8 * scale).collect();
    let n = p.len();
    let mut best = f64::INFINITY;
    // Nonnegative least squares by brute force over subsets of size <= n.
    for mask in 1u32..(1 << active.len()) {
        let sub: Vec<usize> = active.iter().enumerate().filter(|(j, _)| mask & (1 << j) != 0).map(|(_, &i)| i).collect();
        if sub.len() > n {
            continue;
        }
        let at = DMatrix::from_fn(n, sub.len(), |r, c| a[(sub[c], r)]);
        let Ok(mu) = at.clone().svd(true, true).solve(&d, 1e-14) else { continue };
        if mu.iter().any(|&m| m < -1e-10) {
            continue;
        }
        best = best.min((&at * mu - &d).norm());
    }
    primal.max(best)
}

/// Central-difference gradient of `f` at `x`.
pub fn central_gradient<F: Fn(&DVector<f64>) -> f64>(f: F, x: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |j, _| {
        let mut xp = x.clone();
        xp[j] += h;
        let mut xm = x.clone();
        xm[j] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    })
}
