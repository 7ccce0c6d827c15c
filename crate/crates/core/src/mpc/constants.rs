//! Sampled estimation of the stability and certification constants.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{spectral_norm, MpcProblem};
use crate::error::{Error, Result};
use crate::geometry::Polytope;

const GAMMA_BISECTIONS: usize = 64;
const MIN_NORM: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConstantsJson", into = "ConstantsJson")]
pub struct Constants {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
    pub c7: f64,
    pub c8: f64,
    pub gamma: f64,
    pub l_u: f64,
    pub delta_bar: f64,
    /// `D(U)` and `d(U)`.
    pub u_radius: f64,
    pub u_inradius: f64,
    /// Upper estimate of `D(X_inv)`, capped by `D(X)`.
    pub xinv_radius: f64,
    pub safety: f64,
    pub n_samples: usize,
    pub n_feasible: usize,
    pub n_inv: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Source {
    Analytic,
    Estimated,
    Derived,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Tagged {
    value: f64,
    source: Source,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ConstantsJson {
    c0: Tagged,
    c1: Tagged,
    c2: Tagged,
    c3: Tagged,
    c4: Tagged,
    c5: Tagged,
    c6: Tagged,
    c7: Tagged,
    c8: Tagged,
    gamma: Tagged,
    #[serde(rename = "L_u")]
    l_u: Tagged,
    delta_bar: Tagged,
    #[serde(rename = "D_U")]
    u_radius: Tagged,
    #[serde(rename = "d_U")]
    u_inradius: Tagged,
    #[serde(rename = "D_Xinv")]
    xinv_radius: Tagged,
    safety: f64,
    n_samples: usize,
    n_feasible: usize,
    n_inv: usize,
    seed: u64,
}

impl From<Constants> for ConstantsJson {
    fn from(c: Constants) -> Self {
        let t = |value, source| Tagged { value, source };
        use Source::*;
        ConstantsJson {
            c0: t(c.c0, Estimated),
            c1: t(c.c1, Analytic),
            c2: t(c.c2, Estimated),
            c3: t(c.c3, Analytic),
            c4: t(c.c4, Derived),
            c5: t(c.c5, Derived),
            c6: t(c.c6, Derived),
            c7: t(c.c7, Derived),
            c8: t(c.c8, Derived),
            gamma: t(c.gamma, Estimated),
            l_u: t(c.l_u, Estimated),
            delta_bar: t(c.delta_bar, Derived),
            u_radius: t(c.u_radius, Analytic),
            u_inradius: t(c.u_inradius, Analytic),
            xinv_radius: t(c.xinv_radius, Estimated),
            safety: c.safety,
            n_samples: c.n_samples,
            n_feasible: c.n_feasible,
            n_inv: c.n_inv,
            seed: c.seed,
        }
    }
}

impl TryFrom<ConstantsJson> for Constants {
    type Error = Error;

    fn try_from(j: ConstantsJson) -> Result<Self> {
        let c = Constants {
            c0: j.c0.value,
            c1: j.c1.value,
            c2: j.c2.value,
            c3: j.c3.value,
            c4: j.c4.value,
            c5: j.c5.value,
            c6: j.c6.value,
            c7: j.c7.value,
            c8: j.c8.value,
            gamma: j.gamma.value,
            l_u: j.l_u.value,
            delta_bar: j.delta_bar.value,
            u_radius: j.u_radius.value,
            u_inradius: j.u_inradius.value,
            xinv_radius: j.xinv_radius.value,
            safety: j.safety,
            n_samples: j.n_samples,
            n_feasible: j.n_feasible,
            n_inv: j.n_inv,
            seed: j.seed,
        };
        c.validate()?;
        Ok(c)
    }
}

impl Constants {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("c0", self.c0),
            ("c1", self.c1),
            ("c2", self.c2),
            ("c3", self.c3),
            ("c4", self.c4),
            ("c5", self.c5),
            ("c6", self.c6),
            ("c7", self.c7),
            ("c8", self.c8),
            ("gamma", self.gamma),
            ("L_u", self.l_u),
            ("delta_bar", self.delta_bar),
            ("D_U", self.u_radius),
            ("d_U", self.u_inradius),
            ("D_Xinv", self.xinv_radius),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("constant {name} must be positive and finite, got {v}")));
            }
        }
        if self.c1 > self.c2 || self.c3 > self.c2 {
            return Err(Error::Validation("constants must satisfy c1 <= c2 and c3 <= c2".into()));
        }
        Ok(())
    }

    /// Recompute `c4..c8` and `delta_bar` from `c0..c3`, `L_u`, `gamma` and
    /// the geometry of `U`.
    pub fn rederive(&mut self, prob: &MpcProblem) -> Result<()> {
        let norm_a = spectral_norm(prob.a());
        let norm_b = spectral_norm(prob.b());
        let (c1, c2, c3) = (self.c1, self.c2, self.c3);
        self.c4 = self.c0 * (norm_a + self.l_u * norm_b) * norm_b;
        self.c5 = self.c0 * norm_b * norm_b;
        if !(self.c5 > 0.0) {
            return Err(Error::Certification("c5 = c0 |B|^2 vanishes; no positive c8 exists".into()));
        }
        self.c6 = c6_closed_form(c1, c2, c3, self.c4, self.c5);
        self.c7 = c7_closed_form(c1, c2, c3, self.c4, self.c5);
        self.c8 = c8_closed_form(c1, c2, c3, self.c4, self.c5);
        if !(self.c8 > 0.0) {
            return Err(Error::Certification(format!("c8 bound is nonpositive ({})", self.c8)));
        }
        self.delta_bar = (self.c7 * self.u_inradius * self.gamma.sqrt() / (2.0 * self.u_radius)).min(self.u_inradius);
        self.validate().map_err(|e| Error::Estimation(e.to_string()))
    }

    /// `delta_bar' = c7 sqrt(gamma)`, the strict upper limit on a uniform error.
    pub fn delta_limit(&self) -> f64 {
        self.c7 * self.gamma.sqrt()
    }

    /// One step of `a+ = (1 - c3/c2) a + c4 sqrt(a/c1) delta + c5 delta^2`.
    pub fn lyapunov_step(&self, a: f64, delta: f64) -> f64 {
        (1.0 - self.c3 / self.c2) * a + self.c4 * (a / self.c1).sqrt() * delta + self.c5 * delta * delta
    }

    /// Radius of the uniform-error target ball `sqrt(c6/c1) delta`.
    pub fn target_radius(&self, delta: f64) -> f64 {
        (self.c6 / self.c1).sqrt() * delta
    }
}

/// Fixed point of the Lyapunov recursion divided by `delta^2`.
pub fn c6_closed_form(c1: f64, c2: f64, c3: f64, c4: f64, c5: f64) -> f64 {
    let k = 4.0 * c1 * c3 * c5 / c2;
    c2 * c2 * (c4 * c4 + 0.5 * k + c4 * (c4 * c4 + k).sqrt()) / (2.0 * c1 * c3 * c3)
}

pub fn c7_closed_form(c1: f64, c2: f64, c3: f64, c4: f64, c5: f64) -> f64 {
    ((c4 * c4 + 4.0 * c1 * c3 * c5 / c2).sqrt() - c4) / (2.0 * c5 * c1.sqrt())
}

/// 0.9 times the positive root of `c4 s + c5 s^2 = c1 c3 / c2`.
pub fn c8_closed_form(c1: f64, c2: f64, c3: f64, c4: f64, c5: f64) -> f64 {
    0.9 * (-c4 + (c4 * c4 + 4.0 * c5 * c1 * c3 / c2).sqrt()) / (2.0 * c5)
}

#[derive(Debug, Clone)]
struct Sample {
    x: DVector<f64>,
    feasible: bool,
    v: f64,
    u: DVector<f64>,
    v_next: f64,
    next_feasible: bool,
    grad_ratio: f64,
    jac_norm: f64,
}

fn radius_upper(set: &Polytope) -> Result<f64> {
    if set.dim() <= crate::geometry::MAX_ENUM_DIM {
        Ok(set.radius()?.value())
    } else {
        let (lo, hi) = set.bounding_box();
        Ok(lo.zip_map(&hi, |l, h| l.abs().max(h.abs())).norm())
    }
}

fn sample_box(lo: &DVector<f64>, hi: &DVector<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(lo.len(), |i, _| lo[i] + (hi[i] - lo[i]) * rng.random::<f64>())
}

fn evaluate(prob: &MpcProblem, x: DVector<f64>, fd_step: f64) -> Result<Sample> {
    let e = prob.solve(&x)?;
    let nu = prob.nu();
    if !e.feasible {
        return Ok(Sample {
            x,
            feasible: false,
            v: f64::INFINITY,
            u: DVector::zeros(nu),
            v_next: f64::INFINITY,
            next_feasible: false,
            grad_ratio: 0.0,
            jac_norm: 0.0,
        });
    }
    let xn = prob.step(&x, &e.u);
    let en = prob.solve_warm(&xn, Some(&shift(&e.sequence, nu)))?;
    let norm = x.norm();
    let grad_ratio = if norm >= MIN_NORM { prob.value_gradient(&x, &e).norm() / norm } else { 0.0 };

    let nx = prob.nx();
    let mut jac = DMatrix::zeros(nu, nx);
    let mut jac_ok = true;
    for j in 0..nx {
        let mut xp = x.clone();
        xp[j] += fd_step;
        let mut xm = x.clone();
        xm[j] -= fd_step;
        let ep = prob.solve_warm(&xp, Some(&e.sequence))?;
        let em = prob.solve_warm(&xm, Some(&e.sequence))?;
        if !(ep.feasible && em.feasible) {
            jac_ok = false;
            break;
        }
        jac.set_column(j, &((ep.u - em.u) / (2.0 * fd_step)));
    }
    Ok(Sample {
        x,
        feasible: true,
        v: e.v,
        u: e.u,
        v_next: en.v,
        next_feasible: en.feasible,
        grad_ratio,
        jac_norm: if jac_ok { spectral_norm(&jac) } else { 0.0 },
    })
}

/// Shifted warm start `[u_1, ..., u_{N-1}, 0]`.
fn shift(seq: &DVector<f64>, nu: usize) -> DVector<f64> {
    let n = seq.len();
    let mut out = DVector::zeros(n);
    out.rows_mut(0, n - nu).copy_from(&seq.rows(nu, n - nu));
    out
}

fn invariant_at(samples: &[&Sample], gamma: f64) -> bool {
    samples
        .iter()
        .filter(|s| s.v <= gamma)
        .all(|s| s.next_feasible && s.v_next <= gamma)
}

/// Estimate all constants from `n_samples` uniform draws over the bounding
/// box of `X`. Sample `i` uses its own generator seeded with `seed + i`.
pub fn estimate_constants(prob: &MpcProblem, n_samples: usize, seed: u64, safety: f64) -> Result<Constants> {
    if n_samples < 1000 {
        return Err(Error::Precondition(format!("n_samples must be at least 1000, got {n_samples}")));
    }
    if !(safety.is_finite() && safety >= 1.0) {
        return Err(Error::Precondition(format!("safety factor must be >= 1, got {safety}")));
    }
    let x_set = prob.x_set();
    let (lo, hi) = x_set.bounding_box();
    let x_radius = radius_upper(x_set)?;
    let fd_step = 1e-4 * x_radius;

    let samples: Vec<Sample> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            evaluate(prob, sample_box(&lo, &hi, &mut rng), fd_step)
        })
        .collect::<Result<_>>()?;

    let feasible: Vec<&Sample> = samples.iter().filter(|s| s.feasible).collect();
    if feasible.is_empty() {
        return Err(Error::Estimation("no feasible samples".into()));
    }

    let v_max = feasible.iter().map(|s| s.v).fold(0.0, f64::max);
    let gamma = if invariant_at(&feasible, v_max) {
        v_max
    } else {
        let (mut lo_g, mut hi_g) = (0.0, v_max);
        for _ in 0..GAMMA_BISECTIONS {
            let mid = 0.5 * (lo_g + hi_g);
            if invariant_at(&feasible, mid) {
                lo_g = mid;
            } else {
                hi_g = mid;
            }
        }
        lo_g
    };
    if gamma <= 0.0 {
        return Err(Error::Estimation("sampled sublevel set collapsed to the origin".into()));
    }
    let inv: Vec<&Sample> = feasible.iter().copied().filter(|s| s.v <= gamma).collect();

    let q_min = prob.q().clone().symmetric_eigenvalues().min();
    let (c1, c3) = (q_min, q_min);
    if c1 <= 0.0 {
        return Err(Error::Certification("lambda_min(Q) must be positive".into()));
    }

    let mut c2_raw: f64 = 0.0;
    let mut c0_raw: f64 = 0.0;
    let mut lu_raw: f64 = 0.0;
    let mut xinv_raw: f64 = 0.0;
    for s in &inv {
        let n = s.x.norm();
        xinv_raw = xinv_raw.max(n);
        if n >= MIN_NORM {
            c2_raw = c2_raw.max(s.v / (n * n));
        }
        c0_raw = c0_raw.max(s.grad_ratio);
        lu_raw = lu_raw.max(s.jac_norm);
    }
    for w in inv.windows(2) {
        let (a, b) = (w[0], w[1]);
        let d = (&a.x - &b.x).norm();
        let m = a.x.norm().max(b.x.norm());
        if d >= MIN_NORM && m >= MIN_NORM {
            c0_raw = c0_raw.max((a.v - b.v).abs() / (m * d));
            lu_raw = lu_raw.max((&a.u - &b.u).norm() / d);
        }
    }

    let u_radius = radius_upper(prob.u_set())?;
    let mut c = Constants {
        c0: safety * c0_raw,
        c1,
        c2: (safety * c2_raw).max(c1).max(c3),
        c3,
        c4: 0.0,
        c5: 0.0,
        c6: 0.0,
        c7: 0.0,
        c8: 0.0,
        gamma,
        l_u: safety * lu_raw,
        delta_bar: 0.0,
        u_radius,
        u_inradius: prob.u_set().inradius().value(),
        xinv_radius: (safety * xinv_raw).min(x_radius),
        safety,
        n_samples,
        n_feasible: feasible.len(),
        n_inv: inv.len(),
        seed,
    };
    c.rederive(prob)?;
    Ok(c)
}

/// `x` lies in the sampled invariant sublevel set `V(gamma)`.
pub fn in_sublevel(prob: &MpcProblem, constants: &Constants, x: &DVector<f64>) -> bool {
    match prob.solve(x) {
        Ok(e) => e.feasible && e.v <= constants.gamma,
        Err(_) => false,
    }
}
