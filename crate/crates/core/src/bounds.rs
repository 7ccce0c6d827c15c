//! Width/depth arithmetic for certified ReLU approximations.
//!
//! A network of abstract size `(n_w', n_d')` is large enough when
//! `n_w'^2 n_d'^2 log3(n_w' + 2) >= rhs`, and it is realized by a concrete
//! ReLU network of width `n_w` and depth `n_d` (see [`realized_architecture`]).

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};

/// Log-space crossover for reporting.
pub const LOG_SPACE_THRESHOLD: f64 = 1e300;
pub const SHEN_CONSTANT: f64 = 131.0;
pub const RHS_CONSTANT: f64 = 524.0;

/// A right-hand side that may exceed `f64`; `value` is `inf` when it does.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rhs {
    pub value: f64,
    pub log10: f64,
}

impl Rhs {
    fn from_log10(log10: f64) -> Self {
        let value = 10f64.powf(log10);
        Rhs {
            value: if value > LOG_SPACE_THRESHOLD { f64::INFINITY } else { value },
            log10,
        }
    }
}

/// Parameters shared by both right-hand sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundGeometry {
    pub n_x: usize,
    pub n_u: usize,
    pub u_radius: f64,
    pub u_inradius: f64,
    pub xinv_radius: f64,
    pub l_u: f64,
}

impl BoundGeometry {
    fn validate(&self) -> Result<()> {
        if self.n_x == 0 || self.n_u == 0 {
            return Err(Error::Validation("n_x and n_u must be positive".into()));
        }
        for (name, v) in [
            ("D(U)", self.u_radius),
            ("d(U)", self.u_inradius),
            ("D(X_inv)", self.xinv_radius),
            ("L_u", self.l_u),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    fn log10_rhs(&self, radius: f64, delta: f64) -> f64 {
        let base = RHS_CONSTANT * ((self.n_x * self.n_u) as f64).sqrt() * self.u_radius * radius * self.l_u
            / (delta * self.u_inradius);
        self.n_x as f64 * base.log10()
    }
}

/// `(524 sqrt(n_x n_u) D(U) D(X_inv) L_u / (delta1 d(U)))^{n_x}` for a uniform
/// error `delta1 <= delta_bar`.
pub fn theorem1_rhs(delta1: f64, delta_bar: f64, g: &BoundGeometry) -> Result<Rhs> {
    g.validate()?;
    if !(delta1 > 0.0) {
        return Err(Error::Validation(format!("delta1 must be positive, got {delta1}")));
    }
    if delta1 > delta_bar {
        return Err(Error::Precondition(format!("delta1 = {delta1} exceeds delta_bar = {delta_bar}")));
    }
    Ok(Rhs::from_log10(g.log10_rhs(g.xinv_radius, delta1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Theorem2 {
    pub rhs: Rhs,
    pub delta_lo: f64,
    pub d2: f64,
}

/// Non-uniform right-hand side: `delta_lo = min{delta_bar, sqrt(c1/c6) d_target}`,
/// `D2 = D(X_inv) + (2 delta_bar / c8) ln(delta_bar / delta_lo)`, and the
/// uniform formula with `D2` and `delta_bar` in place of `D(X_inv)` and `delta1`.
pub fn theorem2_rhs(delta_bar: f64, c1: f64, c6: f64, c8: f64, d_target: f64, g: &BoundGeometry) -> Result<Theorem2> {
    if !(d_target > 0.0) {
        return Err(Error::Validation(format!("target set inradius must be positive, got {d_target}")));
    }
    if d_target > g.xinv_radius {
        return Err(Error::Precondition("target set is larger than X_inv".into()));
    }
    let delta_lo = delta_bar.min((c1 / c6).sqrt() * d_target);
    theorem2_rhs_at(delta_bar, delta_lo, c8, g)
}

/// Same as [`theorem2_rhs`] with `delta_lo` given directly.
pub fn theorem2_rhs_at(delta_bar: f64, delta_lo: f64, c8: f64, g: &BoundGeometry) -> Result<Theorem2> {
    g.validate()?;
    if !(delta_lo > 0.0 && delta_lo <= delta_bar && c8 > 0.0) {
        return Err(Error::Validation("need 0 < delta_lo <= delta_bar and c8 > 0".into()));
    }
    let d2 = g.xinv_radius + 2.0 * delta_bar / c8 * (delta_bar / delta_lo).ln();
    Ok(Theorem2 {
        rhs: Rhs::from_log10(g.log10_rhs(d2, delta_bar)),
        delta_lo,
        d2,
    })
}

fn capacity(n_w: u64, n_d: u64) -> f64 {
    let w = n_w as f64;
    let d = n_d as f64;
    w * w * d * d * ((w + 2.0).ln() / 3f64.ln())
}

/// Smallest `n_d'` with `capacity(n_w', n_d') >= rhs`.
pub fn min_depth(rhs: f64, n_w: u64) -> u64 {
    assert!(n_w >= 1);
    let per = capacity(n_w, 1);
    let mut d = ((rhs / per).sqrt().ceil() as u64).max(1);
    while d > 1 && capacity(n_w, d - 1) >= rhs {
        d -= 1;
    }
    while capacity(n_w, d) < rhs {
        d += 1;
    }
    d
}

/// For each `n_w' = 1..=max_width`, the minimal feasible depth.
pub fn feasible_pairs(rhs: f64, max_width: u64) -> Result<Vec<(u64, u64)>> {
    if !(rhs > 0.0 && rhs.is_finite()) {
        return Err(Error::Validation(format!("rhs must be positive and finite, got {rhs}")));
    }
    Ok((1..=max_width).map(|w| (w, min_depth(rhs, w))).collect())
}

/// Largest `r` with `r^k <= n`.
pub fn integer_root(n: u64, k: u32) -> u64 {
    assert!(k >= 1);
    if n < 2 || k == 1 {
        return n;
    }
    let (mut lo, mut hi) = (1u64, 1u64 << 64u32.div_ceil(k).min(63));
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        match mid.checked_pow(k) {
            Some(p) if p <= n => lo = mid,
            _ => hi = mid - 1,
        }
    }
    lo
}

/// `n_w = n_u 3^{n_x+3} max{n_x floor(n_w'^{1/n_x}), n_w' + 2}`, `n_d = 11 n_d' + 19 + 2 n_x`.
pub fn realized_architecture(n_w_prime: u64, n_d_prime: u64, n_x: u32, n_u: u64) -> Result<(u64, u64)> {
    if n_w_prime == 0 || n_d_prime == 0 || n_x == 0 || n_u == 0 {
        return Err(Error::Validation("architecture arguments must be positive".into()));
    }
    let overflow = || Error::Validation("realized width overflows u64".into());
    let root = integer_root(n_w_prime, n_x);
    let inner = (n_x as u64 * root).max(n_w_prime + 2);
    let n_w = 3u64
        .checked_pow(n_x + 3)
        .and_then(|p| p.checked_mul(n_u))
        .and_then(|p| p.checked_mul(inner))
        .ok_or_else(overflow)?;
    let n_d = 11 * n_d_prime + 19 + 2 * n_x as u64;
    Ok((n_w, n_d))
}

/// Uniform error guarantee `131 sqrt(n_x) L_f (N^2 L^2 log3(N+2))^{-1/n_x}`
/// of a width-`N` depth-`L` approximant on the unit cube.
pub fn shen_error(width: u64, depth: u64, n_x: usize, l_f: f64) -> f64 {
    SHEN_CONSTANT * (n_x as f64).sqrt() * l_f * capacity(width, depth).powf(-1.0 / n_x as f64)
}

/// Affine map of the cube `[-D, D]^n` onto `[0, 1]^n`.
pub fn normalize_domain(x: &DVector<f64>, radius: f64) -> Result<DVector<f64>> {
    if x.amax() > radius * (1.0 + 1e-12) {
        return Err(Error::Validation(format!("state {} outside the cube of half-width {radius}", x.amax())));
    }
    Ok(x.map(|v| v / (2.0 * radius) + 0.5))
}

/// Inverse of [`normalize_domain`]: `2D (y - 1/2)`.
pub fn denormalize_domain(y: &DVector<f64>, radius: f64) -> DVector<f64> {
    y.map(|v| 2.0 * radius * (v - 0.5))
}
