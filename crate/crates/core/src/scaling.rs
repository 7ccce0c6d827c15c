//! State-aware scaling for non-uniform error bounds.
//!
//! The allowed error grows with the state norm:
//!
//! ```text
//!     delta2(x) = lo            |x| <= lo/c8
//!                 c8 |x|        lo/c8 < |x| < hi/c8
//!                 hi            |x| >= hi/c8
//! ```
//!
//! A network fitted with uniform error `eps` to the rescaled target
//! `u(T^{-1}(y)) / beta` through the input map `T` recovers a policy whose
//! error is at most `delta2(x)`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BallRadius, Polytope};

const NORM_GUARD: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub c8: f64,
    pub delta_lo: f64,
    pub delta_hi: f64,
    pub eps: f64,
}

impl ScalingParams {
    pub fn new(c8: f64, delta_lo: f64, delta_hi: f64, eps: f64) -> Result<Self> {
        let p = ScalingParams { c8, delta_lo, delta_hi, eps };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.c8) || !ok(self.delta_lo) || !ok(self.delta_hi) {
            return Err(Error::Validation("scaling: c8, delta_lo and delta_hi must be positive".into()));
        }
        if self.delta_lo > self.delta_hi {
            return Err(Error::Validation(format!(
                "scaling: delta_lo ({}) exceeds delta_hi ({})",
                self.delta_lo, self.delta_hi
            )));
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(Error::Validation("scaling: eps must be nonnegative".into()));
        }
        Ok(())
    }

    /// Checks the tightening budget `eps <= delta_hi d(U) / (2 D(U))`.
    pub fn validate_for(&self, u_set: &Polytope) -> Result<()> {
        self.validate()?;
        let d = u_set.inradius().value();
        let big_d = u_set.radius()?.value();
        let cap = self.delta_hi * d / (2.0 * big_d);
        if self.eps > cap * (1.0 + 1e-12) {
            return Err(Error::Validation(format!("scaling: eps {} exceeds delta_hi d(U)/(2D(U)) = {cap}", self.eps)));
        }
        Ok(())
    }

    /// Inner and outer branch radii in state space.
    pub fn radii(&self) -> (f64, f64) {
        (self.delta_lo / self.c8, self.delta_hi / self.c8)
    }

    /// Radial offset of the outer branch, `(2 hi / c8) ln(hi / lo)`.
    pub fn offset(&self) -> f64 {
        2.0 * self.delta_hi / self.c8 * (self.delta_hi / self.delta_lo).ln()
    }

    /// Radius bound of `T(B(r))`: `r + offset`.
    pub fn image_radius(&self, r: f64) -> f64 {
        r + self.offset()
    }
}

fn direction(x: &DVector<f64>, n: f64) -> DVector<f64> {
    x / n.max(NORM_GUARD)
}

pub fn delta2(x: &DVector<f64>, p: &ScalingParams) -> f64 {
    let n = x.norm();
    let (r1, r2) = p.radii();
    if n <= r1 {
        p.delta_lo
    } else if n < r2 {
        p.c8 * n
    } else {
        p.delta_hi
    }
}

pub fn beta(x: &DVector<f64>, p: &ScalingParams) -> f64 {
    delta2(x, p) / p.delta_hi
}

pub fn t_forward(x: &DVector<f64>, p: &ScalingParams) -> DVector<f64> {
    let n = x.norm();
    let (r1, r2) = p.radii();
    if n <= r1 {
        x * (p.delta_hi / p.delta_lo)
    } else if n <= r2 {
        direction(x, n) * (r2 * (1.0 + 2.0 * (p.c8 * n / p.delta_lo).ln()))
    } else {
        x + direction(x, n) * p.offset()
    }
}

pub fn t_inverse(y: &DVector<f64>, p: &ScalingParams) -> DVector<f64> {
    let n = y.norm();
    let (r1, r2) = p.radii();
    let s2 = r2 * (1.0 + 2.0 * (p.delta_hi / p.delta_lo).ln());
    if n <= r2 {
        y * (p.delta_lo / p.delta_hi)
    } else if n <= s2 {
        direction(y, n) * (r1 * ((p.c8 * n / p.delta_hi - 1.0) / 2.0).exp())
    } else {
        y - direction(y, n) * p.offset()
    }
}

/// `Pi_{U'(eps beta)}(u) / beta`, the value the network is trained to fit.
pub fn scaled_target(x: &DVector<f64>, u: &DVector<f64>, p: &ScalingParams, u_set: &Polytope) -> Result<DVector<f64>> {
    let b = beta(x, p);
    let projected = project_tightened(u, p.eps * b, u_set)?;
    Ok(projected / b)
}

/// Projection onto `U'(eps)`; members are returned unchanged.
pub fn project_tightened(u: &DVector<f64>, eps: f64, u_set: &Polytope) -> Result<DVector<f64>> {
    let tight = u_set.tighten(BallRadius::new(eps)?)?;
    if tight.contains(u, 0.0)? {
        return Ok(u.clone());
    }
    tight.project(u)
}

/// `u_nn(x) = net_out * beta(x)`.
pub fn recover_control(net_out: &DVector<f64>, x: &DVector<f64>, p: &ScalingParams) -> DVector<f64> {
    net_out * beta(x, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo() -> ScalingParams {
        ScalingParams::new(0.5, 0.3, 1.0, 0.0).unwrap()
    }

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn delta2_branches() {
        let p = demo();
        assert_eq!(delta2(&v1(0.4), &p), 0.3);
        assert!((delta2(&v1(1.0), &p) - 0.5).abs() < 1e-15);
        assert_eq!(delta2(&v1(3.0), &p), 1.0);
        assert!((beta(&v1(1.0), &p) - 0.5).abs() < 1e-15);
        assert!((beta(&v1(1e-9), &p) - 0.3).abs() < 1e-15);
        assert_eq!(beta(&v1(-2.5), &p), 1.0);
    }

    #[test]
    fn forward_boundary_values() {
        let p = demo();
        assert!((t_forward(&v1(0.3), &p)[0] - 1.0).abs() < 1e-15);
        // Both branches at |x| = 0.6.
        let inner: f64 = 0.6 / 0.3;
        let middle = 2.0 * (1.0 + 2.0 * (0.5f64 * 0.6 / 0.3).ln());
        assert!((inner - 2.0).abs() < 1e-12 && (middle - 2.0).abs() < 1e-12);
        assert!((t_forward(&v1(0.6), &p).norm() - 2.0).abs() < 1e-12);
        let outer: f64 = 2.0 + 4.0 * (10.0f64 / 3.0).ln();
        assert!((outer - 6.8159).abs() < 1e-4);
        assert!((t_forward(&v1(2.0), &p).norm() - outer).abs() < 1e-12);
        assert!((t_forward(&v1(2.0 + 1e-12), &p).norm() - outer).abs() < 1e-9);
        assert_eq!(t_forward(&DVector::zeros(2), &p), DVector::zeros(2));
    }

    #[test]
    fn inverse_examples() {
        let p = demo();
        assert!((t_inverse(&v1(1.0), &p)[0] - 0.3).abs() < 1e-15);
        let outer: f64 = 2.0 + 4.0 * (10.0f64 / 3.0).ln();
        assert!((t_inverse(&v1(outer), &p)[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn scaled_target_without_tightening_divides_by_beta() {
        let p = demo();
        let u_set = Polytope::symmetric_box(&[2.0]).unwrap();
        let x = v1(0.1);
        let u = v1(0.7);
        let t = scaled_target(&x, &u, &p, &u_set).unwrap();
        assert!((t[0] - 0.7 / 0.3).abs() < 1e-15);
        let sat = scaled_target(&v1(5.0), &u, &p, &u_set).unwrap();
        assert_eq!(sat[0], 0.7);
    }

    #[test]
    fn scaled_target_projects_onto_tightened_set() {
        let p = ScalingParams::new(0.5, 0.3, 1.0, 0.2).unwrap();
        let u_set = Polytope::symmetric_box(&[1.0]).unwrap();
        // beta = 1: U'(0.2) = [-0.8, 0.8].
        let t = scaled_target(&v1(5.0), &v1(1.0), &p, &u_set).unwrap();
        assert!((t[0] - 0.8).abs() < 1e-9);
        assert!(p.validate_for(&u_set).is_ok());
        let too_big = ScalingParams::new(0.5, 0.3, 1.0, 0.6).unwrap();
        assert!(too_big.validate_for(&u_set).is_err());
    }

    #[test]
    fn recover_examples() {
        let p = demo();
        assert!((recover_control(&v1(0.8), &v1(1.0), &p)[0] - 0.4).abs() < 1e-15);
        assert_eq!(recover_control(&v1(0.8), &v1(9.0), &p)[0], 0.8);
        assert_eq!(recover_control(&v1(0.0), &v1(0.2), &p)[0], 0.0);
    }

    #[test]
    fn rejects_inverted_thresholds() {
        assert!(ScalingParams::new(0.5, 2.0, 1.0, 0.0).is_err());
    }
}
