//! Polytopic C-sets in H-representation.
//!
//! A [`Polytope`] is `{z : Hz <= h}` with `h > 0`, so the origin is interior.
//! Tightening by a Euclidean ball shrinks each offset by `eps * ||H_i||`, which
//! is the exact Pontryagin difference for any H-representation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::lp::{self, LpOutcome};
use crate::qp::{self, QpData, QpStatus};

/// Largest dimension handled by vertex enumeration.
pub const MAX_ENUM_DIM: usize = 4;

/// KKT tolerance for projections.
pub const PROJECTION_KKT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    h_mat: DMatrix<f64>,
    h_vec: DVector<f64>,
}

/// Nonnegative radius of a ball centered at the origin.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct BallRadius(f64);

impl BallRadius {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value >= 0.0 {
            Ok(BallRadius(value))
        } else {
            Err(Error::Validation(format!("ball radius must be finite and >= 0, got {value}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Serialize, Deserialize)]
struct PolytopeJson {
    #[serde(rename = "H")]
    h_mat: Vec<Vec<f64>>,
    h: Vec<f64>,
}

impl Serialize for Polytope {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows = (0..self.h_mat.nrows())
            .map(|i| self.h_mat.row(i).iter().copied().collect())
            .collect();
        PolytopeJson {
            h_mat: rows,
            h: self.h_vec.iter().copied().collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Polytope {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = PolytopeJson::deserialize(d)?;
        let m = raw.h_mat.len();
        let n = raw.h_mat.first().map_or(0, Vec::len);
        if raw.h_mat.iter().any(|r| r.len() != n) {
            return Err(serde::de::Error::custom("ragged H matrix"));
        }
        let flat: Vec<f64> = raw.h_mat.into_iter().flatten().collect();
        Polytope::new(DMatrix::from_row_slice(m, n, &flat), DVector::from_vec(raw.h)).map_err(serde::de::Error::custom)
    }
}

impl Polytope {
    /// Validated C-set `{z : Hz <= h}`.
    pub fn new(h_mat: DMatrix<f64>, h_vec: DVector<f64>) -> Result<Self> {
        let p = Polytope { h_mat, h_vec };
        p.validate()?;
        Ok(p)
    }

    /// Axis-aligned box `{|z_i| <= bound_i}`.
    pub fn symmetric_box(bounds: &[f64]) -> Result<Self> {
        let n = bounds.len();
        let mut h_mat = DMatrix::zeros(2 * n, n);
        let mut h_vec = DVector::zeros(2 * n);
        for (i, &b) in bounds.iter().enumerate() {
            h_mat[(2 * i, i)] = 1.0;
            h_mat[(2 * i + 1, i)] = -1.0;
            h_vec[2 * i] = b;
            h_vec[2 * i + 1] = b;
        }
        Polytope::new(h_mat, h_vec)
    }

    /// Box `[lo_i, hi_i]` with `lo_i < 0 < hi_i`.
    pub fn boxed(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Dimension { expected: lo.len(), got: hi.len() });
        }
        let n = lo.len();
        let mut h_mat = DMatrix::zeros(2 * n, n);
        let mut h_vec = DVector::zeros(2 * n);
        for i in 0..n {
            h_mat[(2 * i, i)] = 1.0;
            h_mat[(2 * i + 1, i)] = -1.0;
            h_vec[2 * i] = hi[i];
            h_vec[2 * i + 1] = -lo[i];
        }
        Polytope::new(h_mat, h_vec)
    }

    pub(crate) fn from_parts_unchecked(h_mat: DMatrix<f64>, h_vec: DVector<f64>) -> Self {
        Polytope { h_mat, h_vec }
    }

    pub fn dim(&self) -> usize {
        self.h_mat.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.h_mat.nrows()
    }

    pub fn h_mat(&self) -> &DMatrix<f64> {
        &self.h_mat
    }

    pub fn h_vec(&self) -> &DVector<f64> {
        &self.h_vec
    }

    pub fn row_norms(&self) -> DVector<f64> {
        DVector::from_fn(self.n_rows(), |i, _| self.h_mat.row(i).norm())
    }

    pub fn validate(&self) -> Result<()> {
        let (m, n) = self.h_mat.shape();
        if n == 0 || m == 0 {
            return Err(Error::Validation("polytope needs at least one row and one column".into()));
        }
        if self.h_vec.len() != m {
            return Err(Error::Dimension { expected: m, got: self.h_vec.len() });
        }
        if self.h_mat.iter().chain(self.h_vec.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Validation("polytope has non-finite entries".into()));
        }
        for i in 0..m {
            if self.h_mat.row(i).norm() == 0.0 {
                return Err(Error::Validation(format!("row {i} of H is zero")));
            }
            if self.h_vec[i] <= 0.0 {
                return Err(Error::Validation(format!(
                    "h[{i}] = {} is not positive; origin must be interior",
                    self.h_vec[i]
                )));
            }
        }
        for j in 0..n {
            for sign in [1.0, -1.0] {
                let mut c = DVector::zeros(n);
                c[j] = sign;
                if lp::maximize(&c, &self.h_mat, &self.h_vec) == LpOutcome::Unbounded {
                    return Err(Error::Validation(format!("polytope is unbounded along axis {j}")));
                }
            }
        }
        Ok(())
    }

    /// Per-axis bounds `(lo, hi)` of the smallest enclosing box.
    pub fn bounding_box(&self) -> (DVector<f64>, DVector<f64>) {
        let n = self.dim();
        let mut lo = DVector::zeros(n);
        let mut hi = DVector::zeros(n);
        for j in 0..n {
            for (sign, out) in [(1.0, &mut hi), (-1.0, &mut lo)] {
                let mut c = DVector::zeros(n);
                c[j] = sign;
                if let LpOutcome::Optimal { value, .. } = lp::maximize(&c, &self.h_mat, &self.h_vec) {
                    out[j] = sign * value;
                }
            }
        }
        (lo, hi)
    }

    /// Support value `max c'z` over the set.
    pub fn support(&self, c: &DVector<f64>) -> f64 {
        match lp::maximize(c, &self.h_mat, &self.h_vec) {
            LpOutcome::Optimal { value, .. } => value,
            LpOutcome::Unbounded => f64::INFINITY,
        }
    }

    /// Inradius `d(P) = min_i h_i / ||H_i||`.
    pub fn inradius(&self) -> BallRadius {
        let norms = self.row_norms();
        BallRadius(
            self.h_vec
                .iter()
                .zip(norms.iter())
                .map(|(h, n)| h / n)
                .fold(f64::INFINITY, f64::min),
        )
    }

    /// Vertices by brute-force enumeration of all `dim`-row active subsets.
    pub fn vertices(&self) -> Result<Vec<DVector<f64>>> {
        let n = self.dim();
        if n > MAX_ENUM_DIM {
            return Err(Error::UnsupportedDimension { dim: n, max: MAX_ENUM_DIM });
        }
        let m = self.n_rows();
        let mut out: Vec<DVector<f64>> = Vec::new();
        for subset in combinations(m, n) {
            let a = DMatrix::from_fn(n, n, |r, c| self.h_mat[(subset[r], c)]);
            let b = DVector::from_fn(n, |r, _| self.h_vec[subset[r]]);
            let lu = a.lu();
            if !lu.is_invertible() {
                continue;
            }
            let Some(v) = lu.solve(&b) else { continue };
            let scale = 1.0 + v.amax();
            if !v.iter().all(|x| x.is_finite()) {
                continue;
            }
            let feasible = (&self.h_mat * &v - &self.h_vec).iter().all(|&s| s <= 1e-9 * scale);
            if feasible && !out.iter().any(|w| (w - &v).amax() <= 1e-9 * scale) {
                out.push(v);
            }
        }
        Ok(out)
    }

    /// Radius `D(P) = max ||z||`, attained at a vertex.
    pub fn radius(&self) -> Result<BallRadius> {
        let vs = self.vertices()?;
        Ok(BallRadius(vs.iter().map(|v| v.norm()).fold(0.0, f64::max)))
    }

    /// Pontryagin difference with the ball of radius `eps`.
    pub fn tighten(&self, eps: BallRadius) -> Result<Polytope> {
        let d = self.inradius();
        if eps.0 >= d.0 {
            return Err(Error::EmptyInterior { eps: eps.0, inradius: d.0 });
        }
        let h_vec = &self.h_vec - self.row_norms() * eps.0;
        Ok(Polytope {
            h_mat: self.h_mat.clone(),
            h_vec,
        })
    }

    pub fn contains(&self, z: &DVector<f64>, tol: f64) -> Result<bool> {
        self.check_dim(z)?;
        let lhs = &self.h_mat * z;
        let norms = self.row_norms();
        Ok((0..self.n_rows()).all(|i| lhs[i] <= self.h_vec[i] + tol * norms[i]))
    }

    /// Largest scaled violation `max_i (H_i z - h_i) / ||H_i||`; negative inside.
    pub fn signed_distance_bound(&self, z: &DVector<f64>) -> f64 {
        let lhs = &self.h_mat * z;
        let norms = self.row_norms();
        (0..self.n_rows())
            .map(|i| (lhs[i] - self.h_vec[i]) / norms[i])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Euclidean projection of `z` onto the set.
    pub fn project(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(z)?;
        if self.contains(z, 0.0)? {
            return Ok(z.clone());
        }
        let n = self.dim();
        let q = QpData::new(DMatrix::identity(n, n) * 2.0, -z * 2.0, self.h_mat.clone(), self.h_vec.clone());
        let sol = qp::solve_qp(&q, None)?;
        match sol.status {
            QpStatus::Optimal => {}
            other => {
                return Err(Error::Solver {
                    iterations: sol.iterations,
                    reason: format!("projection ended with status {other:?}"),
                })
            }
        }
        let kkt = qp::kkt_residuals(&q, &sol);
        let scale = 1.0 + z.amax();
        if kkt.max() > PROJECTION_KKT_TOL * scale {
            return Err(Error::Solver {
                iterations: sol.iterations,
                reason: format!("projection KKT residual {:e} above tolerance", kkt.max()),
            });
        }
        Ok(sol.z)
    }

    /// `r(P, eps)`: the largest distance from a point of `P` to `P` tightened by
    /// `eps`. Distance to a convex set is convex, so the max sits at a vertex.
    pub fn max_projection_distance(&self, eps: BallRadius) -> Result<f64> {
        if self.dim() > MAX_ENUM_DIM {
            return Err(Error::UnsupportedDimension { dim: self.dim(), max: MAX_ENUM_DIM });
        }
        if eps.0 == 0.0 {
            return Ok(0.0);
        }
        let inner = self.tighten(eps)?;
        let mut r = 0.0f64;
        for v in self.vertices()? {
            let p = inner.project(&v)?;
            r = r.max((v - p).norm());
        }
        Ok(r)
    }

    fn check_dim(&self, z: &DVector<f64>) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: z.len() });
        }
        Ok(())
    }
}

/// All `k`-subsets of `0..m` in lexicographic order.
fn combinations(m: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > m {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        while i > 0 && idx[i - 1] == i - 1 + m - k {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}
