//! Covariate feature maps `phi: X -> R^q`.
//!
//! Two families are provided:
//!
//! * **Linear**: intercept followed by the raw coordinates, `q = d + 1`.
//! * **Additive cubic spline**: a global intercept plus one degree-3 B-spline
//!   block per coordinate over a clamped, equally spaced knot vector. Each
//!   block's first function is dropped so the additive design stays full rank
//!   alongside the intercept, giving `q = 1 + d (m + 3)` for `m` internal
//!   knots per dimension.
//!
//! Evaluation is pure and allocation-light; the spline recursion touches only
//! the four functions that are nonzero at the query point.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points at most this far outside the support are clamped to the boundary;
/// anything farther is an error.
pub const SUPPORT_CLAMP_TOLERANCE: f64 = 1e-9;

const DEGREE: usize = 3;

/// Feature-map family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    Linear,
    AdditiveCubicSpline,
}

/// A concrete feature map: family, input dimension, and (for splines) the
/// per-dimension support and knot vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    kind: BasisKind,
    dim_x: usize,
    /// Per-dimension support interval; empty for the linear family, which is
    /// defined on all of R^d.
    support: Vec<(f64, f64)>,
    /// Per-dimension clamped knot vector:
    /// `lo` repeated degree+1 times, the internal knots, `hi` repeated
    /// degree+1 times. Internal knots are strictly increasing and strictly
    /// inside the support.
    padded_knots: Vec<Vec<f64>>,
}

impl BasisSpec {
    /// Intercept plus raw coordinates; `q = dim_x + 1`. Accepts `dim_x = 0`
    /// (intercept-only model).
    pub fn linear(dim_x: usize) -> Self {
        BasisSpec {
            kind: BasisKind::Linear,
            dim_x,
            support: Vec::new(),
            padded_knots: Vec::new(),
        }
    }

    /// Additive cubic-spline basis with `internal_knots` equally spaced knots
    /// strictly inside each dimension's support interval.
    ///
    /// Requires `dim_x >= 1`, `internal_knots >= 1`, and one finite,
    /// non-degenerate `(lo, hi)` interval per dimension.
    pub fn additive_cubic_spline(
        dim_x: usize,
        internal_knots: usize,
        support: &[(f64, f64)],
    ) -> Result<Self> {
        if dim_x == 0 {
            return Err(Error::InvalidParam(
                "spline basis requires at least one covariate dimension".into(),
            ));
        }
        if internal_knots == 0 {
            return Err(Error::InvalidParam(
                "spline basis requires at least one internal knot".into(),
            ));
        }
        if support.len() != dim_x {
            return Err(Error::DimensionMismatch {
                expected: dim_x,
                got: support.len(),
            });
        }
        let mut padded_knots = Vec::with_capacity(dim_x);
        for (dim, &(lo, hi)) in support.iter().enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::NonFinite {
                    what: "support bound",
                });
            }
            if lo >= hi {
                return Err(Error::InvalidParam(format!(
                    "degenerate support [{lo}, {hi}] in dimension {dim}"
                )));
            }
            let m = internal_knots;
            let step = (hi - lo) / (m as f64 + 1.0);
            let mut t = Vec::with_capacity(m + 2 * (DEGREE + 1));
            t.extend([lo; DEGREE + 1]);
            for i in 1..=m {
                t.push(lo + step * i as f64);
            }
            t.extend([hi; DEGREE + 1]);
            padded_knots.push(t);
        }
        Ok(BasisSpec {
            kind: BasisKind::AdditiveCubicSpline,
            dim_x,
            support: support.to_vec(),
            padded_knots,
        })
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    /// Per-dimension support intervals (empty for the linear family).
    pub fn support(&self) -> &[(f64, f64)] {
        &self.support
    }

    /// Internal knots of one dimension (spline family only).
    pub fn internal_knots(&self, dim: usize) -> &[f64] {
        let t = &self.padded_knots[dim];
        &t[DEGREE + 1..t.len() - DEGREE - 1]
    }

    fn internal_knot_count(&self) -> usize {
        match self.kind {
            BasisKind::Linear => 0,
            BasisKind::AdditiveCubicSpline => {
                self.padded_knots[0].len() - 2 * (DEGREE + 1)
            }
        }
    }

    /// Number of output features `q`.
    pub fn output_dim(&self) -> usize {
        match self.kind {
            BasisKind::Linear => self.dim_x + 1,
            BasisKind::AdditiveCubicSpline => {
                1 + self.dim_x * (self.internal_knot_count() + DEGREE)
            }
        }
    }

    /// Evaluates the feature map at `x`.
    ///
    /// The first output coordinate is always the intercept 1. Spline inputs
    /// within [`SUPPORT_CLAMP_TOLERANCE`] outside the support are clamped to
    /// the boundary; farther points error. Evaluation has no hidden state:
    /// equal inputs produce bitwise-equal outputs.
    pub fn eval(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.dim_x {
            return Err(Error::DimensionMismatch {
                expected: self.dim_x,
                got: x.len(),
            });
        }
        for &v in x {
            if !v.is_finite() {
                return Err(Error::NonFinite { what: "covariate" });
            }
        }
        match self.kind {
            BasisKind::Linear => {
                let mut out = DVector::zeros(self.dim_x + 1);
                out[0] = 1.0;
                for (j, &v) in x.iter().enumerate() {
                    out[j + 1] = v;
                }
                Ok(out)
            }
            BasisKind::AdditiveCubicSpline => {
                let m = self.internal_knot_count();
                let block = m + DEGREE;
                let mut out = DVector::zeros(self.output_dim());
                out[0] = 1.0;
                for (j, &raw) in x.iter().enumerate() {
                    let (lo, hi) = self.support[j];
                    let u = clamp_to_support(raw, lo, hi, j)?;
                    let t = &self.padded_knots[j];
                    let n_basis = m + DEGREE + 1;
                    let span = find_span(t, n_basis, u);
                    let vals = basis_funs(t, span, u);
                    for (r, &v) in vals.iter().enumerate() {
                        let idx = span - DEGREE + r;
                        // Function 0 of each block is dropped for full rank.
                        if idx >= 1 {
                            out[1 + j * block + (idx - 1)] = v;
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    /// All `m + degree + 1` spline functions of one dimension, without the
    /// rank-one drop. Used by tests to check the partition of unity.
    #[cfg(test)]
    pub(crate) fn eval_block_full(&self, dim: usize, raw: f64) -> Result<Vec<f64>> {
        let m = self.internal_knot_count();
        let (lo, hi) = self.support[dim];
        let u = clamp_to_support(raw, lo, hi, dim)?;
        let t = &self.padded_knots[dim];
        let n_basis = m + DEGREE + 1;
        let span = find_span(t, n_basis, u);
        let vals = basis_funs(t, span, u);
        let mut out = vec![0.0; n_basis];
        for (r, &v) in vals.iter().enumerate() {
            out[span - DEGREE + r] = v;
        }
        Ok(out)
    }
}

fn clamp_to_support(raw: f64, lo: f64, hi: f64, dim: usize) -> Result<f64> {
    if raw < lo {
        if lo - raw <= SUPPORT_CLAMP_TOLERANCE {
            Ok(lo)
        } else {
            Err(Error::OutsideSupport {
                dim,
                value: raw,
                lo,
                hi,
            })
        }
    } else if raw > hi {
        if raw - hi <= SUPPORT_CLAMP_TOLERANCE {
            Ok(hi)
        } else {
            Err(Error::OutsideSupport {
                dim,
                value: raw,
                lo,
                hi,
            })
        }
    } else {
        Ok(raw)
    }
}

/// Index of the knot span containing `u`: the unique `s` in
/// `[degree, n_basis - 1]` with `t[s] <= u < t[s+1]`, except that the right
/// endpoint maps into the last span.
fn find_span(t: &[f64], n_basis: usize, u: f64) -> usize {
    if u >= t[n_basis] {
        return n_basis - 1;
    }
    if u <= t[DEGREE] {
        return DEGREE;
    }
    let (mut lo, mut hi) = (DEGREE, n_basis);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if u < t[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// The degree+1 B-spline functions that are nonzero on span `span`, by the
/// Cox-de Boor recursion. Entry `r` is function `span - degree + r`.
fn basis_funs(t: &[f64], span: usize, u: f64) -> [f64; DEGREE + 1] {
    let mut n = [0.0; DEGREE + 1];
    let mut left = [0.0; DEGREE + 1];
    let mut right = [0.0; DEGREE + 1];
    n[0] = 1.0;
    for j in 1..=DEGREE {
        left[j] = u - t[span + 1 - j];
        right[j] = t[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    n
}
