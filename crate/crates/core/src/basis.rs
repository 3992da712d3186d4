//! Clamped B-spline bases on `[0, 1]` with equidistant interior knots.
//!
//! The same construction backs the shared factors `η`, the individual factors
//! `ζ₁`, `ζ₂` and the warping function `M`. Evaluation uses the Cox–de Boor
//! triangle restricted to the knot span containing `t`, so only the
//! `degree + 1` nonzero functions are ever touched.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Upper bound on `degree + 1`; keeps span scratch space on the stack.
pub const MAX_ORDER: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    degree: usize,
    num_basis: usize,
    knots: Vec<f64>,
}

impl BSplineBasis {
    /// Builds a clamped basis of `num_basis` functions of the given degree.
    ///
    /// The knot vector repeats 0 and 1 `degree + 1` times and places
    /// `num_basis - degree - 1` interior knots at equal spacing.
    pub fn new(degree: usize, num_basis: usize) -> Result<Self> {
        if degree < 1 {
            return Err(Error::InvalidBasis(format!("degree must be at least 1, got {degree}")));
        }
        if degree >= MAX_ORDER {
            return Err(Error::InvalidBasis(format!(
                "degree {degree} exceeds the supported maximum {}",
                MAX_ORDER - 1
            )));
        }
        if num_basis < degree + 1 {
            return Err(Error::InvalidBasis(format!(
                "need at least degree + 1 = {} basis functions, got {num_basis}",
                degree + 1
            )));
        }
        let interior = num_basis - degree - 1;
        let mut knots = Vec::with_capacity(num_basis + degree + 1);
        knots.extend(core::iter::repeat_n(0.0, degree + 1));
        for i in 1..=interior {
            knots.push(i as f64 / (interior + 1) as f64);
        }
        knots.extend(core::iter::repeat_n(1.0, degree + 1));
        Ok(Self {
            degree,
            num_basis,
            knots,
        })
    }

    pub fn cubic(num_basis: usize) -> Result<Self> {
        Self::new(3, num_basis)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn num_basis(&self) -> usize {
        self.num_basis
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    fn check(t: f64) -> Result<()> {
        if (0.0..=1.0).contains(&t) {
            Ok(())
        } else {
            Err(Error::Domain(t))
        }
    }

    /// Index `i` of the knot span `[u_i, u_{i+1})` holding `t`; the last
    /// nonempty span is closed so that `t = 1` lands in it.
    fn find_span(&self, t: f64) -> usize {
        let n = self.num_basis;
        let p = self.degree;
        if t >= self.knots[n] {
            return n - 1;
        }
        let (mut lo, mut hi) = (p, n);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if t < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Degree-`q` basis values on span `span`, written to `out[0..=q]`
    /// (functions `span - q ..= span`).
    fn span_values(&self, span: usize, t: f64, q: usize, out: &mut [f64]) {
        let u = &self.knots;
        let mut left = [0.0f64; MAX_ORDER];
        let mut right = [0.0f64; MAX_ORDER];
        out[0] = 1.0;
        for j in 1..=q {
            left[j] = t - u[span + 1 - j];
            right[j] = u[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == 0.0 { 0.0 } else { out[r] / denom };
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
    }

    /// Writes the `degree + 1` possibly-nonzero basis values at `t` into
    /// `values` and returns the index of the first one.
    pub fn eval_nonzero(&self, t: f64, values: &mut [f64]) -> Result<usize> {
        Self::check(t)?;
        let span = self.find_span(t);
        self.span_values(span, t, self.degree, values);
        Ok(span - self.degree)
    }

    /// Like [`eval_nonzero`](Self::eval_nonzero) but also fills the first
    /// derivatives of the same functions into `derivs`.
    pub fn eval_nonzero_with_derivative(
        &self,
        t: f64,
        values: &mut [f64],
        derivs: &mut [f64],
    ) -> Result<usize> {
        Self::check(t)?;
        let p = self.degree;
        let span = self.find_span(t);
        self.span_values(span, t, p, values);
        // degree p-1 values for functions span-p+1 ..= span
        let mut lower = [0.0f64; MAX_ORDER];
        self.span_values(span, t, p - 1, &mut lower);
        let u = &self.knots;
        let pf = p as f64;
        for m in 0..=p {
            let k = span - p + m;
            let mut d = 0.0;
            if m >= 1 {
                let denom = u[k + p] - u[k];
                if denom > 0.0 {
                    d += pf * lower[m - 1] / denom;
                }
            }
            if m < p {
                let denom = u[k + p + 1] - u[k + 1];
                if denom > 0.0 {
                    d -= pf * lower[m] / denom;
                }
            }
            derivs[m] = d;
        }
        Ok(span - p)
    }

    /// All `num_basis` values `(B₁(t), …, B_n(t))`.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut vals = [0.0f64; MAX_ORDER];
        let first = self.eval_nonzero(t, &mut vals)?;
        let mut out = vec![0.0; self.num_basis];
        out[first..=first + self.degree].copy_from_slice(&vals[..=self.degree]);
        Ok(out)
    }

    /// All `num_basis` first derivatives `(B₁′(t), …, B_n′(t))`.
    pub fn eval_derivative(&self, t: f64) -> Result<Vec<f64>> {
        let mut vals = [0.0f64; MAX_ORDER];
        let mut ders = [0.0f64; MAX_ORDER];
        let first = self.eval_nonzero_with_derivative(t, &mut vals, &mut ders)?;
        let mut out = vec![0.0; self.num_basis];
        out[first..=first + self.degree].copy_from_slice(&ders[..=self.degree]);
        Ok(out)
    }

    /// `|grid| × num_basis` design matrix whose row `i` is `eval(grid[i])`.
    pub fn eval_matrix(&self, grid: &[f64]) -> Result<DMatrix<f64>> {
        if grid.is_empty() {
            return Err(Error::EmptyGrid);
        }
        let mut m = DMatrix::zeros(grid.len(), self.num_basis);
        let mut vals = [0.0f64; MAX_ORDER];
        for (i, &t) in grid.iter().enumerate() {
            let first = self.eval_nonzero(t, &mut vals)?;
            for (m_idx, v) in vals[..=self.degree].iter().enumerate() {
                m[(i, first + m_idx)] = *v;
            }
        }
        Ok(m)
    }

    /// Row-wise derivatives, shaped like [`eval_matrix`](Self::eval_matrix).
    pub fn eval_derivative_matrix(&self, grid: &[f64]) -> Result<DMatrix<f64>> {
        if grid.is_empty() {
            return Err(Error::EmptyGrid);
        }
        let mut m = DMatrix::zeros(grid.len(), self.num_basis);
        let mut vals = [0.0f64; MAX_ORDER];
        let mut ders = [0.0f64; MAX_ORDER];
        for (i, &t) in grid.iter().enumerate() {
            let first = self.eval_nonzero_with_derivative(t, &mut vals, &mut ders)?;
            for (m_idx, d) in ders[..=self.degree].iter().enumerate() {
                m[(i, first + m_idx)] = *d;
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Textbook Cox–de Boor recursion over the full knot vector with the
    /// 0/0 = 0 convention; the last nonempty span is closed on the right.
    fn naive(knots: &[f64], n: usize, i: usize, p: usize, t: f64) -> f64 {
        if p == 0 {
            let last = knots.iter().rposition(|&k| k < 1.0).unwrap();
            return if (knots[i] <= t && t < knots[i + 1]) || (t == 1.0 && i == last) {
                1.0
            } else {
                0.0
            };
        }
        let mut v = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 > 0.0 {
            v += (t - knots[i]) / d1 * naive(knots, n, i, p - 1, t);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + p + 1] - t) / d2 * naive(knots, n, i + 1, p - 1, t);
        }
        v
    }

    #[test]
    fn linear_two_functions() {
        let b = BSplineBasis::new(1, 2).unwrap();
        assert_eq!(b.eval(0.0).unwrap(), vec![1.0, 0.0]);
        let d = b.eval_derivative(0.3).unwrap();
        assert!((d[0] + 1.0).abs() < 1e-14 && (d[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cubic_matches_naive_recursion() {
        let b = BSplineBasis::cubic(10).unwrap();
        for &t in &[0.0, 0.05, 0.2, 0.37, 0.5, 0.71, 0.99, 1.0] {
            let fast = b.eval(t).unwrap();
            for (i, v) in fast.iter().enumerate() {
                let slow = naive(b.knots(), 10, i, 3, t);
                assert!((v - slow).abs() < 1e-14, "t={t} i={i}: {v} vs {slow}");
            }
        }
    }

    #[test]
    fn endpoints_interpolate() {
        for (deg, n) in [(1, 2), (2, 5), (3, 10), (3, 20)] {
            let b = BSplineBasis::new(deg, n).unwrap();
            let v0 = b.eval(0.0).unwrap();
            let v1 = b.eval(1.0).unwrap();
            assert_eq!(v0[0], 1.0);
            assert_eq!(v1[n - 1], 1.0);
        }
    }

    #[test]
    fn matrix_rows_and_errors() {
        let b = BSplineBasis::new(1, 3).unwrap();
        let m = b.eval_matrix(&[0.0, 1.0]).unwrap();
        assert_eq!(m.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 0.0]);
        assert_eq!(m.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 1.0]);
        assert_eq!(b.eval_matrix(&[]), Err(Error::EmptyGrid));
        assert_eq!(b.eval(1.5), Err(Error::Domain(1.5)));
        assert_eq!(b.eval_derivative(-0.1), Err(Error::Domain(-0.1)));
        assert!(BSplineBasis::new(3, 3).is_err());
        assert!(BSplineBasis::new(0, 3).is_err());
    }

    #[test]
    fn matrix_matches_pointwise_on_fine_grid() {
        let b = BSplineBasis::cubic(12).unwrap();
        let grid: Vec<f64> = (0..500).map(|i| i as f64 / 499.0).collect();
        let m = b.eval_matrix(&grid).unwrap();
        for (i, &t) in grid.iter().enumerate() {
            let row = b.eval(t).unwrap();
            for (j, v) in row.iter().enumerate() {
                assert_eq!(m[(i, j)], *v);
            }
            assert!((m.row(i).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_matches_finite_difference_at_half() {
        let b = BSplineBasis::cubic(10).unwrap();
        let h = 1e-6;
        let d = b.eval_derivative(0.5).unwrap();
        let up = b.eval(0.5 + h).unwrap();
        let dn = b.eval(0.5 - h).unwrap();
        for i in 0..10 {
            let fd = (up[i] - dn[i]) / (2.0 * h);
            assert!((fd - d[i]).abs() < 1e-5, "i={i}: {fd} vs {}", d[i]);
        }
    }

    proptest! {
        #[test]
        fn partition_of_unity_and_nonnegative(t in 0.0f64..=1.0, n in 4usize..25) {
            let b = BSplineBasis::cubic(n).unwrap();
            let v = b.eval(t).unwrap();
            prop_assert!(v.iter().all(|&x| x >= 0.0));
            prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let d = b.eval_derivative(t).unwrap();
            prop_assert!(d.iter().sum::<f64>().abs() < 1e-10);
        }

        #[test]
        fn derivative_agrees_with_central_difference(t in 0.001f64..0.999, n in 4usize..21) {
            let b = BSplineBasis::cubic(n).unwrap();
            let h = 1e-6;
            let d = b.eval_derivative(t).unwrap();
            let up = b.eval(t + h).unwrap();
            let dn = b.eval(t - h).unwrap();
            for i in 0..n {
                let fd = (up[i] - dn[i]) / (2.0 * h);
                prop_assert!((fd - d[i]).abs() < 1e-5);
            }
        }
    }
}
