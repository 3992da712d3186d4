//! Monotone warping `M: [0, 1] → [0, 1]`.
//!
//! `M(t) = Σⱼ γⱼ Bⱼ(t)` with `γ₁ = 0` and, for `j ≥ 2`,
//! `γⱼ = Σ_{l=2}^{j} exp(κₗ) / Σ_{k=2}^{J} exp(κₖ)`. The coefficients are
//! strictly increasing from 0 to 1, so on a clamped basis `M` is monotone
//! with `M(0) = 0` and `M(1) = 1` for any real `κ`.
//!
//! `κ` is only identified up to a common shift (`κ + c·1` gives the same
//! `γ`); the Gaussian prior on `κ` pins the level.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::basis::{BSplineBasis, MAX_ORDER};
use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, PartialEq)]
pub struct WarpParams {
    /// `κ₂, …, κ_J` (length `J − 1`).
    pub kappa: Vec<f64>,
    basis: BSplineBasis,
}

impl WarpParams {
    pub fn new(kappa: Vec<f64>, basis: BSplineBasis) -> Result<Self> {
        if basis.num_basis() < 2 {
            return Err(Error::InvalidBasis(format!(
                "warp needs J >= 2, got {}",
                basis.num_basis()
            )));
        }
        if kappa.len() + 1 != basis.num_basis() {
            return Err(Error::Dimension(format!(
                "kappa has length {} but J - 1 = {}",
                kappa.len(),
                basis.num_basis() - 1
            )));
        }
        Ok(Self { kappa, basis })
    }

    /// `κ = 0`, which gives equally spaced `γ` and `M(t) ≈ t`.
    pub fn identity(basis: BSplineBasis) -> Result<Self> {
        let j = basis.num_basis();
        Self::new(vec![0.0; j.saturating_sub(1)], basis)
    }

    pub fn basis(&self) -> &BSplineBasis {
        &self.basis
    }

    pub fn num_coefficients(&self) -> usize {
        self.basis.num_basis()
    }

    /// Max-shifted softmax weights `exp(κⱼ) / Σₖ exp(κₖ)`, one per `κ` entry.
    pub fn softmax(&self) -> Vec<f64> {
        let max = self.kappa.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut w: Vec<f64> = self.kappa.iter().map(|&k| math::exp(k - max)).collect();
        let total: f64 = w.iter().sum();
        for x in &mut w {
            *x /= total;
        }
        w
    }

    /// Spline coefficients `γ₁ = 0 < γ₂ < … < γ_J = 1`.
    pub fn gamma(&self) -> Vec<f64> {
        let w = self.softmax();
        let mut gamma = Vec::with_capacity(w.len() + 1);
        gamma.push(0.0);
        let mut acc = 0.0;
        for x in &w {
            acc += x;
            gamma.push(acc);
        }
        // the cumulative sum can land one ulp off 1
        if let Some(last) = gamma.last_mut() {
            *last = 1.0;
        }
        gamma
    }

    fn eval_with_gamma(&self, gamma: &[f64], t: f64) -> Result<f64> {
        let mut vals = [0.0f64; MAX_ORDER];
        let first = self.basis.eval_nonzero(t, &mut vals)?;
        let p = self.basis.degree();
        Ok((0..=p).map(|m| gamma[first + m] * vals[m]).sum())
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        let gamma = self.gamma();
        self.eval_with_gamma(&gamma, t)
    }

    /// `M` on every point of `grid`, computing `γ` once.
    pub fn eval_grid(&self, grid: &[f64]) -> Result<Vec<f64>> {
        let gamma = self.gamma();
        grid.iter().map(|&t| self.eval_with_gamma(&gamma, t)).collect()
    }

    /// `M(t)` together with its slope `M′(t)`.
    pub fn eval_with_slope(&self, gamma: &[f64], t: f64) -> Result<(f64, f64)> {
        let mut vals = [0.0f64; MAX_ORDER];
        let mut ders = [0.0f64; MAX_ORDER];
        let first = self.basis.eval_nonzero_with_derivative(t, &mut vals, &mut ders)?;
        let p = self.basis.degree();
        let mut m = 0.0;
        let mut dm = 0.0;
        for k in 0..=p {
            m += gamma[first + k] * vals[k];
            dm += gamma[first + k] * ders[k];
        }
        Ok((m, dm))
    }

    /// `∂M(t)/∂κⱼ = [Σ_{l≥j} B_l(t) − M(t)] · softmaxⱼ` for `j = 2..J`.
    pub fn grad_kappa(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.kappa.len()];
        let w = self.softmax();
        let gamma = self.gamma();
        self.grad_kappa_into(&w, &gamma, t, &mut out)?;
        Ok(out)
    }

    /// Allocation-free form of [`grad_kappa`](Self::grad_kappa) for callers
    /// that already hold the softmax weights and `γ`. Returns `M(t)`.
    pub fn grad_kappa_into(&self, softmax: &[f64], gamma: &[f64], t: f64, out: &mut [f64]) -> Result<f64> {
        let mut vals = [0.0f64; MAX_ORDER];
        let first = self.basis.eval_nonzero(t, &mut vals)?;
        let p = self.basis.degree();
        let jn = self.basis.num_basis();
        let m: f64 = (0..=p).map(|k| gamma[first + k] * vals[k]).sum();
        // tail[l] = Σ_{i ≥ l} B_i(t); only the span contributes
        let mut tail = 1.0;
        for l in 0..jn {
            if l > first + p {
                tail = 0.0;
            } else if l > first {
                tail -= vals[l - 1 - first];
            }
            if l >= 1 {
                out[l - 1] = (tail - m) * softmax[l - 1];
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn warp(kappa: Vec<f64>, degree: usize) -> WarpParams {
        let j = kappa.len() + 1;
        WarpParams::new(kappa, BSplineBasis::new(degree, j).unwrap()).unwrap()
    }

    #[test]
    fn gamma_examples() {
        let g = warp(vec![0.7; 4], 3).gamma();
        for (a, b) in g.iter().zip([0.0, 0.25, 0.5, 0.75, 1.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(warp(vec![0.0], 1).gamma(), vec![0.0, 1.0]);
        let g = warp(vec![0.0, 2f64.ln(), 4f64.ln()], 3).gamma();
        for (a, b) in g.iter().zip([0.0, 1.0 / 7.0, 3.0 / 7.0, 1.0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn large_kappa_does_not_overflow() {
        let g = warp(vec![700.0, 650.0, -700.0, 0.0], 3).gamma();
        assert!(g.iter().all(|x| x.is_finite()));
        assert!(g.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn constant_kappa_linear_basis_is_identity() {
        let w = warp(vec![-1.3; 9], 1);
        for i in 0..=50 {
            let t = i as f64 / 50.0;
            assert!((w.eval(t).unwrap() - t).abs() < 1e-14);
        }
    }

    #[test]
    fn endpoints_and_zero_gradient_at_ends() {
        let w = warp(vec![0.3, -1.0, 2.0, 0.5, -0.2, 1.1], 3);
        assert_eq!(w.eval(0.0).unwrap(), 0.0);
        assert!((w.eval(1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(w.grad_kappa(0.0).unwrap().iter().all(|g| g.abs() < 1e-15));
        assert!(w.grad_kappa(1.0).unwrap().iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn rejects_wrong_length() {
        assert!(WarpParams::new(vec![0.0; 3], BSplineBasis::cubic(5).unwrap()).is_err());
    }

    #[test]
    fn sqrt_target_recoverable() {
        // Least-squares fit of γ to √t with the end coefficients pinned at 0
        // and 1, then invert the softmax: κⱼ = ln(γⱼ − γⱼ₋₁). The fitted
        // increments are all positive for √t, so the inversion is exact.
        // Near t = 0 the infinite slope of √t cannot be followed by any
        // pinned cubic spline on 20 equidistant functions (the minimax
        // error over [0, 1] is about 0.023), so the tight bound applies on
        // [0.05, 1].
        let basis = BSplineBasis::cubic(20).unwrap();
        let grid: Vec<f64> = (0..2000).map(|i| i as f64 / 1999.0).collect();
        let design = basis.eval_matrix(&grid).unwrap();
        let inner = design.columns(1, 18).into_owned();
        let target = nalgebra::DVector::from_iterator(grid.len(), grid.iter().map(|t| t.sqrt())) - design.column(19);
        let normal = inner.transpose() * &inner;
        let rhs = inner.transpose() * target;
        let coef = normal.cholesky().unwrap().solve(&rhs);
        let mut gamma = vec![0.0];
        gamma.extend(coef.iter().copied());
        gamma.push(1.0);
        assert!(gamma.windows(2).all(|w| w[1] > w[0]));
        let kappa: Vec<f64> = gamma.windows(2).map(|w| (w[1] - w[0]).ln()).collect();
        let w = WarpParams::new(kappa, basis).unwrap();
        let (mut sup, mut sup_tail): (f64, f64) = (0.0, 0.0);
        for i in 0..500 {
            let t = i as f64 / 499.0;
            let e = (w.eval(t).unwrap() - t.sqrt()).abs();
            sup = sup.max(e);
            if t >= 0.05 {
                sup_tail = sup_tail.max(e);
            }
        }
        assert!(sup_tail < 0.01, "sup error on [0.05, 1]: {sup_tail}");
        assert!(sup < 0.03, "sup error on [0, 1]: {sup}");
    }

    proptest! {
        #[test]
        fn monotone_and_pinned(kappa in proptest::collection::vec(-5.0f64..5.0, 1..20), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let w = warp(kappa.clone(), if kappa.len() >= 3 { 3 } else { 1 });
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(w.eval(lo).unwrap() <= w.eval(hi).unwrap() + 1e-15);
            prop_assert_eq!(w.eval(0.0).unwrap(), 0.0);
            prop_assert!((w.eval(1.0).unwrap() - 1.0).abs() < 1e-15);
            let g = w.gamma();
            prop_assert!(g.windows(2).all(|p| p[0] < p[1]));
        }

        #[test]
        fn shift_invariance(kappa in proptest::collection::vec(-5.0f64..5.0, 2..20), c in -50.0f64..50.0) {
            let j = kappa.len() + 1;
            let basis = BSplineBasis::new(1, j).unwrap();
            let shifted: Vec<f64> = kappa.iter().map(|k| k + c).collect();
            let a = WarpParams::new(kappa, basis.clone()).unwrap().gamma();
            let b = WarpParams::new(shifted, basis).unwrap().gamma();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-14);
            }
        }

        #[test]
        fn gradient_matches_finite_difference(kappa in proptest::collection::vec(-2.0f64..2.0, 4..15), t in 0.01f64..0.99) {
            let w = warp(kappa.clone(), 3);
            let g = w.grad_kappa(t).unwrap();
            let h = 1e-6;
            for j in 0..kappa.len() {
                let mut up = kappa.clone();
                up[j] += h;
                let mut dn = kappa.clone();
                dn[j] -= h;
                let fd = (warp(up, 3).eval(t).unwrap() - warp(dn, 3).eval(t).unwrap()) / (2.0 * h);
                let scale = g[j].abs().max(1e-6);
                prop_assert!((fd - g[j]).abs() / scale < 1e-5 || (fd - g[j]).abs() < 1e-10, "j={} fd={} g={}", j, fd, g[j]);
            }
        }
    }
}
