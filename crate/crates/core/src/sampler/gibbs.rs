//! Conjugate updates.
//!
//! Every Gaussian block is linear in its parameters: the mean contribution
//! at time `t` is `T(t)·θ` for a design `T(t)`, so the conditional is
//! `N(V b, V)` with `V⁻¹ = Σₜ T(t)ᵀ Σ⁻¹ T(t) + prior precision` and
//! `b = Σₜ T(t)ᵀ Σ⁻¹ rₜ`. The time sums factor into Kronecker or Hadamard
//! products of small Gram matrices, which is how they are assembled here.

use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{factor_curves, projector, Design, HyperParams, Means, ModelState, Series, SeriesPair, ShrinkageBlock};

/// A Gaussian full conditional in information form.
#[derive(Debug, Clone)]
pub struct GaussianConditional {
    pub precision: DMatrix<f64>,
    pub rhs: DVector<f64>,
    block: &'static str,
}

impl GaussianConditional {
    fn factor(&self) -> Result<Cholesky<f64, Dyn>> {
        if let Some(c) = self.precision.clone().cholesky() {
            return Ok(c);
        }
        let diag = self.precision.diagonal();
        let max = diag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
        // one retry with a relative ridge for round-off level indefiniteness
        let mut ridged = self.precision.clone();
        let jitter = 1e-10 * max.abs().max(1e-300);
        for i in 0..ridged.nrows() {
            ridged[(i, i)] += jitter;
        }
        ridged.cholesky().ok_or(Error::NotPositiveDefinite {
            block: self.block,
            min_diag: min,
            max_diag: max,
        })
    }

    pub fn mean(&self) -> Result<DVector<f64>> {
        Ok(self.factor()?.solve(&self.rhs))
    }

    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        Ok(self.factor()?.inverse())
    }

    /// `mean + L⁻ᵀz` with `precision = LLᵀ` and `z ~ N(0, I)`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let chol = self.factor()?;
        let mean = chol.solve(&self.rhs);
        let z = DVector::from_fn(self.rhs.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let l = chol.l();
        let noise = l
            .tr_solve_lower_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        Ok(mean + noise)
    }
}

fn weighted_rows(m: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= w[i];
    }
    out
}

fn inv(v: &DVector<f64>) -> DVector<f64> {
    v.map(|s| 1.0 / s)
}

/// Conditional of `vec(Γ_w)` (column-major). `T(t) = ζ_w(t)ᵀ ⊗ Ψ`, so
/// `Σₜ T(t)ᵀSΤ(t) = (Z Zᵀ) ⊗ (ΨSΨ)` and `b = vec(ΨS R Zᵀ)` with `R` the data
/// minus the shared mean. Prior precision `φ_lk τ_k`.
pub fn gamma_conditional(state: &ModelState, data: &SeriesPair, design: &Design, which: Series) -> Result<GaussianConditional> {
    let psi = projector(&state.lambda)?;
    let means = Means::with_projector(state, design, &psi)?;
    let (d, _) = data.series(which);
    let resid = d - means.shared(which);
    let z = factor_curves(state.beta_ind(which), design.chi_ind(which));
    let s = inv(state.sigma_sq(which));
    let s_psi = weighted_rows(&psi, &s);
    let psi_s_psi = &psi * &s_psi;
    let mut precision = (&z * z.transpose()).kronecker(&psi_s_psi);
    let shrink = state.shrinkage.individual(which);
    let p = state.p();
    for k in 0..state.gamma(which).ncols() {
        for l in 0..p {
            precision[(k * p + l, k * p + l)] += shrink.precision(l, k);
        }
    }
    let b = s_psi.transpose() * resid * z.transpose();
    Ok(GaussianConditional {
        precision,
        rhs: DVector::from_column_slice(b.as_slice()),
        block: match which {
            Series::X => "gamma1",
            Series::Y => "gamma2",
        },
    })
}

/// Conditional of the diagonal of `Ξ_w`. `T(t) = Λ diag(η(t))`, giving
/// precision `(ΛᵀSΛ) ∘ (HHᵀ) + I/ω` and `bₖ = Σₜ (ΛᵀSR)ₖₜ Hₖₜ` where `H` is
/// `η` on the series' (warped for Y) grid and `R` the data minus the
/// individual mean.
pub fn xi_conditional(
    state: &ModelState,
    data: &SeriesPair,
    design: &Design,
    omega: f64,
    which: Series,
) -> Result<GaussianConditional> {
    let psi = projector(&state.lambda)?;
    let means = Means::with_projector(state, design, &psi)?;
    let (d, _) = data.series(which);
    let resid = d - means.individual(which);
    let chi = match which {
        Series::X => design.chi_x.clone(),
        Series::Y => design.chi_y_warped(&state.warp)?,
    };
    let h = factor_curves(&state.beta_shared, &chi);
    let s = inv(state.sigma_sq(which));
    let s_lam = weighted_rows(&state.lambda, &s);
    let gram = state.lambda.transpose() * &s_lam;
    let mut precision = gram.component_mul(&(&h * h.transpose()));
    for i in 0..precision.nrows() {
        precision[(i, i)] += 1.0 / omega;
    }
    let proj = s_lam.transpose() * resid;
    let rhs = DVector::from_fn(state.rank(), |k, _| proj.row(k).dot(&h.row(k)));
    Ok(GaussianConditional {
        precision,
        rhs,
        block: match which {
            Series::X => "xi1",
            Series::Y => "xi2",
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaBlock {
    Shared,
    Individual(Series),
}

/// Conditional of `vec(β)` for one coefficient block, prior `N(0, ω)` per
/// entry. For loading `A` and basis matrix `χ` (`T × K`) the mean is
/// `Aβχᵀ`, so precision `(χᵀχ) ⊗ (AᵀSA)` and `b = vec(AᵀSRχ)`. The shared
/// block stacks X (basis at `t`) and Y (basis at `M(t)`).
pub fn beta_conditional(
    state: &ModelState,
    data: &SeriesPair,
    design: &Design,
    omega: f64,
    block: BetaBlock,
) -> Result<GaussianConditional> {
    let psi = projector(&state.lambda)?;
    let means = Means::with_projector(state, design, &psi)?;
    let mut terms: Vec<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DVector<f64>)> = Vec::new();
    match block {
        BetaBlock::Shared => {
            let chi_y = design.chi_y_warped(&state.warp)?;
            terms.push((
                state.shared_loading(Series::X),
                design.chi_x.clone(),
                &data.x - means.individual(Series::X),
                inv(&state.sigma1_sq),
            ));
            terms.push((
                state.shared_loading(Series::Y),
                chi_y,
                &data.y - means.individual(Series::Y),
                inv(&state.sigma2_sq),
            ));
        }
        BetaBlock::Individual(which) => {
            let (d, _) = data.series(which);
            terms.push((
                &psi * state.gamma(which),
                design.chi_ind(which).clone(),
                d - means.shared(which),
                inv(state.sigma_sq(which)),
            ));
        }
    }
    let (rows, cols) = (terms[0].0.ncols(), terms[0].1.ncols());
    let n = rows * cols;
    let mut precision = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(rows, cols);
    for (a, chi, resid, s) in &terms {
        let s_a = weighted_rows(a, s);
        precision += (chi.transpose() * chi).kronecker(&(a.transpose() * &s_a));
        b += s_a.transpose() * resid * chi;
    }
    for i in 0..n {
        precision[(i, i)] += 1.0 / omega;
    }
    Ok(GaussianConditional {
        precision,
        rhs: DVector::from_column_slice(b.as_slice()),
        block: match block {
            BetaBlock::Shared => "beta",
            BetaBlock::Individual(Series::X) => "beta1",
            BetaBlock::Individual(Series::Y) => "beta2",
        },
    })
}

pub fn gibbs_update_gamma<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &SeriesPair,
    design: &Design,
    which: Series,
    rng: &mut R,
) -> Result<()> {
    let draw = gamma_conditional(state, data, design, which)?.draw(rng)?;
    let target = match which {
        Series::X => &mut state.gamma1,
        Series::Y => &mut state.gamma2,
    };
    target.copy_from_slice(draw.as_slice());
    Ok(())
}

pub fn gibbs_update_xi<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &SeriesPair,
    design: &Design,
    omega: f64,
    which: Series,
    rng: &mut R,
) -> Result<()> {
    let draw = xi_conditional(state, data, design, omega, which)?.draw(rng)?;
    match which {
        Series::X => state.xi1 = draw,
        Series::Y => state.xi2 = draw,
    }
    Ok(())
}

pub fn gibbs_update_beta<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &SeriesPair,
    design: &Design,
    omega: f64,
    block: BetaBlock,
    rng: &mut R,
) -> Result<()> {
    let draw = beta_conditional(state, data, design, omega, block)?.draw(rng)?;
    let target = match block {
        BetaBlock::Shared => &mut state.beta_shared,
        BetaBlock::Individual(Series::X) => &mut state.beta1,
        BetaBlock::Individual(Series::Y) => &mut state.beta2,
    };
    target.copy_from_slice(draw.as_slice());
    Ok(())
}

/// Shape and rate of the inverse-gamma conditional of `σ²_wl` for every
/// feature: `(a + T_w/2, b + SSR_wl/2)`.
pub fn sigma_conditional(
    state: &ModelState,
    data: &SeriesPair,
    design: &Design,
    hyper: &HyperParams,
    which: Series,
) -> Result<Vec<(f64, f64)>> {
    let means = Means::compute(state, design)?;
    let (d, _) = data.series(which);
    let resid = d - means.total(which);
    let t = d.ncols() as f64;
    Ok((0..d.nrows())
        .map(|l| {
            let ssr = resid.row(l).norm_squared();
            (hyper.sigma_shape + 0.5 * t, hyper.sigma_rate + 0.5 * ssr)
        })
        .collect())
}

fn gamma_draw<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("gamma parameters are positive and finite")
        .sample(rng)
}

pub fn gibbs_update_sigma<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &SeriesPair,
    design: &Design,
    hyper: &HyperParams,
    rng: &mut R,
) -> Result<()> {
    let cx = sigma_conditional(state, data, design, hyper, Series::X)?;
    let cy = sigma_conditional(state, data, design, hyper, Series::Y)?;
    for (l, (shape, rate)) in cx.into_iter().enumerate() {
        state.sigma1_sq[l] = 1.0 / gamma_draw(shape, rate, rng);
    }
    for (l, (shape, rate)) in cy.into_iter().enumerate() {
        state.sigma2_sq[l] = 1.0 / gamma_draw(shape, rate, rng);
    }
    Ok(())
}

/// Shape and rate of `δ_h` given the loadings, `φ` and the other `δ`s.
pub fn delta_conditional(loadings: &DMatrix<f64>, block: &ShrinkageBlock, h: usize, a1: f64, a2: f64) -> (f64, f64) {
    let (p, k) = loadings.shape();
    let shape = if h == 0 { a1 } else { a2 } + 0.5 * (p * (k - h)) as f64;
    let mut tau_minus = 1.0;
    for i in 0..h {
        tau_minus *= block.delta[i];
    }
    let mut acc = 0.0;
    for c in h..k {
        if c > h {
            tau_minus *= block.delta[c];
        }
        let col: f64 = (0..p).map(|l| block.phi[(l, c)] * loadings[(l, c)] * loadings[(l, c)]).sum();
        acc += tau_minus * col;
    }
    (shape, 1.0 + 0.5 * acc)
}

fn update_block<R: Rng + ?Sized>(loadings: &DMatrix<f64>, block: &mut ShrinkageBlock, hyper: &HyperParams, rng: &mut R) {
    let (p, k) = loadings.shape();
    for c in 0..k {
        for l in 0..p {
            let rate = hyper.nu1 + 0.5 * block.tau[c] * loadings[(l, c)] * loadings[(l, c)];
            block.phi[(l, c)] = gamma_draw(hyper.nu1 + 0.5, rate, rng);
        }
    }
    for h in 0..k {
        let (shape, rate) = delta_conditional(loadings, block, h, hyper.a1, hyper.a2);
        block.delta[h] = gamma_draw(shape, rate, rng);
        block.refresh_tau();
    }
}

/// Local precisions `φ` then increments `δ` (sequentially, `τ` refreshed
/// after each) for the `Λ`, `Γ₁` and `Γ₂` blocks.
pub fn gibbs_update_shrinkage<R: Rng + ?Sized>(state: &mut ModelState, hyper: &HyperParams, rng: &mut R) {
    update_block(&state.lambda, &mut state.shrinkage.lambda, hyper, rng);
    update_block(&state.gamma1, &mut state.shrinkage.gamma1, hyper, rng);
    update_block(&state.gamma2, &mut state.shrinkage.gamma2, hyper, rng);
}
