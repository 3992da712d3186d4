//! Negative log posteriors and analytic gradients of the two HMC blocks:
//! the warp coefficients `κ` and single columns of `Λ`.
//!
//! For a column `λ = Λ·ⱼ` the projector splits as
//! `Ψ = (I − P₁)(I − P₂)(I − P₁) = Π − uuᵀ/s` with `Π = I − P₁` the projector
//! off the remaining columns, `u = Πλ` and `s = λᵀΠλ`. `Π` is fixed while
//! `λ` moves, so after a per-column set-up every evaluation costs `O(p²)`:
//! data enter only through `T`-independent Gram statistics.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::{column_space, factor_curves, projector, Design, ModelState, Series, SeriesPair};
use crate::basis::MAX_ORDER;
use crate::error::{Error, Result};

/// `L(κ)` for fixed everything else: the Y-series residual sum of squares
/// weighted by `1/(2σ²₂ᵢ)` plus the `N(0, ω)` prior on each `κⱼ`.
#[derive(Debug, Clone)]
pub struct KappaTarget<'a> {
    design: &'a Design,
    /// `Y − ΨΓ₂ζ₂`, `p × T₂`.
    partial_resid: DMatrix<f64>,
    /// `ΛΞ₂β`, `p × K`.
    coef: DMatrix<f64>,
    inv_sigma: DVector<f64>,
    omega: f64,
    warp: crate::warp::WarpParams,
}

impl<'a> KappaTarget<'a> {
    pub fn new(state: &ModelState, data: &SeriesPair, design: &'a Design, omega: f64) -> Result<Self> {
        let psi = projector(&state.lambda)?;
        Ok(Self::with_projector(state, data, design, omega, &psi))
    }

    pub fn with_projector(
        state: &ModelState,
        data: &SeriesPair,
        design: &'a Design,
        omega: f64,
        psi: &DMatrix<f64>,
    ) -> Self {
        let ind = psi * &state.gamma2 * factor_curves(&state.beta2, &design.chi_y_ind);
        Self {
            design,
            partial_resid: &data.y - ind,
            coef: state.shared_loading(Series::Y) * &state.beta_shared,
            inv_sigma: state.sigma2_sq.map(|s| 1.0 / s),
            omega,
            warp: state.warp.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.warp.kappa.len()
    }

    /// Value of `L(κ)`; fills `grad` with `∂L/∂κ` when given.
    pub fn evaluate(&self, kappa: &[f64], mut grad: Option<&mut [f64]>) -> Result<f64> {
        let mut warp = self.warp.clone();
        warp.kappa.copy_from_slice(kappa);
        let softmax = warp.softmax();
        let gamma = warp.gamma();
        let shared = &self.design.bases.shared;
        let deg = shared.degree();
        let p = self.coef.nrows();
        let jm1 = kappa.len();
        let mut dm = vec![0.0; jm1];
        let mut vals = [0.0f64; MAX_ORDER];
        let mut ders = [0.0f64; MAX_ORDER];
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        let mut value = 0.0;
        for (c, &t) in self.design.grid_y.iter().enumerate() {
            let m = if grad.is_some() {
                warp.grad_kappa_into(&softmax, &gamma, t, &mut dm)?
            } else {
                let mut v = [0.0f64; MAX_ORDER];
                let first = warp.basis().eval_nonzero(t, &mut v)?;
                (0..=warp.basis().degree()).map(|k| gamma[first + k] * v[k]).sum()
            };
            let first = shared.eval_nonzero_with_derivative(m.clamp(0.0, 1.0), &mut vals, &mut ders)?;
            let mut dl_dm = 0.0;
            for i in 0..p {
                let mut mean = 0.0;
                let mut slope = 0.0;
                for k in 0..=deg {
                    let a = self.coef[(i, first + k)];
                    mean += a * vals[k];
                    slope += a * ders[k];
                }
                let r = self.partial_resid[(i, c)] - mean;
                value += 0.5 * self.inv_sigma[i] * r * r;
                dl_dm -= self.inv_sigma[i] * r * slope;
            }
            if let Some(g) = grad.as_deref_mut() {
                for (gj, d) in g.iter_mut().zip(&dm) {
                    *gj += dl_dm * d;
                }
            }
        }
        value += kappa.iter().map(|k| k * k).sum::<f64>() / (2.0 * self.omega);
        if let Some(g) = grad {
            for (gj, k) in g.iter_mut().zip(kappa) {
                *gj += k / self.omega;
            }
        }
        Ok(value)
    }
}

pub fn neg_loglik_kappa(state: &ModelState, data: &SeriesPair, design: &Design, omega: f64) -> Result<f64> {
    KappaTarget::new(state, data, design, omega)?.evaluate(&state.warp.kappa, None)
}

pub fn grad_neg_loglik_kappa(state: &ModelState, data: &SeriesPair, design: &Design, omega: f64) -> Result<Vec<f64>> {
    let target = KappaTarget::new(state, data, design, omega)?;
    let mut g = vec![0.0; target.dim()];
    target.evaluate(&state.warp.kappa, Some(&mut g))?;
    Ok(g)
}

/// Gram statistics of one series that do not depend on `Λ`:
/// with `D` the data, `G = Γζ` and `H = Ξη` (`r × T`),
/// `dg = DGᵀ`, `dh = DHᵀ`, `gg = GGᵀ`, `gh = GHᵀ`, `hh = HHᵀ` and
/// `dd = Σᵢ (DDᵀ)ᵢᵢ/σ²ᵢ`.
#[derive(Debug, Clone)]
struct SeriesGram {
    inv_sigma: DVector<f64>,
    dd: f64,
    dg: DMatrix<f64>,
    dh: DMatrix<f64>,
    gg: DMatrix<f64>,
    gh: DMatrix<f64>,
    hh: DMatrix<f64>,
}

impl SeriesGram {
    fn new(d: &DMatrix<f64>, g: &DMatrix<f64>, h: &DMatrix<f64>, sigma_sq: &DVector<f64>) -> Self {
        let inv_sigma = sigma_sq.map(|s| 1.0 / s);
        let dd = (0..d.nrows())
            .map(|i| inv_sigma[i] * d.row(i).norm_squared())
            .sum();
        Self {
            inv_sigma,
            dd,
            dg: d * g.transpose(),
            dh: d * h.transpose(),
            gg: g * g.transpose(),
            gh: g * h.transpose(),
            hh: h * h.transpose(),
        }
    }
}

/// Everything the `Λ` column updates need that stays fixed while `Λ` moves.
#[derive(Debug, Clone)]
pub struct LambdaStats {
    series: [SeriesGram; 2],
}

impl LambdaStats {
    pub fn new(state: &ModelState, data: &SeriesPair, design: &Design) -> Result<Self> {
        let chi_y = design.chi_y_warped(&state.warp)?;
        let mut h_x = factor_curves(&state.beta_shared, &design.chi_x);
        let mut h_y = factor_curves(&state.beta_shared, &chi_y);
        for (f, (x1, x2)) in state.xi1.iter().zip(state.xi2.iter()).enumerate() {
            h_x.row_mut(f).scale_mut(*x1);
            h_y.row_mut(f).scale_mut(*x2);
        }
        let g_x = &state.gamma1 * factor_curves(&state.beta1, &design.chi_x_ind);
        let g_y = &state.gamma2 * factor_curves(&state.beta2, &design.chi_y_ind);
        Ok(Self {
            series: [
                SeriesGram::new(&data.x, &g_x, &h_x, &state.sigma1_sq),
                SeriesGram::new(&data.y, &g_y, &h_y, &state.sigma2_sq),
            ],
        })
    }
}

/// Per-series pieces of the column target that depend on `Λ₋ⱼ` only.
#[derive(Debug, Clone)]
struct ColumnSeries {
    /// `Π·gg`.
    pi_gg: DMatrix<f64>,
    /// `gh₋ⱼ Λ₋ⱼᵀ`.
    gh_lam_rest: DMatrix<f64>,
    /// `Λ₋ⱼ hh₋ⱼ,ⱼ`.
    lam_hh_rest_j: DVector<f64>,
    /// `Λᵢ,₋ⱼ hh₋ⱼ,₋ⱼ Λᵢ,₋ⱼᵀ` per row `i`.
    quad_rest: DVector<f64>,
    /// `Σᵢ s_i Σ_c dhᵢc Λᵢc` over `c ≠ j`.
    dh_rest: f64,
}

/// Negative log posterior of one column `Λ·ⱼ` with the remaining columns,
/// `Γ`, `Ξ`, `β`, `κ`, `σ²` and the shrinkage parameters held fixed.
#[derive(Debug, Clone)]
pub struct LambdaColumnTarget<'a> {
    stats: &'a LambdaStats,
    j: usize,
    pi: DMatrix<f64>,
    parts: [ColumnSeries; 2],
    prior_precision: DVector<f64>,
}

impl<'a> LambdaColumnTarget<'a> {
    pub fn new(state: &ModelState, stats: &'a LambdaStats, j: usize) -> Result<Self> {
        let p = state.p();
        let r = state.rank();
        let rest: Vec<usize> = (0..r).filter(|&c| c != j).collect();
        let lam_rest = state.lambda.select_columns(&rest);
        let basis = column_space(&lam_rest)?;
        let mut pi = DMatrix::identity(p, p);
        if basis.ncols() > 0 {
            pi -= &basis * basis.transpose();
        }
        let parts = [0usize, 1].map(|w| {
            let g = &stats.series[w];
            let gh_rest = g.gh.select_columns(&rest);
            let hh_rest = g.hh.select_rows(&rest).select_columns(&rest);
            let hh_rest_j = DVector::from_iterator(rest.len(), rest.iter().map(|&c| g.hh[(c, j)]));
            let lam_hh = &lam_rest * &hh_rest;
            let quad_rest = DVector::from_fn(p, |i, _| lam_hh.row(i).dot(&lam_rest.row(i)));
            let dh_rest = (0..p)
                .map(|i| g.inv_sigma[i] * rest.iter().map(|&c| g.dh[(i, c)] * state.lambda[(i, c)]).sum::<f64>())
                .sum();
            ColumnSeries {
                pi_gg: &pi * &g.gg,
                gh_lam_rest: &gh_rest * lam_rest.transpose(),
                lam_hh_rest_j: &lam_rest * hh_rest_j,
                quad_rest,
                dh_rest,
            }
        });
        let block = &state.shrinkage.lambda;
        let prior_precision = DVector::from_fn(p, |k, _| block.precision(k, j));
        Ok(Self {
            stats,
            j,
            pi,
            parts,
            prior_precision,
        })
    }

    pub fn dim(&self) -> usize {
        self.pi.nrows()
    }

    /// Value at column `lam`; fills `grad` when given. Fails when `lam`
    /// falls (numerically) inside the span of the other columns.
    pub fn evaluate(&self, lam: &[f64], mut grad: Option<&mut [f64]>) -> Result<f64> {
        let p = self.dim();
        let j = self.j;
        let lam = DVector::from_column_slice(lam);
        let u = &self.pi * &lam;
        let s = u.norm_squared();
        if !(s > lam.norm_squared() * super::RANK_TOL * super::RANK_TOL) || !s.is_finite() {
            let r = self.stats.series[0].hh.nrows();
            return Err(Error::RankDeficient { rank: r - 1, cols: r });
        }
        let psi = &self.pi - &u * u.transpose() / s;
        if let Some(g) = grad.as_deref_mut() {
            for (gk, (l, prec)) in g.iter_mut().zip(lam.iter().zip(self.prior_precision.iter())) {
                *gk = l * prec;
            }
        }
        let mut value = 0.5 * lam.iter().zip(self.prior_precision.iter()).map(|(l, q)| l * l * q).sum::<f64>();

        for (g, part) in self.stats.series.iter().zip(&self.parts) {
            let sw = &g.inv_sigma;
            // Ψ·gg = Π·gg − u (uᵀ gg)/s
            let ut_gg = g.gg.tr_mul(&u);
            let psi_gg = &part.pi_gg - &u * ut_gg.transpose() / s;
            // gh Λᵀ with column j swapped in
            let gh_j = g.gh.column(j);
            let gh_lam = &part.gh_lam_rest + gh_j * lam.transpose();
            let hh_jj = g.hh[(j, j)];
            let hh_rest_j_dot: DVector<f64> = part.lam_hh_rest_j.clone();

            let mut t_dg_psi = 0.0;
            let mut t_psi_gg_psi = 0.0;
            let mut t_psi_gh_lam = 0.0;
            let mut t_quad = 0.0;
            for i in 0..p {
                let mut a = 0.0;
                let mut b = 0.0;
                let mut c = 0.0;
                for k in 0..p {
                    a += g.dg[(i, k)] * psi[(k, i)];
                    b += psi_gg[(i, k)] * psi[(k, i)];
                    c += psi[(i, k)] * gh_lam[(k, i)];
                }
                t_dg_psi += sw[i] * a;
                t_psi_gg_psi += sw[i] * b;
                t_psi_gh_lam += sw[i] * c;
                t_quad += sw[i] * (part.quad_rest[i] + 2.0 * lam[i] * hh_rest_j_dot[i] + lam[i] * lam[i] * hh_jj);
            }
            let t_dh_lam = part.dh_rest + (0..p).map(|i| sw[i] * g.dh[(i, j)] * lam[i]).sum::<f64>();
            value += 0.5 * (g.dd - 2.0 * t_dg_psi - 2.0 * t_dh_lam + t_psi_gg_psi + 2.0 * t_psi_gh_lam + t_quad);

            if let Some(grad) = grad.as_deref_mut() {
                // direct path: −S(dh·ⱼ − Ψ gh·ⱼ − Λ hh·ⱼ)
                let psi_ghj = &psi * gh_j;
                for i in 0..p {
                    let lam_hh_j = part.lam_hh_rest_j[i] + lam[i] * hh_jj;
                    grad[i] -= sw[i] * (g.dh[(i, j)] - psi_ghj[i] - lam_hh_j);
                }
                // projector path with C = S(dg − Ψgg − Λghᵀ), Ĉ = C + Cᵀ:
                // ΠĈu/s − (uᵀĈu)u/s²
                let mut c_mat = &g.dg - &psi_gg - gh_lam.transpose();
                for (i, mut row) in c_mat.row_iter_mut().enumerate() {
                    row *= sw[i];
                }
                let c_hat = &c_mat + c_mat.transpose();
                let chu = &c_hat * &u;
                let uchu = u.dot(&chu);
                let pichu = &self.pi * chu;
                for i in 0..p {
                    grad[i] += pichu[i] / s - uchu * u[i] / (s * s);
                }
            }
        }
        Ok(value)
    }
}

pub fn neg_loglik_lambda_col(state: &ModelState, data: &SeriesPair, design: &Design, j: usize) -> Result<f64> {
    let stats = LambdaStats::new(state, data, design)?;
    let target = LambdaColumnTarget::new(state, &stats, j)?;
    let col: Vec<f64> = state.lambda.column(j).iter().copied().collect();
    target.evaluate(&col, None)
}

pub fn grad_neg_loglik_lambda_col(state: &ModelState, data: &SeriesPair, design: &Design, j: usize) -> Result<Vec<f64>> {
    let stats = LambdaStats::new(state, data, design)?;
    let target = LambdaColumnTarget::new(state, &stats, j)?;
    let col: Vec<f64> = state.lambda.column(j).iter().copied().collect();
    let mut g = vec![0.0; col.len()];
    target.evaluate(&col, Some(&mut g))?;
    Ok(g)
}

/// `∂Ψ/∂Λₖⱼ = −(I − P₁) Q (I − P₁)` with
/// `Q = [(λeₖᵀ + eₖλᵀ) s − 2 (eₖᵀ(I − P₁)λ) λλᵀ] / s²`, `s = λᵀ(I − P₁)λ`.
pub fn projector_derivative_block(lambda: &DMatrix<f64>, j: usize, k: usize) -> Result<DMatrix<f64>> {
    let p = lambda.nrows();
    let rest: Vec<usize> = (0..lambda.ncols()).filter(|&c| c != j).collect();
    let basis = column_space(&lambda.select_columns(&rest))?;
    let mut pi = DMatrix::identity(p, p);
    if basis.ncols() > 0 {
        pi -= &basis * basis.transpose();
    }
    let lam = lambda.column(j).into_owned();
    let s = lam.dot(&(&pi * &lam));
    let mut e = DVector::zeros(p);
    e[k] = 1.0;
    let pil_k = (&pi * &lam)[k];
    let q = ((&lam * e.transpose() + &e * lam.transpose()) * s - &lam * lam.transpose() * (2.0 * pil_k)) / (s * s);
    Ok(-(&pi * q * &pi))
}
