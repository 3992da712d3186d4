//! Parameter state, the orthogonal projector `Ψ`, latent curves, means and
//! the joint Gaussian likelihood.

mod gradients;

pub use gradients::{
    grad_neg_loglik_kappa, grad_neg_loglik_lambda_col, neg_loglik_kappa, neg_loglik_lambda_col,
    projector_derivative_block, KappaTarget, LambdaColumnTarget, LambdaStats,
};

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::basis::BSplineBasis;
use crate::error::{Error, Result};
use crate::math;
use crate::warp::WarpParams;

/// Singular values below `max * RANK_TOL` count as zero when forming `Ψ`;
/// equivalent to a condition number of `ΛᵀΛ` of `1e12`.
pub const RANK_TOL: f64 = 1e-6;

/// The two observed series of a pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPair {
    /// `p × T₁`.
    pub x: DMatrix<f64>,
    /// `p × T₂`.
    pub y: DMatrix<f64>,
    pub grid_x: Vec<f64>,
    pub grid_y: Vec<f64>,
}

impl SeriesPair {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>, grid_x: Vec<f64>, grid_y: Vec<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::Data("series must have at least one feature".into()));
        }
        if x.nrows() != y.nrows() {
            return Err(Error::Dimension(format!(
                "X has {} features but Y has {}",
                x.nrows(),
                y.nrows()
            )));
        }
        if x.ncols() != grid_x.len() || y.ncols() != grid_y.len() {
            return Err(Error::Dimension(format!(
                "grid lengths ({}, {}) do not match series lengths ({}, {})",
                grid_x.len(),
                grid_y.len(),
                x.ncols(),
                y.ncols()
            )));
        }
        if grid_x.is_empty() || grid_y.is_empty() {
            return Err(Error::EmptyGrid);
        }
        for (name, grid) in [("X", &grid_x), ("Y", &grid_y)] {
            if grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
                return Err(Error::Data(format!("{name} grid leaves [0, 1]")));
            }
            if grid.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::Data(format!("{name} grid is not sorted")));
            }
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("X has a non-finite entry at flat index {i}")));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("Y has a non-finite entry at flat index {i}")));
        }
        Ok(Self { x, y, grid_x, grid_y })
    }

    pub fn p(&self) -> usize {
        self.x.nrows()
    }

    pub fn t1(&self) -> usize {
        self.x.ncols()
    }

    pub fn t2(&self) -> usize {
        self.y.ncols()
    }

    pub fn series(&self, which: Series) -> (&DMatrix<f64>, &[f64]) {
        match which {
            Series::X => (&self.x, &self.grid_x),
            Series::Y => (&self.y, &self.grid_y),
        }
    }

    /// Keeps only the listed time columns of each series (in the given order).
    pub fn select_columns(&self, keep_x: &[usize], keep_y: &[usize]) -> Result<Self> {
        let pick = |m: &DMatrix<f64>, g: &[f64], keep: &[usize]| -> Result<(DMatrix<f64>, Vec<f64>)> {
            if let Some(&bad) = keep.iter().find(|&&c| c >= m.ncols()) {
                return Err(Error::HeldOut(format!("column {bad} of {}", m.ncols())));
            }
            let cols: Vec<_> = keep.iter().map(|&c| m.column(c)).collect();
            let sub = if cols.is_empty() {
                DMatrix::zeros(m.nrows(), 0)
            } else {
                DMatrix::from_columns(&cols)
            };
            Ok((sub, keep.iter().map(|&c| g[c]).collect()))
        };
        let (x, gx) = pick(&self.x, &self.grid_x, keep_x)?;
        let (y, gy) = pick(&self.y, &self.grid_y, keep_y)?;
        Self::new(x, y, gx, gy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Series {
    X,
    Y,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// Shape and rate of the gamma prior on local precisions `φ`.
    pub nu1: f64,
    /// Shape of the first multiplicative increment `δ₁` (rate 1).
    pub a1: f64,
    /// Shape of later increments `δ_h, h ≥ 2` (rate 1).
    pub a2: f64,
    /// Gamma shape/rate of the noise precisions `σ⁻²`.
    pub sigma_shape: f64,
    pub sigma_rate: f64,
    /// Prior variance of `Ξ` diagonals, `κ` and `β` entries.
    pub omega: f64,
    pub k: usize,
    pub k1: usize,
    pub k2: usize,
    pub j: usize,
    pub degree: usize,
    pub warp_degree: usize,
    pub r_init: usize,
    pub r1_init: usize,
    pub r2_init: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            nu1: 3.0,
            a1: 5.0,
            a2: 5.0,
            sigma_shape: 0.1,
            sigma_rate: 0.1,
            omega: 100.0,
            k: 10,
            k1: 10,
            k2: 10,
            j: 20,
            degree: 3,
            warp_degree: 3,
            r_init: 15,
            r1_init: 8,
            r2_init: 8,
        }
    }
}

impl HyperParams {
    /// Defaults with the initial ranks capped for `p` features
    /// (`r ≤ min(p, 15)`, `r₁, r₂ ≤ min(p, 8)`); the shared rank also stays
    /// below `p` so that `Ψ` is not identically zero.
    pub fn for_features(p: usize) -> Self {
        let mut h = Self::default();
        h.r_init = h.r_init.min(p.saturating_sub(1)).max(1);
        h.r1_init = h.r1_init.min(p).max(1);
        h.r2_init = h.r2_init.min(p).max(1);
        h
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("nu1", self.nu1),
            ("a1", self.a1),
            ("a2", self.a2),
            ("sigma_shape", self.sigma_shape),
            ("sigma_rate", self.sigma_rate),
            ("omega", self.omega),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.j < 2 {
            return Err(Error::Config(format!("J must be at least 2, got {}", self.j)));
        }
        for (name, v) in [("r_init", self.r_init), ("r1_init", self.r1_init), ("r2_init", self.r2_init)] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        for (name, n, d) in [
            ("K", self.k, self.degree),
            ("K1", self.k1, self.degree),
            ("K2", self.k2, self.degree),
            ("J", self.j, self.warp_degree),
        ] {
            if d == 0 || n < d + 1 {
                return Err(Error::Config(format!(
                    "{name} = {n} needs at least degree + 1 = {} basis functions",
                    d + 1
                )));
            }
        }
        Ok(())
    }
}

/// The four spline bases of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Bases {
    pub shared: BSplineBasis,
    pub ind1: BSplineBasis,
    pub ind2: BSplineBasis,
    pub warp: BSplineBasis,
}

impl Bases {
    pub fn new(hyper: &HyperParams) -> Result<Self> {
        Ok(Self {
            shared: BSplineBasis::new(hyper.degree, hyper.k)?,
            ind1: BSplineBasis::new(hyper.degree, hyper.k1)?,
            ind2: BSplineBasis::new(hyper.degree, hyper.k2)?,
            warp: BSplineBasis::new(hyper.warp_degree, hyper.j)?,
        })
    }

    pub fn individual(&self, which: Series) -> &BSplineBasis {
        match which {
            Series::X => &self.ind1,
            Series::Y => &self.ind2,
        }
    }
}

/// Basis matrices on the observation grids, computed once per data set.
#[derive(Debug, Clone)]
pub struct Design {
    pub bases: Bases,
    pub grid_x: Vec<f64>,
    pub grid_y: Vec<f64>,
    /// `T₁ × K` shared basis on the X grid.
    pub chi_x: DMatrix<f64>,
    /// `T₁ × K₁`.
    pub chi_x_ind: DMatrix<f64>,
    /// `T₂ × K₂`.
    pub chi_y_ind: DMatrix<f64>,
}

impl Design {
    pub fn new(bases: Bases, grid_x: &[f64], grid_y: &[f64]) -> Result<Self> {
        Ok(Self {
            chi_x: bases.shared.eval_matrix(grid_x)?,
            chi_x_ind: bases.ind1.eval_matrix(grid_x)?,
            chi_y_ind: bases.ind2.eval_matrix(grid_y)?,
            grid_x: grid_x.to_vec(),
            grid_y: grid_y.to_vec(),
            bases,
        })
    }

    pub fn for_data(hyper: &HyperParams, data: &SeriesPair) -> Result<Self> {
        Self::new(Bases::new(hyper)?, &data.grid_x, &data.grid_y)
    }

    /// `T₂ × K` shared basis evaluated at the warped Y grid `M(t)`.
    pub fn chi_y_warped(&self, warp: &WarpParams) -> Result<DMatrix<f64>> {
        let warped = warped_grid(warp, &self.grid_y)?;
        self.bases.shared.eval_matrix(&warped)
    }

    pub fn chi_ind(&self, which: Series) -> &DMatrix<f64> {
        match which {
            Series::X => &self.chi_x_ind,
            Series::Y => &self.chi_y_ind,
        }
    }
}

/// `M(t)` on a grid, clamped to `[0, 1]` against rounding.
pub fn warped_grid(warp: &WarpParams, grid: &[f64]) -> Result<Vec<f64>> {
    Ok(warp.eval_grid(grid)?.into_iter().map(|m| m.clamp(0.0, 1.0)).collect())
}

/// Multiplicative gamma process shrinkage for one loading block.
#[derive(Debug, Clone, PartialEq)]
pub struct ShrinkageBlock {
    /// Local precisions, same shape as the loading block.
    pub phi: DMatrix<f64>,
    pub delta: Vec<f64>,
    /// `τ_k = Π_{i ≤ k} δ_i`.
    pub tau: Vec<f64>,
}

impl ShrinkageBlock {
    /// Prior means: `φ = 1`, `δ₁ = a₁`, `δ_h = a₂`.
    pub fn at_prior_mean(p: usize, cols: usize, a1: f64, a2: f64) -> Self {
        let delta: Vec<f64> = (0..cols).map(|h| if h == 0 { a1 } else { a2 }).collect();
        let mut block = Self {
            phi: DMatrix::from_element(p, cols, 1.0),
            tau: Vec::new(),
            delta,
        };
        block.refresh_tau();
        block
    }

    pub fn refresh_tau(&mut self) {
        let mut acc = 1.0;
        self.tau = self
            .delta
            .iter()
            .map(|d| {
                acc *= d;
                acc
            })
            .collect();
    }

    /// Prior precision `φ_lk τ_k` of loading entry `(l, k)`.
    pub fn precision(&self, l: usize, k: usize) -> f64 {
        self.phi[(l, k)] * self.tau[k]
    }

    /// Drops the listed columns, keeping `τ` of the survivors and re-deriving
    /// `δ` as ratios so that `τ` stays the cumulative product.
    pub fn remove_columns(&mut self, drop: &[usize]) {
        let keep: Vec<usize> = (0..self.delta.len()).filter(|c| !drop.contains(c)).collect();
        let tau: Vec<f64> = keep.iter().map(|&c| self.tau[c]).collect();
        self.phi = self.phi.select_columns(&keep);
        let mut prev = 1.0;
        self.delta = tau
            .iter()
            .map(|&t| {
                let d = t / prev;
                prev = t;
                d
            })
            .collect();
        self.refresh_tau();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShrinkageState {
    pub lambda: ShrinkageBlock,
    pub gamma1: ShrinkageBlock,
    pub gamma2: ShrinkageBlock,
}

impl ShrinkageState {
    pub fn individual(&self, which: Series) -> &ShrinkageBlock {
        match which {
            Series::X => &self.gamma1,
            Series::Y => &self.gamma2,
        }
    }
}

/// One full parameter configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    /// `p × r` shared loadings.
    pub lambda: DMatrix<f64>,
    /// `p × r₁`.
    pub gamma1: DMatrix<f64>,
    /// `p × r₂`.
    pub gamma2: DMatrix<f64>,
    /// Diagonal of `Ξ₁` (length `r`).
    pub xi1: DVector<f64>,
    /// Diagonal of `Ξ₂` (length `r`).
    pub xi2: DVector<f64>,
    /// `r × K` coefficients of `η`.
    pub beta_shared: DMatrix<f64>,
    /// `r₁ × K₁` coefficients of `ζ₁`.
    pub beta1: DMatrix<f64>,
    /// `r₂ × K₂` coefficients of `ζ₂`.
    pub beta2: DMatrix<f64>,
    pub sigma1_sq: DVector<f64>,
    pub sigma2_sq: DVector<f64>,
    pub warp: WarpParams,
    pub shrinkage: ShrinkageState,
}

impl ModelState {
    pub fn p(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn rank(&self) -> usize {
        self.lambda.ncols()
    }

    pub fn rank1(&self) -> usize {
        self.gamma1.ncols()
    }

    pub fn rank2(&self) -> usize {
        self.gamma2.ncols()
    }

    pub fn gamma(&self, which: Series) -> &DMatrix<f64> {
        match which {
            Series::X => &self.gamma1,
            Series::Y => &self.gamma2,
        }
    }

    pub fn xi(&self, which: Series) -> &DVector<f64> {
        match which {
            Series::X => &self.xi1,
            Series::Y => &self.xi2,
        }
    }

    pub fn beta_ind(&self, which: Series) -> &DMatrix<f64> {
        match which {
            Series::X => &self.beta1,
            Series::Y => &self.beta2,
        }
    }

    pub fn sigma_sq(&self, which: Series) -> &DVector<f64> {
        match which {
            Series::X => &self.sigma1_sq,
            Series::Y => &self.sigma2_sq,
        }
    }

    /// `ΛΞ₁` or `ΛΞ₂`.
    pub fn shared_loading(&self, which: Series) -> DMatrix<f64> {
        let xi = self.xi(which);
        let mut out = self.lambda.clone();
        for (c, mut col) in out.column_iter_mut().enumerate() {
            col *= xi[c];
        }
        out
    }

    /// `ΨΓ₁` or `ΨΓ₂`.
    pub fn individual_loading(&self, which: Series) -> Result<DMatrix<f64>> {
        Ok(projector(&self.lambda)? * self.gamma(which))
    }

    /// Checks that all block dimensions agree and variances are positive.
    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        let (r, r1, r2) = (self.rank(), self.rank1(), self.rank2());
        let dims_ok = r >= 1
            && r1 >= 1
            && r2 >= 1
            && self.gamma1.nrows() == p
            && self.gamma2.nrows() == p
            && self.xi1.len() == r
            && self.xi2.len() == r
            && self.beta_shared.nrows() == r
            && self.beta1.nrows() == r1
            && self.beta2.nrows() == r2
            && self.sigma1_sq.len() == p
            && self.sigma2_sq.len() == p
            && self.shrinkage.lambda.phi.shape() == (p, r)
            && self.shrinkage.gamma1.phi.shape() == (p, r1)
            && self.shrinkage.gamma2.phi.shape() == (p, r2)
            && self.shrinkage.lambda.delta.len() == r
            && self.shrinkage.gamma1.delta.len() == r1
            && self.shrinkage.gamma2.delta.len() == r2;
        if !dims_ok {
            return Err(Error::Dimension(format!(
                "inconsistent state: p={p}, r={r}, r1={r1}, r2={r2}"
            )));
        }
        for sig in [&self.sigma1_sq, &self.sigma2_sq] {
            if let Some((index, &value)) = sig.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                return Err(Error::NonPositiveVariance { index, value });
            }
        }
        Ok(())
    }
}

/// Orthonormal basis of the column space of `Λ` (thin SVD, rank-checked).
pub fn column_space(lambda: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cols = lambda.ncols();
    if cols == 0 {
        return Ok(DMatrix::zeros(lambda.nrows(), 0));
    }
    if cols > lambda.nrows() {
        return Err(Error::RankDeficient {
            rank: lambda.nrows(),
            cols,
        });
    }
    let svd = lambda.clone().svd(true, false);
    let sv = &svd.singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let rank = sv.iter().filter(|&&s| s > max * RANK_TOL && s > 0.0).count();
    if rank < cols {
        return Err(Error::RankDeficient { rank, cols });
    }
    Ok(svd.u.expect("requested U"))
}

/// `Ψ = I − Λ(ΛᵀΛ)⁻¹Λᵀ`, computed from an orthonormal basis of `col(Λ)`.
pub fn projector(lambda: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = lambda.nrows();
    let u = column_space(lambda)?;
    let mut psi = DMatrix::identity(p, p);
    if u.ncols() > 0 {
        psi -= &u * u.transpose();
    }
    // exact symmetry keeps downstream Gram matrices symmetric
    for i in 0..p {
        for k in (i + 1)..p {
            let v = 0.5 * (psi[(i, k)] + psi[(k, i)]);
            psi[(i, k)] = v;
            psi[(k, i)] = v;
        }
    }
    Ok(psi)
}

/// Factor curves `coef · χᵀ` (rows are factors, columns are times).
pub fn factor_curves(coef: &DMatrix<f64>, chi: &DMatrix<f64>) -> DMatrix<f64> {
    coef * chi.transpose()
}

/// `ΛΞ₁η(t)` (`warped = false`) or `ΛΞ₂η(M(t))` (`warped = true`) on `grid`.
pub fn shared_mean(state: &ModelState, bases: &Bases, grid: &[f64], warped: bool) -> Result<DMatrix<f64>> {
    let (which, times) = if warped {
        (Series::Y, warped_grid(&state.warp, grid)?)
    } else {
        (Series::X, grid.to_vec())
    };
    let chi = bases.shared.eval_matrix(&times)?;
    Ok(state.shared_loading(which) * factor_curves(&state.beta_shared, &chi))
}

/// `ΨΓ_wζ_w(t)` on `grid`.
pub fn individual_mean(state: &ModelState, bases: &Bases, grid: &[f64], which: Series) -> Result<DMatrix<f64>> {
    let chi = bases.individual(which).eval_matrix(grid)?;
    Ok(state.individual_loading(which)? * factor_curves(state.beta_ind(which), &chi))
}

/// Shared and individual mean matrices of both series on the design grids.
#[derive(Debug, Clone)]
pub struct Means {
    pub shared_x: DMatrix<f64>,
    pub ind_x: DMatrix<f64>,
    pub shared_y: DMatrix<f64>,
    pub ind_y: DMatrix<f64>,
}

impl Means {
    pub fn compute(state: &ModelState, design: &Design) -> Result<Self> {
        let psi = projector(&state.lambda)?;
        Self::with_projector(state, design, &psi)
    }

    pub fn with_projector(state: &ModelState, design: &Design, psi: &DMatrix<f64>) -> Result<Self> {
        let chi_y = design.chi_y_warped(&state.warp)?;
        Ok(Self {
            shared_x: state.shared_loading(Series::X) * factor_curves(&state.beta_shared, &design.chi_x),
            shared_y: state.shared_loading(Series::Y) * factor_curves(&state.beta_shared, &chi_y),
            ind_x: psi * &state.gamma1 * factor_curves(&state.beta1, &design.chi_x_ind),
            ind_y: psi * &state.gamma2 * factor_curves(&state.beta2, &design.chi_y_ind),
        })
    }

    pub fn shared(&self, which: Series) -> &DMatrix<f64> {
        match which {
            Series::X => &self.shared_x,
            Series::Y => &self.shared_y,
        }
    }

    pub fn individual(&self, which: Series) -> &DMatrix<f64> {
        match which {
            Series::X => &self.ind_x,
            Series::Y => &self.ind_y,
        }
    }

    pub fn total(&self, which: Series) -> DMatrix<f64> {
        self.shared(which) + self.individual(which)
    }
}

fn gaussian_loglik(data: &DMatrix<f64>, mean: &DMatrix<f64>, sigma_sq: &DVector<f64>) -> Result<f64> {
    if let Some((index, &value)) = sigma_sq.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonPositiveVariance { index, value });
    }
    let t = data.ncols() as f64;
    let mut ll = 0.0;
    for i in 0..data.nrows() {
        let s2 = sigma_sq[i];
        let mut ssr = 0.0;
        for c in 0..data.ncols() {
            let r = data[(i, c)] - mean[(i, c)];
            ssr += r * r;
        }
        ll += -0.5 * t * math::ln(2.0 * math::PI * s2) - 0.5 * ssr / s2;
    }
    Ok(ll)
}

/// Full Gaussian log-likelihood of both series, normalising constants
/// included.
pub fn log_likelihood(state: &ModelState, data: &SeriesPair, design: &Design) -> Result<f64> {
    let means = Means::compute(state, design)?;
    log_likelihood_with_means(state, data, &means)
}

pub fn log_likelihood_with_means(state: &ModelState, data: &SeriesPair, means: &Means) -> Result<f64> {
    let lx = gaussian_loglik(&data.x, &means.total(Series::X), &state.sigma1_sq)?;
    let ly = gaussian_loglik(&data.y, &means.total(Series::Y), &state.sigma2_sq)?;
    Ok(lx + ly)
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn projector_on_first_axis() {
        let lambda = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let psi = projector(&lambda).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(alloc::vec![0.0, 1.0, 1.0]));
        assert!((psi - expected).abs().max() < 1e-15);
    }

    #[test]
    fn projector_matches_explicit_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let lambda = randn(&mut rng, 6, 2);
            let psi = projector(&lambda).unwrap();
            let gram = lambda.transpose() * &lambda;
            let explicit = DMatrix::identity(6, 6) - &lambda * gram.lu().solve(&lambda.transpose()).unwrap();
            assert!((&psi - explicit).abs().max() < 1e-10);
            assert!((&psi * &psi - &psi).abs().max() < 1e-10);
            assert!((&psi * &lambda).abs().max() < 1e-10);
            assert!((psi.trace() - 4.0).abs() < 1e-8);
            assert!((&psi - psi.transpose()).abs().max() == 0.0);
        }
    }

    #[test]
    fn projector_rejects_rank_deficiency() {
        let mut lambda = DMatrix::zeros(4, 2);
        lambda[(0, 0)] = 1.0;
        lambda[(0, 1)] = 2.0;
        assert_eq!(projector(&lambda), Err(Error::RankDeficient { rank: 1, cols: 2 }));
    }

    #[test]
    fn shared_mean_identity_factor() {
        let (mut state, _, _, _) = random_instance(1, 3, 1, 1, 1, 4);
        let bases = Bases {
            shared: BSplineBasis::new(1, 2).unwrap(),
            ..Bases::new(&HyperParams::default()).unwrap()
        };
        state.xi1 = DVector::from_element(1, 1.0);
        state.beta_shared = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let grid = [0.0, 0.25, 0.6, 1.0];
        let m = shared_mean(&state, &bases, &grid, false).unwrap();
        for (c, &t) in grid.iter().enumerate() {
            for i in 0..3 {
                assert!((m[(i, c)] - state.lambda[(i, 0)] * t).abs() < 1e-14);
            }
        }
        state.beta_shared.fill(0.0);
        assert!(shared_mean(&state, &bases, &grid, true).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn means_match_direct_summation() {
        let (state, _, design, _) = random_instance(2, 3, 2, 2, 2, 5);
        let bases = &design.bases;
        let psi = projector(&state.lambda).unwrap();
        let mx = shared_mean(&state, bases, &design.grid_x, false).unwrap();
        let my = shared_mean(&state, bases, &design.grid_y, true).unwrap();
        let ix = individual_mean(&state, bases, &design.grid_x, Series::X).unwrap();
        for (c, &t) in design.grid_x.iter().enumerate() {
            let chi = bases.shared.eval(t).unwrap();
            let chi1 = bases.ind1.eval(t).unwrap();
            for i in 0..3 {
                let mut s = 0.0;
                for f in 0..2 {
                    for k in 0..chi.len() {
                        s += state.lambda[(i, f)] * state.xi1[f] * state.beta_shared[(f, k)] * chi[k];
                    }
                }
                assert!((s - mx[(i, c)]).abs() < 1e-12);
                let mut s = 0.0;
                for l in 0..3 {
                    for f in 0..2 {
                        for k in 0..chi1.len() {
                            s += psi[(i, l)] * state.gamma1[(l, f)] * state.beta1[(f, k)] * chi1[k];
                        }
                    }
                }
                assert!((s - ix[(i, c)]).abs() < 1e-12);
            }
        }
        for (c, &t) in design.grid_y.iter().enumerate() {
            let chi = bases.shared.eval(state.warp.eval(t).unwrap().clamp(0.0, 1.0)).unwrap();
            for i in 0..3 {
                let mut s = 0.0;
                for f in 0..2 {
                    for k in 0..chi.len() {
                        s += state.lambda[(i, f)] * state.xi2[f] * state.beta_shared[(f, k)] * chi[k];
                    }
                }
                assert!((s - my[(i, c)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn individual_mean_vanishes_inside_shared_space() {
        let (mut state, _, design, _) = random_instance(3, 4, 2, 2, 2, 6);
        state.gamma1 = &state.lambda * DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let m = individual_mean(&state, &design.bases, &design.grid_x, Series::X).unwrap();
        assert!(m.abs().max() < 1e-10);
        state.gamma2.fill(0.0);
        let m = individual_mean(&state, &design.bases, &design.grid_y, Series::Y).unwrap();
        assert!(m.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn loglik_scalar_cases() {
        let (mut state, _, _, _) = random_instance(4, 1, 1, 1, 1, 1);
        state.beta_shared.fill(0.0);
        state.beta1.fill(0.0);
        state.beta2.fill(0.0);
        state.sigma1_sq.fill(1.0);
        state.sigma2_sq.fill(1.0);
        let bases = Bases::new(&HyperParams { k: 5, k1: 4, k2: 6, j: 6, ..HyperParams::default() }).unwrap();
        let design = Design::new(bases, &[0.5], &[0.5]).unwrap();
        let data = SeriesPair::new(DMatrix::zeros(1, 1), DMatrix::zeros(1, 1), alloc::vec![0.5], alloc::vec![0.5]).unwrap();
        let ll = log_likelihood(&state, &data, &design).unwrap();
        assert!((ll + (2.0 * math::PI).ln()).abs() < 1e-14);
        state.sigma1_sq.fill(2.0);
        state.sigma2_sq.fill(2.0);
        let ll2 = log_likelihood(&state, &data, &design).unwrap();
        assert!((ll - ll2 - 2.0f64.ln()).abs() < 1e-14);
        state.sigma2_sq.fill(0.0);
        assert!(matches!(log_likelihood(&state, &data, &design), Err(Error::NonPositiveVariance { .. })));
    }

    #[test]
    fn loglik_matches_scalar_loop() {
        let (state, data, design, _) = random_instance(5, 4, 2, 2, 3, 7);
        let ll = log_likelihood(&state, &data, &design).unwrap();
        let psi = projector(&state.lambda).unwrap();
        let mut oracle = 0.0;
        for (series, m, grid, gamma, beta, basis, xi, sig) in [
            (Series::X, &data.x, &data.grid_x, &state.gamma1, &state.beta1, &design.bases.ind1, &state.xi1, &state.sigma1_sq),
            (Series::Y, &data.y, &data.grid_y, &state.gamma2, &state.beta2, &design.bases.ind2, &state.xi2, &state.sigma2_sq),
        ] {
            for (c, &t) in grid.iter().enumerate() {
                let ts = if series == Series::Y { state.warp.eval(t).unwrap().clamp(0.0, 1.0) } else { t };
                let chi = design.bases.shared.eval(ts).unwrap();
                let chii = basis.eval(t).unwrap();
                for i in 0..4 {
                    let mut mu = 0.0;
                    for f in 0..state.rank() {
                        let eta: f64 = (0..chi.len()).map(|k| state.beta_shared[(f, k)] * chi[k]).sum();
                        mu += state.lambda[(i, f)] * xi[f] * eta;
                    }
                    for l in 0..4 {
                        for f in 0..gamma.ncols() {
                            let z: f64 = (0..chii.len()).map(|k| beta[(f, k)] * chii[k]).sum();
                            mu += psi[(i, l)] * gamma[(l, f)] * z;
                        }
                    }
                    let r = m[(i, c)] - mu;
                    oracle += -0.5 * (2.0 * core::f64::consts::PI * sig[i]).ln() - 0.5 * r * r / sig[i];
                }
            }
        }
        assert!((ll - oracle).abs() < 1e-10 * oracle.abs().max(1.0), "{ll} vs {oracle}");
    }

    #[test]
    fn rotating_shared_pathway_keeps_mean() {
        let (state, _, design, _) = random_instance(6, 5, 2, 1, 1, 8);
        let a = state.shared_loading(Series::X);
        let eta = factor_curves(&state.beta_shared, &design.chi_x);
        let th: f64 = 0.7;
        let rot = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
        let m1 = &a * &eta;
        let m2 = (&a * &rot) * (rot.transpose() * &eta);
        assert!((m1 - m2).abs().max() < 1e-10);
    }

    #[test]
    fn orthogonality_of_decomposition() {
        let (state, _, _, _) = random_instance(7, 6, 3, 2, 2, 5);
        for w in [Series::X, Series::Y] {
            let ind = state.individual_loading(w).unwrap();
            assert!((state.lambda.transpose() * ind).abs().max() < 1e-8);
        }
    }

    #[test]
    fn shrinkage_column_removal_keeps_tau() {
        let mut b = ShrinkageBlock::at_prior_mean(3, 4, 2.0, 3.0);
        let tau = b.tau.clone();
        b.remove_columns(&[1]);
        assert_eq!(b.tau.len(), 3);
        for (a, e) in b.tau.iter().zip([tau[0], tau[2], tau[3]]) {
            assert!((a - e).abs() < 1e-12 * e);
        }
        assert_eq!(b.phi.ncols(), 3);
    }

    #[test]
    fn series_pair_validation() {
        let ok = SeriesPair::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 3), alloc::vec![0.0, 1.0], alloc::vec![0.0, 0.5, 1.0]);
        assert!(ok.is_ok());
        assert!(SeriesPair::new(DMatrix::zeros(2, 2), DMatrix::zeros(3, 2), alloc::vec![0.0, 1.0], alloc::vec![0.0, 1.0]).is_err());
        assert!(SeriesPair::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 2), alloc::vec![1.0, 0.0], alloc::vec![0.0, 1.0]).is_err());
        let mut x = DMatrix::zeros(2, 2);
        x[(1, 1)] = f64::NAN;
        assert!(SeriesPair::new(x, DMatrix::zeros(2, 2), alloc::vec![0.0, 1.0], alloc::vec![0.0, 1.0]).is_err());
        let pair = ok.unwrap();
        let sub = pair.select_columns(&[1], &[0, 2]).unwrap();
        assert_eq!(sub.grid_y, alloc::vec![0.0, 1.0]);
        assert!(pair.select_columns(&[5], &[0]).is_err());
    }
}
