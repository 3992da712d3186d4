//! Post-MCMC inference.
//!
//! Loadings are only identified up to rotation, so before any entry-wise
//! summary the chain is aligned: the first sample is rotated to its
//! principal axes and every later sample is rotated onto its (aligned)
//! predecessor by the orthogonal Procrustes solution. The same rotation is
//! applied to the factor coefficients so each sample's mean, and hence its
//! likelihood, is unchanged.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math;
use crate::model::{
    factor_curves, individual_mean, projector, shared_mean, warped_grid, Bases, Design, ModelState, Series,
    SeriesPair,
};
use crate::sampler::Chain;

/// `R = Q₂Q₁ᵀ` from the SVD `AᵀB = Q₁DQ₂ᵀ`; minimises `‖A − BR‖_F` over
/// orthonormal `R` (rotations and reflections).
pub fn procrustes_rotation(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "procrustes needs equal shapes, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let svd = (a.transpose() * b).svd(true, true);
    let q1 = svd.u.expect("requested U");
    let q2 = svd.v_t.expect("requested V").transpose();
    Ok(q2 * q1.transpose())
}

/// Right singular vectors of `m` (columns ordered by decreasing singular
/// value).
fn right_singular_vectors(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().svd(false, true).v_t.expect("requested V").transpose()
}

/// Index of the most frequent value; ties go to the smaller value.
fn modal(values: &[usize]) -> Option<usize> {
    let max = *values.iter().max()?;
    let mut counts = vec![0usize; max + 1];
    for &v in values {
        counts[v] += 1;
    }
    (0..=max).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
}

/// Aligned shared block: `ΛΞ₁R`, `ΛΞ₂R` and `Rᵀβ` per retained sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedShared {
    /// Chain positions of the retained samples.
    pub indices: Vec<usize>,
    pub loading1: Vec<DMatrix<f64>>,
    pub loading2: Vec<DMatrix<f64>>,
    pub beta: Vec<DMatrix<f64>>,
    /// Samples dropped because their rank differed from the modal rank.
    pub excluded: usize,
}

/// Aligned individual block: `ΨΓ_wR` and `Rᵀβ_w`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedIndividual {
    pub indices: Vec<usize>,
    pub loading: Vec<DMatrix<f64>>,
    pub beta: Vec<DMatrix<f64>>,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedChain {
    pub shared: AlignedShared,
    pub ind1: AlignedIndividual,
    pub ind2: AlignedIndividual,
}

/// Successive Procrustes alignment of `loadings` (and, with the same
/// rotation, of every matrix in `coupled` and the left factor `coefs`).
/// `first` gives the initial rotation of sample 0.
fn align_sequence(
    loadings: &mut [DMatrix<f64>],
    coupled: &mut [DMatrix<f64>],
    coefs: &mut [DMatrix<f64>],
    first: &DMatrix<f64>,
) -> Result<()> {
    for i in 0..loadings.len() {
        let rot = if i == 0 {
            first.clone()
        } else {
            procrustes_rotation(&loadings[i - 1], &loadings[i])?
        };
        loadings[i] = &loadings[i] * &rot;
        if !coupled.is_empty() {
            coupled[i] = &coupled[i] * &rot;
        }
        coefs[i] = rot.transpose() * &coefs[i];
    }
    Ok(())
}

/// Aligns the shared block and both individual blocks of `chain`. `data`
/// must be the series the chain was fitted to.
pub fn align_chain(chain: &Chain, data: &SeriesPair) -> Result<AlignedChain> {
    if chain.samples.is_empty() {
        return Err(Error::EmptyChain);
    }
    let design = Design::for_data(&chain.hyper, data)?;
    let ranks: Vec<usize> = chain.samples.iter().map(|s| s.rank()).collect();
    let ranks1: Vec<usize> = chain.samples.iter().map(|s| s.rank1()).collect();
    let ranks2: Vec<usize> = chain.samples.iter().map(|s| s.rank2()).collect();
    let pick = |rs: &[usize]| -> Vec<usize> {
        let m = modal(rs).unwrap_or(0);
        (0..rs.len()).filter(|&i| rs[i] == m).collect()
    };

    let idx = pick(&ranks);
    let mut l1 = Vec::with_capacity(idx.len());
    let mut l2 = Vec::with_capacity(idx.len());
    let mut beta = Vec::with_capacity(idx.len());
    for &i in &idx {
        let s = &chain.samples[i];
        l1.push(s.shared_loading(Series::X));
        l2.push(s.shared_loading(Series::Y));
        beta.push(s.beta_shared.clone());
    }
    // (X − ΨΓ₁ζ₁)ᵀ ΛΞ₁ of the first retained sample
    let s0 = &chain.samples[idx[0]];
    let psi0 = projector(&s0.lambda)?;
    let resid = &data.x - &psi0 * &s0.gamma1 * factor_curves(&s0.beta1, &design.chi_x_ind);
    let first = right_singular_vectors(&(resid.transpose() * &l1[0]));
    align_sequence(&mut l1, &mut l2, &mut beta, &first)?;
    let shared = AlignedShared {
        excluded: chain.samples.len() - idx.len(),
        indices: idx,
        loading1: l1,
        loading2: l2,
        beta,
    };

    let individual = |which: Series, rs: &[usize]| -> Result<AlignedIndividual> {
        let idx = pick(rs);
        let mut load = Vec::with_capacity(idx.len());
        let mut beta = Vec::with_capacity(idx.len());
        for &i in &idx {
            let s = &chain.samples[i];
            load.push(s.individual_loading(which)?);
            beta.push(s.beta_ind(which).clone());
        }
        // same construction with the shared part removed from the data
        let s0 = &chain.samples[idx[0]];
        let (d, _) = data.series(which);
        let chi = match which {
            Series::X => design.chi_x.clone(),
            Series::Y => design.chi_y_warped(&s0.warp)?,
        };
        let resid = d - s0.shared_loading(which) * factor_curves(&s0.beta_shared, &chi);
        let first = right_singular_vectors(&(resid.transpose() * &load[0]));
        align_sequence(&mut load, &mut [], &mut beta, &first)?;
        Ok(AlignedIndividual {
            excluded: chain.samples.len() - idx.len(),
            indices: idx,
            loading: load,
            beta,
        })
    };
    Ok(AlignedChain {
        shared,
        ind1: individual(Series::X, &ranks1)?,
        ind2: individual(Series::Y, &ranks2)?,
    })
}

impl AlignedChain {
    /// Log-likelihood of every retained shared-block sample, recomputed
    /// from the aligned quantities (the individual part and variances come
    /// from the original sample).
    pub fn shared_log_likelihoods(&self, chain: &Chain, data: &SeriesPair) -> Result<Vec<f64>> {
        let design = Design::for_data(&chain.hyper, data)?;
        let mut out = Vec::with_capacity(self.shared.indices.len());
        for (k, &i) in self.shared.indices.iter().enumerate() {
            let s = &chain.samples[i];
            let psi = projector(&s.lambda)?;
            let chi_y = design.chi_y_warped(&s.warp)?;
            let mx = &self.shared.loading1[k] * factor_curves(&self.shared.beta[k], &design.chi_x)
                + &psi * &s.gamma1 * factor_curves(&s.beta1, &design.chi_x_ind);
            let my = &self.shared.loading2[k] * factor_curves(&self.shared.beta[k], &chi_y)
                + &psi * &s.gamma2 * factor_curves(&s.beta2, &design.chi_y_ind);
            out.push(gaussian_loglik(&data.x, &mx, &s.sigma1_sq) + gaussian_loglik(&data.y, &my, &s.sigma2_sq));
        }
        Ok(out)
    }
}

fn gaussian_loglik(data: &DMatrix<f64>, mean: &DMatrix<f64>, sigma_sq: &DVector<f64>) -> f64 {
    let mut ll = 0.0;
    for i in 0..data.nrows() {
        let s2 = sigma_sq[i];
        let ssr: f64 = (0..data.ncols()).map(|c| data[(i, c)] - mean[(i, c)]).map(|d| d * d).sum();
        ll += -0.5 * data.ncols() as f64 * math::ln(2.0 * math::PI * s2) - 0.5 * ssr / s2;
    }
    ll
}

/// `SP = |0.5 − P(A_ij > 0)| / 0.5` with the probability estimated by the
/// fraction of samples in which the entry is positive.
pub fn sp_importance(samples: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    if samples.len() < 2 {
        return Err(Error::EmptyChain);
    }
    let shape = samples[0].shape();
    if samples.iter().any(|s| s.shape() != shape) {
        return Err(Error::Dimension("SP samples differ in shape".into()));
    }
    let n = samples.len() as f64;
    Ok(DMatrix::from_fn(shape.0, shape.1, |i, j| {
        let pos = samples.iter().filter(|s| s[(i, j)] > 0.0).count() as f64 / n;
        (0.5 - pos).abs() / 0.5
    }))
}

/// Shared-variance fractions `ρ_w,lt = s² / (i² + s² + σ²_wl)` from the
/// shared mean `s` and individual mean `i` on a common grid.
fn variance_fractions(shared: &DMatrix<f64>, ind: &DMatrix<f64>, sigma_sq: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(shared.nrows(), shared.ncols(), |l, t| {
        let s = shared[(l, t)] * shared[(l, t)];
        s / (ind[(l, t)] * ind[(l, t)] + s + sigma_sq[l])
    })
}

/// `1 − (1/(pT)) Σ_l |Σ_t (ρ₁,lt − ρ₂,lt)|`.
pub fn syn_from_fractions(rho1: &DMatrix<f64>, rho2: &DMatrix<f64>) -> f64 {
    let (p, t) = rho1.shape();
    let total: f64 = (0..p)
        .map(|l| (0..t).map(|c| rho1[(l, c)] - rho2[(l, c)]).sum::<f64>().abs())
        .sum();
    1.0 - total / (p * t) as f64
}

/// Mean matrices of one sample on `grid`: `(shared X, individual X, shared
/// Y at M(t), individual Y)`.
fn sample_curves(
    s: &ModelState,
    bases: &Bases,
    grid: &[f64],
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    Ok((
        shared_mean(s, bases, grid, false)?,
        individual_mean(s, bases, grid, Series::X)?,
        shared_mean(s, bases, grid, true)?,
        individual_mean(s, bases, grid, Series::Y)?,
    ))
}

/// `Syn` of a single parameter configuration on `grid`.
pub fn syn_of_state(state: &ModelState, bases: &Bases, grid: &[f64]) -> Result<f64> {
    let (sx, ix, sy, iy) = sample_curves(state, bases, grid)?;
    Ok(syn_from_fractions(
        &variance_fractions(&sx, &ix, &state.sigma1_sq),
        &variance_fractions(&sy, &iy, &state.sigma2_sq),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynSummary {
    /// Posterior mean of the per-sample scores.
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    /// Score at the posterior means of the mean curves and variances.
    pub plug_in: f64,
    pub per_sample: Vec<f64>,
}

pub fn syn_similarity(chain: &Chain, grid: &[f64]) -> Result<SynSummary> {
    if chain.samples.is_empty() {
        return Err(Error::EmptyChain);
    }
    let bases = Bases::new(&chain.hyper)?;
    let p = chain.samples[0].p();
    let t = grid.len();
    let mut per_sample = Vec::with_capacity(chain.samples.len());
    let mut acc = [
        DMatrix::zeros(p, t),
        DMatrix::zeros(p, t),
        DMatrix::zeros(p, t),
        DMatrix::zeros(p, t),
    ];
    let mut sig1 = DVector::zeros(p);
    let mut sig2 = DVector::zeros(p);
    for s in &chain.samples {
        let (sx, ix, sy, iy) = sample_curves(s, &bases, grid)?;
        per_sample.push(syn_from_fractions(
            &variance_fractions(&sx, &ix, &s.sigma1_sq),
            &variance_fractions(&sy, &iy, &s.sigma2_sq),
        ));
        acc[0] += sx;
        acc[1] += ix;
        acc[2] += sy;
        acc[3] += iy;
        sig1 += &s.sigma1_sq;
        sig2 += &s.sigma2_sq;
    }
    let n = chain.samples.len() as f64;
    let [sx, ix, sy, iy] = acc.map(|m| m / n);
    let plug_in = syn_from_fractions(
        &variance_fractions(&sx, &ix, &(sig1 / n)),
        &variance_fractions(&sy, &iy, &(sig2 / n)),
    );
    let (lo, hi) = math::interval(&per_sample, 0.025, 0.975);
    Ok(SynSummary {
        mean: math::mean(&per_sample),
        lo,
        hi,
        plug_in,
        per_sample,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarpSummary {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Pointwise posterior mean and 2.5 / 97.5 percentiles of `M(t)`.
pub fn warp_summary(chain: &Chain, grid: &[f64]) -> Result<WarpSummary> {
    if chain.samples.is_empty() {
        return Err(Error::EmptyChain);
    }
    let curves: Vec<Vec<f64>> = chain
        .samples
        .iter()
        .map(|s| warped_grid(&s.warp, grid))
        .collect::<Result<_>>()?;
    let mut mean = Vec::with_capacity(grid.len());
    let mut lo = Vec::with_capacity(grid.len());
    let mut hi = Vec::with_capacity(grid.len());
    let mut column = vec![0.0; curves.len()];
    for g in 0..grid.len() {
        for (c, curve) in column.iter_mut().zip(&curves) {
            *c = curve[g];
        }
        mean.push(math::mean(&column));
        let (l, h) = math::interval(&column, 0.025, 0.975);
        lo.push(l);
        hi.push(h);
    }
    Ok(WarpSummary {
        grid: grid.to_vec(),
        mean,
        lo,
        hi,
    })
}

/// Held-out time columns of each series, as indices into the full data.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HeldOut {
    pub x: Vec<usize>,
    pub y: Vec<usize>,
}

impl HeldOut {
    /// Complementary training columns for a series with `t1` and `t2`
    /// columns.
    pub fn training(&self, t1: usize, t2: usize) -> (Vec<usize>, Vec<usize>) {
        (
            (0..t1).filter(|c| !self.x.contains(c)).collect(),
            (0..t2).filter(|c| !self.y.contains(c)).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionEntry {
    pub series: Series,
    pub feature: usize,
    /// Column index in the full data.
    pub column: usize,
    pub time: f64,
    pub truth: f64,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub entries: Vec<PredictionEntry>,
    pub mse: (f64, f64),
    pub coverage: (f64, f64),
}

/// Posterior predictive summaries at the held-out columns of `full`. Each
/// sample contributes one draw `mean + N(0, σ²)` per held-out value.
pub fn predict<R: Rng + ?Sized>(chain: &Chain, full: &SeriesPair, heldout: &HeldOut, rng: &mut R) -> Result<Prediction> {
    if chain.samples.is_empty() {
        return Err(Error::EmptyChain);
    }
    for (name, cols, t) in [("X", &heldout.x, full.t1()), ("Y", &heldout.y, full.t2())] {
        if let Some(c) = cols.iter().find(|&&c| c >= t) {
            return Err(Error::HeldOut(format!("series {name} column {c} but only {t} columns")));
        }
    }
    let bases = Bases::new(&chain.hyper)?;
    let p = full.p();
    let mut entries = Vec::new();
    let mut mse = [0.0; 2];
    let mut coverage = [0.0; 2];
    for (w, (which, cols)) in [(Series::X, &heldout.x), (Series::Y, &heldout.y)].into_iter().enumerate() {
        if cols.is_empty() {
            mse[w] = f64::NAN;
            coverage[w] = f64::NAN;
            continue;
        }
        let (d, grid) = full.series(which);
        let times: Vec<f64> = cols.iter().map(|&c| grid[c]).collect();
        // draws[(feature, col)][sample]
        let mut draws = vec![Vec::with_capacity(chain.samples.len()); p * cols.len()];
        for s in &chain.samples {
            let mean = shared_mean(s, &bases, &times, which == Series::Y)? + individual_mean(s, &bases, &times, which)?;
            let sig = s.sigma_sq(which);
            for c in 0..cols.len() {
                for l in 0..p {
                    let z: f64 = rng.sample(StandardNormal);
                    draws[c * p + l].push(mean[(l, c)] + math::sqrt(sig[l]) * z);
                }
            }
        }
        let mut sq = 0.0;
        let mut inside = 0usize;
        for (c, &col) in cols.iter().enumerate() {
            for l in 0..p {
                let v = &draws[c * p + l];
                let m = math::mean(v);
                let (lo, hi) = math::interval(v, 0.025, 0.975);
                let truth = d[(l, col)];
                sq += (m - truth) * (m - truth);
                inside += (lo <= truth && truth <= hi) as usize;
                entries.push(PredictionEntry {
                    series: which,
                    feature: l,
                    column: col,
                    time: times[c],
                    truth,
                    mean: m,
                    lo,
                    hi,
                });
            }
        }
        let n = (p * cols.len()) as f64;
        mse[w] = sq / n;
        coverage[w] = inside as f64 / n;
    }
    Ok(Prediction {
        entries,
        mse: (mse[0], mse[1]),
        coverage: (coverage[0], coverage[1]),
    })
}

/// Posterior mean of the total mean curves of both series on `grid`.
pub fn fitted_means(chain: &Chain, grid: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if chain.samples.is_empty() {
        return Err(Error::EmptyChain);
    }
    let bases = Bases::new(&chain.hyper)?;
    let p = chain.samples[0].p();
    let mut mx = DMatrix::zeros(p, grid.len());
    let mut my = DMatrix::zeros(p, grid.len());
    for s in &chain.samples {
        let (sx, ix, sy, iy) = sample_curves(s, &bases, grid)?;
        mx += sx + ix;
        my += sy + iy;
    }
    let n = chain.samples.len() as f64;
    Ok((mx / n, my / n))
}

/// Everything reported after a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub sp_shared1: DMatrix<f64>,
    pub sp_shared2: DMatrix<f64>,
    pub sp_ind1: DMatrix<f64>,
    pub sp_ind2: DMatrix<f64>,
    pub warp: WarpSummary,
    pub syn: SynSummary,
    pub prediction: Option<Prediction>,
    /// Samples left out of the shared / individual alignments.
    pub excluded: (usize, usize, usize),
}

impl PosteriorSummary {
    /// Alignment, SP matrices, warp bands and `Syn` on `eval_grid`. `data`
    /// is the series the chain was fitted to.
    pub fn compute(chain: &Chain, data: &SeriesPair, eval_grid: &[f64]) -> Result<Self> {
        let aligned = align_chain(chain, data)?;
        let sp = |m: &[DMatrix<f64>]| -> Result<DMatrix<f64>> {
            if m.len() >= 2 {
                sp_importance(m)
            } else {
                // a single retained sample carries no sign uncertainty
                Ok(m[0].map(|_| 1.0))
            }
        };
        Ok(Self {
            sp_shared1: sp(&aligned.shared.loading1)?,
            sp_shared2: sp(&aligned.shared.loading2)?,
            sp_ind1: sp(&aligned.ind1.loading)?,
            sp_ind2: sp(&aligned.ind2.loading)?,
            warp: warp_summary(chain, eval_grid)?,
            syn: syn_similarity(chain, eval_grid)?,
            prediction: None,
            excluded: (aligned.shared.excluded, aligned.ind1.excluded, aligned.ind2.excluded),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testutil::{randn, random_instance};
    use crate::model::{log_likelihood, HyperParams};
    use crate::sampler::{Diagnostics, McmcConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_orthonormal(rng: &mut ChaCha8Rng, r: usize) -> DMatrix<f64> {
        randn(rng, r, r).qr().q()
    }

    fn frob(a: &DMatrix<f64>, b: &DMatrix<f64>, r: &DMatrix<f64>) -> f64 {
        (a - b * r).norm()
    }

    #[test]
    fn procrustes_identity_and_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let a = randn(&mut rng, 7, 3);
        let r = procrustes_rotation(&a, &a).unwrap();
        assert!(frob(&a, &a, &r) < 1e-10);
        let ro = random_orthonormal(&mut rng, 3);
        let b = &a * ro.transpose();
        let r = procrustes_rotation(&a, &b).unwrap();
        assert!(frob(&a, &b, &r) < 1e-10);
        assert!((r.transpose() * &r - DMatrix::identity(3, 3)).abs().max() < 1e-10);
        assert!(procrustes_rotation(&a, &randn(&mut rng, 7, 2)).is_err());
    }

    #[test]
    fn procrustes_matches_angle_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..5 {
            let a = randn(&mut rng, 6, 2);
            let b = randn(&mut rng, 6, 2);
            let r = procrustes_rotation(&a, &b).unwrap();
            let ours = frob(&a, &b, &r);
            let mut best = f64::INFINITY;
            let n = 100_000;
            for i in 0..n {
                let th = 2.0 * math::PI * i as f64 / n as f64;
                let (s, c) = (th.sin(), th.cos());
                let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
                let refl = DMatrix::from_row_slice(2, 2, &[c, s, s, -c]);
                best = best.min(frob(&a, &b, &rot)).min(frob(&a, &b, &refl));
            }
            assert!((ours - best).abs() < 1e-6, "ours {ours} grid {best}");
            assert!(ours <= frob(&a, &b, &DMatrix::identity(2, 2)) + 1e-12);
        }
    }

    fn chain_of(samples: Vec<ModelState>, hyper: HyperParams) -> Chain {
        Chain {
            samples,
            diagnostics: Diagnostics::default(),
            hyper,
            config: McmcConfig::default(),
        }
    }

    /// Rotates the shared block of `s` by an orthonormal `r` without
    /// changing the model: `Λ → ΛR`, `β → Rᵀβ`, valid when `Ξ₁ = Ξ₂ = 1`.
    fn rotate_shared(s: &ModelState, r: &DMatrix<f64>) -> ModelState {
        let mut out = s.clone();
        out.lambda = &s.lambda * r;
        out.beta_shared = r.transpose() * &s.beta_shared;
        out
    }

    #[test]
    fn alignment_of_rotated_copies() {
        let (mut s, data, _, hyper) = random_instance(43, 6, 3, 2, 2, 15);
        s.xi1.fill(1.0);
        s.xi2.fill(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let rot = random_orthonormal(&mut rng, 3);
        let chain = chain_of(vec![s.clone(), rotate_shared(&s, &rot), s.clone()], hyper);
        let aligned = align_chain(&chain, &data).unwrap();
        let sh = &aligned.shared;
        assert_eq!(sh.excluded, 0);
        for k in 1..3 {
            assert!((&sh.loading1[k] - &sh.loading1[0]).abs().max() < 1e-8);
            assert!((&sh.beta[k] - &sh.beta[0]).abs().max() < 1e-8);
        }
        // identical samples stay identical after the first transform
        let chain = chain_of(vec![s.clone(), s.clone()], chain.hyper.clone());
        let aligned = align_chain(&chain, &data).unwrap();
        assert!((&aligned.shared.loading1[0] - &aligned.shared.loading1[1]).abs().max() < 1e-12);
        assert!((&aligned.ind2.loading[0] - &aligned.ind2.loading[1]).abs().max() < 1e-12);
    }

    #[test]
    fn alignment_preserves_likelihood_and_syn() {
        let (s, data, design, hyper) = random_instance(45, 5, 2, 2, 1, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let mut samples = Vec::new();
        for _ in 0..6 {
            let mut t = s.clone();
            t.lambda += randn(&mut rng, 5, 2) * 0.1;
            t.beta_shared += randn(&mut rng, 2, hyper.k) * 0.1;
            t.xi1[0] = -t.xi1[0];
            samples.push(t);
        }
        let chain = chain_of(samples, hyper);
        let aligned = align_chain(&chain, &data).unwrap();
        let after = aligned.shared_log_likelihoods(&chain, &data).unwrap();
        for (k, &i) in aligned.shared.indices.iter().enumerate() {
            let before = log_likelihood(&chain.samples[i], &data, &design).unwrap();
            assert!((before - after[k]).abs() < 1e-8 * before.abs().max(1.0));
        }
        // Syn depends only on mean curves and variances
        let bases = Bases::new(&chain.hyper).unwrap();
        let grid: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
        for (k, &i) in aligned.shared.indices.iter().enumerate() {
            let orig = &chain.samples[i];
            let chi = bases.shared.eval_matrix(&grid).unwrap();
            let chi_y = bases.shared.eval_matrix(&warped_grid(&orig.warp, &grid).unwrap()).unwrap();
            let sx = &aligned.shared.loading1[k] * factor_curves(&aligned.shared.beta[k], &chi);
            let sy = &aligned.shared.loading2[k] * factor_curves(&aligned.shared.beta[k], &chi_y);
            let ix = individual_mean(orig, &bases, &grid, Series::X).unwrap();
            let iy = individual_mean(orig, &bases, &grid, Series::Y).unwrap();
            let rotated = syn_from_fractions(
                &variance_fractions(&sx, &ix, &orig.sigma1_sq),
                &variance_fractions(&sy, &iy, &orig.sigma2_sq),
            );
            assert!((rotated - syn_of_state(orig, &bases, &grid).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn modal_rank_filtering() {
        let (s, data, _, hyper) = random_instance(47, 5, 2, 1, 1, 10);
        let mut small = s.clone();
        small.lambda = small.lambda.columns(0, 1).into_owned();
        small.xi1 = DVector::from_element(1, small.xi1[0]);
        small.xi2 = DVector::from_element(1, small.xi2[0]);
        small.beta_shared = small.beta_shared.rows(0, 1).into_owned();
        let chain = chain_of(vec![s.clone(), small, s.clone()], hyper);
        let aligned = align_chain(&chain, &data).unwrap();
        assert_eq!(aligned.shared.indices, vec![0, 2]);
        assert_eq!(aligned.shared.excluded, 1);
        assert_eq!(modal(&[3, 2, 2, 3]), Some(2));
    }

    #[test]
    fn sp_examples() {
        let pos = DMatrix::from_element(1, 1, 1.0);
        let neg = DMatrix::from_element(1, 1, -1.0);
        assert_eq!(sp_importance(&[pos.clone(), pos.clone()]).unwrap()[(0, 0)], 1.0);
        assert_eq!(sp_importance(&[pos.clone(), neg.clone()]).unwrap()[(0, 0)], 0.0);
        let mut v = vec![pos.clone(); 9];
        v.push(neg.clone());
        assert!((sp_importance(&v).unwrap()[(0, 0)] - 0.8).abs() < 1e-15);
        v.reverse();
        assert!((sp_importance(&v).unwrap()[(0, 0)] - 0.8).abs() < 1e-15);
        assert!(sp_importance(&[pos]).is_err());
    }

    #[test]
    fn syn_examples() {
        // p = 1, T = 1: fractions 0.5 and 0
        let r1 = DMatrix::from_element(1, 1, 0.5);
        let r2 = DMatrix::from_element(1, 1, 0.0);
        assert!((syn_from_fractions(&r1, &r2) - 0.5).abs() < 1e-15);

        // Γ = 0, Ξ₁ = Ξ₂, M(t) = t with a linear warp basis, σ₁ = σ₂
        let (mut s, _, _, mut hyper) = random_instance(48, 4, 2, 1, 1, 10);
        hyper.warp_degree = 1;
        let bases = Bases::new(&hyper).unwrap();
        s.warp = crate::warp::WarpParams::identity(bases.warp.clone()).unwrap();
        s.gamma1.fill(0.0);
        s.gamma2.fill(0.0);
        s.xi2 = s.xi1.clone();
        s.sigma2_sq = s.sigma1_sq.clone();
        let grid: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        assert!((syn_of_state(&s, &bases, &grid).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn warp_summary_single_sample() {
        let (s, _, _, hyper) = random_instance(49, 3, 1, 1, 1, 5);
        let grid: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
        let w = warp_summary(&chain_of(vec![s.clone()], hyper.clone()), &grid).unwrap();
        let m = warped_grid(&s.warp, &grid).unwrap();
        assert_eq!(w.mean, m);
        assert_eq!(w.lo, m);
        assert_eq!(w.hi, m);

        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let samples: Vec<ModelState> = (0..40)
            .map(|_| {
                let mut t = s.clone();
                for k in t.warp.kappa.iter_mut() {
                    *k += rng.sample::<f64, _>(StandardNormal);
                }
                t
            })
            .collect();
        let w = warp_summary(&chain_of(samples, hyper), &grid).unwrap();
        for g in 0..grid.len() {
            assert!(w.lo[g] <= w.mean[g] && w.mean[g] <= w.hi[g]);
        }
        assert!(w.mean.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn prediction_noise_floor() {
        // the chain holds the true state, so MSE is the noise variance
        let (mut s, _, design, hyper) = random_instance(51, 4, 2, 1, 1, 400);
        s.sigma1_sq.fill(0.25);
        s.sigma2_sq.fill(0.25);
        let means = crate::model::Means::compute(&s, &design).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let x = means.total(Series::X) + randn(&mut rng, 4, 400) * 0.5;
        let y = means.total(Series::Y) + randn(&mut rng, 4, 403) * 0.5;
        let full = SeriesPair::new(x, y, design.grid_x.clone(), design.grid_y.clone()).unwrap();
        let chain = chain_of(vec![s; 200], hyper);
        let held = HeldOut {
            x: (0..400).step_by(2).collect(),
            y: (1..403).step_by(2).collect(),
        };
        let pred = predict(&chain, &full, &held, &mut rng).unwrap();
        assert!((pred.mse.0 / 0.25 - 1.0).abs() < 0.15, "{:?}", pred.mse);
        assert!((pred.mse.1 / 0.25 - 1.0).abs() < 0.15, "{:?}", pred.mse);
        assert!(pred.coverage.0 > 0.9 && pred.coverage.0 < 0.99);
        assert!(pred.coverage.1 > 0.9 && pred.coverage.1 < 0.99);
        assert_eq!(pred.entries.len(), 4 * (200 + 201));

        let bad = HeldOut { x: vec![400], y: vec![] };
        assert!(matches!(predict(&chain, &full, &bad, &mut rng), Err(Error::HeldOut(_))));
    }
}
