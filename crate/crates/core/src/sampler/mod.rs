//! The hybrid Gibbs / HMC sampler.
//!
//! Every sweep runs, in order: `β` (shared, X-individual, Y-individual),
//! `Γ₁`, `Γ₂`, `Ξ₁`, `Ξ₂`, one HMC move per column of `Λ`, one HMC move on
//! `κ`, the noise variances and finally the shrinkage parameters. During
//! burn-in the HMC step sizes are adapted and negligible columns pruned
//! every `adapt_interval` iterations; both are frozen afterwards.

pub mod gibbs;
pub mod hmc;

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{
    factor_curves, log_likelihood, projector, Design, HyperParams, KappaTarget, LambdaColumnTarget, LambdaStats,
    ModelState, Series, SeriesPair, ShrinkageBlock, ShrinkageState,
};
use crate::warp::WarpParams;

use gibbs::BetaBlock;
use hmc::{hmc_step, HmcStep, Potential};

#[derive(Debug, Clone, PartialEq)]
pub struct McmcConfig {
    pub n_iter: usize,
    pub n_burnin: usize,
    pub leapfrog_steps: usize,
    /// Initial step size of the `κ` block.
    pub step_size_kappa: f64,
    /// Initial step size of every `Λ` column.
    pub step_size_lambda: f64,
    pub adapt_interval: usize,
    pub accept_low: f64,
    pub accept_high: f64,
    /// Columns whose mean absolute contribution falls strictly below this
    /// are pruned during burn-in.
    pub prune_threshold: f64,
    pub seed: u64,
    pub thin: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_iter: 6000,
            n_burnin: 3000,
            leapfrog_steps: 30,
            step_size_kappa: 0.01,
            step_size_lambda: 0.01,
            adapt_interval: 100,
            accept_low: 0.6,
            accept_high: 0.8,
            prune_threshold: 1e-4,
            seed: 1,
            thin: 1,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_burnin >= self.n_iter {
            return Err(Error::Config(format!(
                "n_burnin ({}) must be smaller than n_iter ({})",
                self.n_burnin, self.n_iter
            )));
        }
        if self.leapfrog_steps == 0 || self.adapt_interval == 0 || self.thin == 0 {
            return Err(Error::Config("leapfrog_steps, adapt_interval and thin must be at least 1".into()));
        }
        for (name, v) in [("step_size_kappa", self.step_size_kappa), ("step_size_lambda", self.step_size_lambda)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0 < self.accept_low && self.accept_low < self.accept_high && self.accept_high < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < accept_low < accept_high < 1, got {} and {}",
                self.accept_low, self.accept_high
            )));
        }
        if !(self.prune_threshold >= 0.0) {
            return Err(Error::Config(format!(
                "prune_threshold must be nonnegative, got {}",
                self.prune_threshold
            )));
        }
        Ok(())
    }
}

/// Per-iteration record of the sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub kappa_accepted: bool,
    /// Accepted `Λ` column moves in this sweep (one proposal per column).
    pub lambda_accepted: usize,
    pub step_kappa: f64,
    /// Mean step size over the `Λ` columns.
    pub step_lambda: f64,
    pub rank: usize,
    pub rank1: usize,
    pub rank2: usize,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneEvent {
    pub iteration: usize,
    pub shared: Vec<usize>,
    pub ind1: Vec<usize>,
    pub ind2: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub iterations: Vec<IterationRecord>,
    pub prune_events: Vec<PruneEvent>,
    /// Post-burn-in acceptance rate of the `κ` block.
    pub kappa_acceptance: f64,
    /// Post-burn-in acceptance rate over all `Λ` column moves.
    pub lambda_acceptance: f64,
}

#[derive(Debug, Clone)]
pub struct Chain {
    pub samples: Vec<ModelState>,
    pub diagnostics: Diagnostics,
    pub hyper: HyperParams,
    pub config: McmcConfig,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

impl Potential for KappaTarget<'_> {
    fn dim(&self) -> usize {
        KappaTarget::dim(self)
    }

    fn potential(&self, x: &[f64], grad: Option<&mut [f64]>) -> Option<f64> {
        self.evaluate(x, grad).ok()
    }
}

impl Potential for LambdaColumnTarget<'_> {
    fn dim(&self) -> usize {
        LambdaColumnTarget::dim(self)
    }

    fn potential(&self, x: &[f64], grad: Option<&mut [f64]>) -> Option<f64> {
        self.evaluate(x, grad).ok()
    }
}

/// Starting point: `Λ`, `Γ` entries `N(0, 1)`, `Ξ = 1`, `β = 0`, `κ = 0`,
/// `σ²` the per-feature sample variances and shrinkage at its prior mean.
pub fn initial_state<R: Rng + ?Sized>(data: &SeriesPair, design: &Design, hyper: &HyperParams, rng: &mut R) -> Result<ModelState> {
    let p = data.p();
    let (r, r1, r2) = (hyper.r_init, hyper.r1_init, hyper.r2_init);
    if r > p {
        return Err(Error::Config(format!("r_init = {r} exceeds p = {p}")));
    }
    let mut randn = |rows: usize, cols: usize| DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    let lambda = randn(p, r);
    let gamma1 = randn(p, r1);
    let gamma2 = randn(p, r2);
    let state = ModelState {
        lambda,
        gamma1,
        gamma2,
        xi1: DVector::from_element(r, 1.0),
        xi2: DVector::from_element(r, 1.0),
        beta_shared: DMatrix::zeros(r, hyper.k),
        beta1: DMatrix::zeros(r1, hyper.k1),
        beta2: DMatrix::zeros(r2, hyper.k2),
        sigma1_sq: row_variances(&data.x),
        sigma2_sq: row_variances(&data.y),
        warp: WarpParams::identity(design.bases.warp.clone())?,
        shrinkage: ShrinkageState {
            lambda: ShrinkageBlock::at_prior_mean(p, r, hyper.a1, hyper.a2),
            gamma1: ShrinkageBlock::at_prior_mean(p, r1, hyper.a1, hyper.a2),
            gamma2: ShrinkageBlock::at_prior_mean(p, r2, hyper.a1, hyper.a2),
        },
    };
    state.validate()?;
    Ok(state)
}

/// Sample variance per row, floored so that constant features still give a
/// valid starting variance.
fn row_variances(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.ncols();
    DVector::from_fn(m.nrows(), |i, _| {
        let row = m.row(i);
        let mean = row.sum() / n as f64;
        let ss: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum();
        let var = if n > 1 { ss / (n - 1) as f64 } else { 0.0 };
        var.max(1e-6)
    })
}

/// One HMC move on `κ`.
pub fn hmc_update_kappa<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &SeriesPair,
    design: &Design,
    omega: f64,
    step_size: f64,
    n_leapfrog: usize,
    rng: &mut R,
) -> Result<HmcStep> {
    let target = KappaTarget::new(state, data, design, omega)?;
    let mut kappa = state.warp.kappa.clone();
    let step = hmc_step(&target, &mut kappa, step_size, n_leapfrog, rng);
    state.warp.kappa = kappa;
    Ok(step)
}

/// One HMC move on column `j` of `Λ`.
pub fn hmc_update_lambda_column<R: Rng + ?Sized>(
    state: &mut ModelState,
    stats: &LambdaStats,
    j: usize,
    step_size: f64,
    n_leapfrog: usize,
    rng: &mut R,
) -> Result<HmcStep> {
    let target = LambdaColumnTarget::new(state, stats, j)?;
    let mut col: Vec<f64> = state.lambda.column(j).iter().copied().collect();
    let step = hmc_step(&target, &mut col, step_size, n_leapfrog, rng);
    state.lambda.column_mut(j).copy_from_slice(&col);
    Ok(step)
}

/// Step-size rule applied after every adaptation window.
pub fn adapt_step_size(step: f64, acceptance: f64, cfg: &McmcConfig) -> f64 {
    if acceptance < cfg.accept_low {
        step * 0.8
    } else if acceptance > cfg.accept_high {
        step * 1.25
    } else {
        step
    }
}

/// Mean absolute contribution of every column to its mean matrix, averaged
/// over features and grid times. For a rank-one term `a·f(t)ᵀ` this is
/// `mean|a| · mean|f|`.
#[derive(Debug, Clone, PartialEq)]
pub struct Contributions {
    pub shared_x: Vec<f64>,
    pub shared_y: Vec<f64>,
    pub ind1: Vec<f64>,
    pub ind2: Vec<f64>,
}

fn mean_abs_rows(m: &DMatrix<f64>) -> Vec<f64> {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>() / r.len().max(1) as f64)
        .collect()
}

fn mean_abs_cols(m: &DMatrix<f64>) -> Vec<f64> {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>() / c.len().max(1) as f64)
        .collect()
}

pub fn column_contributions(state: &ModelState, design: &Design) -> Result<Contributions> {
    let psi = projector(&state.lambda)?;
    let chi_y = design.chi_y_warped(&state.warp)?;
    let eta_x = mean_abs_rows(&factor_curves(&state.beta_shared, &design.chi_x));
    let eta_y = mean_abs_rows(&factor_curves(&state.beta_shared, &chi_y));
    let lam = mean_abs_cols(&state.lambda);
    let shared_x = (0..state.rank()).map(|j| lam[j] * state.xi1[j].abs() * eta_x[j]).collect();
    let shared_y = (0..state.rank()).map(|j| lam[j] * state.xi2[j].abs() * eta_y[j]).collect();
    let ind = |which: Series| -> Vec<f64> {
        let load = mean_abs_cols(&(&psi * state.gamma(which)));
        let zeta = mean_abs_rows(&factor_curves(state.beta_ind(which), design.chi_ind(which)));
        load.iter().zip(&zeta).map(|(a, b)| a * b).collect()
    };
    Ok(Contributions {
        shared_x,
        shared_y,
        ind1: ind(Series::X),
        ind2: ind(Series::Y),
    })
}

/// Indices whose score is strictly below `threshold`, never all of them: if
/// every column qualifies, the largest one survives.
fn prune_set(scores: &[f64], threshold: f64) -> Vec<usize> {
    let mut drop: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] < threshold).collect();
    if drop.len() == scores.len() && !scores.is_empty() {
        let best = (0..scores.len())
            .max_by(|&a, &b| scores[a].total_cmp(&scores[b]))
            .unwrap_or(0);
        drop.retain(|&i| i != best);
    }
    drop
}

fn drop_rows(m: &DMatrix<f64>, drop: &[usize]) -> DMatrix<f64> {
    let keep: Vec<usize> = (0..m.nrows()).filter(|i| !drop.contains(i)).collect();
    m.select_rows(&keep)
}

fn drop_cols(m: &DMatrix<f64>, drop: &[usize]) -> DMatrix<f64> {
    let keep: Vec<usize> = (0..m.ncols()).filter(|i| !drop.contains(i)).collect();
    m.select_columns(&keep)
}

fn drop_entries(v: &DVector<f64>, drop: &[usize]) -> DVector<f64> {
    DVector::from_iterator(
        v.len() - drop.len(),
        v.iter().enumerate().filter(|(i, _)| !drop.contains(i)).map(|(_, x)| *x),
    )
}

/// Removes negligible columns of `ΛΞ` (both series must fall below the
/// threshold), `ΨΓ₁` and `ΨΓ₂` together with their factor rows, `Ξ`
/// entries and shrinkage columns. Returns the removed indices, or `None`
/// when nothing was pruned.
pub fn prune_columns(state: &mut ModelState, design: &Design, threshold: f64, iteration: usize) -> Result<Option<PruneEvent>> {
    let c = column_contributions(state, design)?;
    let shared_score: Vec<f64> = c.shared_x.iter().zip(&c.shared_y).map(|(a, b)| a.max(*b)).collect();
    let shared = prune_set(&shared_score, threshold);
    let ind1 = prune_set(&c.ind1, threshold);
    let ind2 = prune_set(&c.ind2, threshold);
    if shared.is_empty() && ind1.is_empty() && ind2.is_empty() {
        return Ok(None);
    }
    if !shared.is_empty() {
        state.lambda = drop_cols(&state.lambda, &shared);
        state.xi1 = drop_entries(&state.xi1, &shared);
        state.xi2 = drop_entries(&state.xi2, &shared);
        state.beta_shared = drop_rows(&state.beta_shared, &shared);
        state.shrinkage.lambda.remove_columns(&shared);
    }
    if !ind1.is_empty() {
        state.gamma1 = drop_cols(&state.gamma1, &ind1);
        state.beta1 = drop_rows(&state.beta1, &ind1);
        state.shrinkage.gamma1.remove_columns(&ind1);
    }
    if !ind2.is_empty() {
        state.gamma2 = drop_cols(&state.gamma2, &ind2);
        state.beta2 = drop_rows(&state.beta2, &ind2);
        state.shrinkage.gamma2.remove_columns(&ind2);
    }
    state.validate()?;
    Ok(Some(PruneEvent {
        iteration,
        shared,
        ind1,
        ind2,
    }))
}

/// Current step sizes: one for `κ`, one per column of `Λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSizes {
    pub kappa: f64,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub kappa: HmcStep,
    pub lambda: Vec<HmcStep>,
}

fn tag(block: &'static str, iteration: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::Sweep {
        iteration,
        block,
        source: Box::new(e),
    }
}

/// One full sweep over all blocks in the fixed order.
#[allow(clippy::too_many_arguments)]
pub fn sweep<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &SeriesPair,
    design: &Design,
    hyper: &HyperParams,
    steps: &StepSizes,
    n_leapfrog: usize,
    iteration: usize,
    rng: &mut R,
) -> Result<SweepOutcome> {
    let omega = hyper.omega;
    for (block, name) in [
        (BetaBlock::Shared, "beta"),
        (BetaBlock::Individual(Series::X), "beta1"),
        (BetaBlock::Individual(Series::Y), "beta2"),
    ] {
        gibbs::gibbs_update_beta(state, data, design, omega, block, rng).map_err(tag(name, iteration))?;
    }
    gibbs::gibbs_update_gamma(state, data, design, Series::X, rng).map_err(tag("gamma1", iteration))?;
    gibbs::gibbs_update_gamma(state, data, design, Series::Y, rng).map_err(tag("gamma2", iteration))?;
    gibbs::gibbs_update_xi(state, data, design, omega, Series::X, rng).map_err(tag("xi1", iteration))?;
    gibbs::gibbs_update_xi(state, data, design, omega, Series::Y, rng).map_err(tag("xi2", iteration))?;

    let stats = LambdaStats::new(state, data, design).map_err(tag("lambda", iteration))?;
    let mut lambda = Vec::with_capacity(state.rank());
    for j in 0..state.rank() {
        let s = hmc_update_lambda_column(state, &stats, j, steps.lambda[j], n_leapfrog, rng)
            .map_err(tag("lambda", iteration))?;
        lambda.push(s);
    }
    let kappa = hmc_update_kappa(state, data, design, omega, steps.kappa, n_leapfrog, rng).map_err(tag("kappa", iteration))?;

    gibbs::gibbs_update_sigma(state, data, design, hyper, rng).map_err(tag("sigma", iteration))?;
    gibbs::gibbs_update_shrinkage(state, hyper, rng);
    Ok(SweepOutcome { kappa, lambda })
}

/// Runs a chain from [`initial_state`] seeded with `cfg.seed`.
pub fn run_chain(data: &SeriesPair, hyper: &HyperParams, cfg: &McmcConfig) -> Result<Chain> {
    run_chain_with(data, hyper, cfg, |_, _| {})
}

/// As [`run_chain`], calling `observe(iteration, state)` after every sweep.
pub fn run_chain_with<F>(data: &SeriesPair, hyper: &HyperParams, cfg: &McmcConfig, mut observe: F) -> Result<Chain>
where
    F: FnMut(usize, &ModelState),
{
    hyper.validate()?;
    cfg.validate()?;
    let design = Design::for_data(hyper, data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = initial_state(data, &design, hyper, &mut rng)?;
    let mut steps = StepSizes {
        kappa: cfg.step_size_kappa,
        lambda: vec![cfg.step_size_lambda; state.rank()],
    };
    let mut window_kappa = 0usize;
    let mut window_lambda = vec![0usize; state.rank()];
    let mut post_kappa = 0usize;
    let mut post_lambda = (0usize, 0usize);
    let mut diagnostics = Diagnostics::default();
    let mut samples = Vec::new();

    for it in 0..cfg.n_iter {
        let out = sweep(&mut state, data, &design, hyper, &steps, cfg.leapfrog_steps, it, &mut rng)?;
        let burnin = it < cfg.n_burnin;
        let lambda_accepted = out.lambda.iter().filter(|s| s.accepted).count();
        if burnin {
            window_kappa += out.kappa.accepted as usize;
            for (w, s) in window_lambda.iter_mut().zip(&out.lambda) {
                *w += s.accepted as usize;
            }
        } else {
            post_kappa += out.kappa.accepted as usize;
            post_lambda.0 += lambda_accepted;
            post_lambda.1 += out.lambda.len();
        }
        diagnostics.iterations.push(IterationRecord {
            iteration: it,
            kappa_accepted: out.kappa.accepted,
            lambda_accepted,
            step_kappa: steps.kappa,
            step_lambda: math_mean(&steps.lambda),
            rank: state.rank(),
            rank1: state.rank1(),
            rank2: state.rank2(),
            log_likelihood: log_likelihood(&state, data, &design).map_err(tag("loglik", it))?,
        });

        if burnin && (it + 1) % cfg.adapt_interval == 0 {
            let n = cfg.adapt_interval as f64;
            steps.kappa = adapt_step_size(steps.kappa, window_kappa as f64 / n, cfg);
            for (s, w) in steps.lambda.iter_mut().zip(&window_lambda) {
                *s = adapt_step_size(*s, *w as f64 / n, cfg);
            }
            window_kappa = 0;
            window_lambda.iter_mut().for_each(|w| *w = 0);
            if let Some(event) = prune_columns(&mut state, &design, cfg.prune_threshold, it).map_err(tag("prune", it))? {
                steps.lambda = steps
                    .lambda
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !event.shared.contains(i))
                    .map(|(_, s)| *s)
                    .collect();
                window_lambda.truncate(steps.lambda.len());
                diagnostics.prune_events.push(event);
            }
        }
        if !burnin && (it - cfg.n_burnin) % cfg.thin == 0 {
            samples.push(state.clone());
        }
        observe(it, &state);
    }

    let kept = (cfg.n_iter - cfg.n_burnin) as f64;
    diagnostics.kappa_acceptance = post_kappa as f64 / kept;
    diagnostics.lambda_acceptance = if post_lambda.1 > 0 {
        post_lambda.0 as f64 / post_lambda.1 as f64
    } else {
        0.0
    };
    Ok(Chain {
        samples,
        diagnostics,
        hyper: hyper.clone(),
        config: cfg.clone(),
    })
}

fn math_mean(v: &[f64]) -> f64 {
    crate::math::mean(v)
}
