//! Seeded generators for the two simulation designs.
//!
//! Case 1 (`Sinusoid`) draws `Λ`, `Γ₁`, `Γ₂` with iid `N(0, 1)` entries and
//! generates
//! `X_t = ΨΓ₁ζ₁(t) + Λη(t) + ε`, `Y_t = ΨΓ₂ζ₂(t) + Λη(√t) + ε` with
//! `ηₖ(t) = cos(kt)`, `ζ₂ₖ(t) = cos(kt)` and `ζ₁ₖ` from [`Zeta1Family`].
//!
//! Case 2 (`Ellipse`) tracks 12 points on an ellipse whose axes change over
//! time with constant product `ab = 4`; the second series runs on the
//! warped clock `√t`.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math;
use crate::model::{projector, SeriesPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Case {
    Sinusoid,
    Ellipse,
}

/// `ζ₁ₖ(t)` in case 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Zeta1Family {
    /// `sin(kt)`
    Sin,
    /// `kt`
    Linear,
    /// `(kt)²`
    Square,
    /// `(kt)³`
    Cube,
}

impl Zeta1Family {
    pub fn eval(self, k: usize, t: f64) -> f64 {
        let kt = k as f64 * t;
        match self {
            Self::Sin => math::sin(kt),
            Self::Linear => kt,
            Self::Square => kt * kt,
            Self::Cube => kt * kt * kt,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub case: Case,
    pub t: usize,
    pub p: usize,
    pub r_true: usize,
    pub noise_sd: f64,
    pub zeta1_family: Zeta1Family,
    pub seed: u64,
}

impl SimSpec {
    pub fn case1(seed: u64) -> Self {
        Self {
            case: Case::Sinusoid,
            t: 500,
            p: 20,
            r_true: 10,
            noise_sd: 1.0,
            zeta1_family: Zeta1Family::Sin,
            seed,
        }
    }

    pub fn case2(seed: u64) -> Self {
        Self {
            case: Case::Ellipse,
            t: 500,
            p: 24,
            r_true: 10,
            noise_sd: 0.0,
            zeta1_family: Zeta1Family::Sin,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t < 10 {
            return Err(Error::Config(format!("simulation needs T >= 10, got {}", self.t)));
        }
        if self.p == 0 || self.r_true == 0 {
            return Err(Error::Config("simulation needs p, r_true >= 1".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config(format!("noise_sd must be nonnegative, got {}", self.noise_sd)));
        }
        if self.case == Case::Sinusoid && self.r_true >= self.p {
            return Err(Error::Config(format!(
                "case 1 needs r_true < p, got r_true = {} and p = {}",
                self.r_true, self.p
            )));
        }
        if self.case == Case::Ellipse && self.p != 24 {
            return Err(Error::Config(format!("case 2 has 24 features, got p = {}", self.p)));
        }
        Ok(())
    }
}

/// Ground truth of a simulated pair. For case 2 the loadings are empty
/// (`p × 0`) and the individual means are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub mean_x: DMatrix<f64>,
    pub mean_y: DMatrix<f64>,
    pub individual_x: DMatrix<f64>,
    pub individual_y: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub gamma1: DMatrix<f64>,
    pub gamma2: DMatrix<f64>,
    /// `M₀` on the grid.
    pub warp: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub data: SeriesPair,
    pub truth: Truth,
}

/// True warping function `M₀(t) = √t`.
pub fn m0(t: f64) -> f64 {
    math::sqrt(t)
}

/// `t = 1/T, 2/T, …, 1`.
pub fn sim_grid(t: usize) -> Vec<f64> {
    (1..=t).map(|i| i as f64 / t as f64).collect()
}

fn randn<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `rows × T` matrix of `f(k, t)` for `k = 1..rows`.
fn curves(rows: usize, grid: &[f64], f: impl Fn(usize, f64) -> f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, grid.len(), |k, c| f(k + 1, grid[c]))
}

pub fn gen_case1<R: Rng + ?Sized>(spec: &SimSpec, rng: &mut R) -> Result<Simulated> {
    spec.validate()?;
    if spec.case != Case::Sinusoid {
        return Err(Error::Config("gen_case1 needs the sinusoid case".into()));
    }
    let (p, r) = (spec.p, spec.r_true);
    let grid = sim_grid(spec.t);
    let warped: Vec<f64> = grid.iter().map(|&t| m0(t)).collect();
    let lambda = randn(rng, p, r);
    let gamma1 = randn(rng, p, r);
    let gamma2 = randn(rng, p, r);
    let psi = projector(&lambda)?;
    let family = spec.zeta1_family;
    let zeta1 = curves(r, &grid, |k, t| family.eval(k, t));
    let zeta2 = curves(r, &grid, |k, t| math::cos(k as f64 * t));
    let eta_x = curves(r, &grid, |k, t| math::cos(k as f64 * t));
    let eta_y = curves(r, &warped, |k, t| math::cos(k as f64 * t));
    let individual_x = &psi * &gamma1 * zeta1;
    let individual_y = &psi * &gamma2 * zeta2;
    let mean_x = &individual_x + &lambda * eta_x;
    let mean_y = &individual_y + &lambda * eta_y;
    let x = &mean_x + randn(rng, p, spec.t) * spec.noise_sd;
    let y = &mean_y + randn(rng, p, spec.t) * spec.noise_sd;
    Ok(Simulated {
        data: SeriesPair::new(x, y, grid.clone(), grid)?,
        truth: Truth {
            mean_x,
            mean_y,
            individual_x,
            individual_y,
            lambda,
            gamma1,
            gamma2,
            warp: warped,
        },
    })
}

/// Axes `(a, b)` of the ellipse at (possibly warped) time `t`:
/// `a = 2(t + 1)`, `b = 2/(t + 1)`.
pub fn ellipse_axes(t: f64) -> (f64, f64) {
    (2.0 * (t + 1.0), 2.0 / (t + 1.0))
}

/// Feature values of case 2 at time `s` on the series' own clock (`s = t`
/// for X, `s = √t` for Y): rows `2i`, `2i + 1` are `a sin θᵢ`, `b cos θᵢ`.
pub fn ellipse_features(s: f64) -> Vec<f64> {
    let (a, b) = ellipse_axes(s);
    let mut out = Vec::with_capacity(24);
    for i in 0..12 {
        let theta = 2.0 * math::PI * i as f64 / 12.0;
        out.push(a * math::sin(theta));
        out.push(b * math::cos(theta));
    }
    out
}

pub fn gen_case2<R: Rng + ?Sized>(spec: &SimSpec, rng: &mut R) -> Result<Simulated> {
    spec.validate()?;
    if spec.case != Case::Ellipse {
        return Err(Error::Config("gen_case2 needs the ellipse case".into()));
    }
    let grid = sim_grid(spec.t);
    let warped: Vec<f64> = grid.iter().map(|&t| m0(t)).collect();
    let build = |clock: &[f64]| {
        let cols: Vec<Vec<f64>> = clock.iter().map(|&s| ellipse_features(s)).collect();
        DMatrix::from_fn(24, clock.len(), |l, c| cols[c][l])
    };
    let mean_x = build(&grid);
    let mean_y = build(&warped);
    for &t in &grid {
        let (a, b) = ellipse_axes(t);
        debug_assert!((a * b - 4.0).abs() < 1e-12);
    }
    let (x, y) = if spec.noise_sd > 0.0 {
        (
            &mean_x + randn(rng, 24, spec.t) * spec.noise_sd,
            &mean_y + randn(rng, 24, spec.t) * spec.noise_sd,
        )
    } else {
        (mean_x.clone(), mean_y.clone())
    };
    Ok(Simulated {
        data: SeriesPair::new(x, y, grid.clone(), grid)?,
        truth: Truth {
            individual_x: DMatrix::zeros(24, spec.t),
            individual_y: DMatrix::zeros(24, spec.t),
            mean_x,
            mean_y,
            lambda: DMatrix::zeros(24, 0),
            gamma1: DMatrix::zeros(24, 0),
            gamma2: DMatrix::zeros(24, 0),
            warp: warped,
        },
    })
}

/// Generates the pair described by `spec` from a generator seeded with
/// `spec.seed`.
pub fn generate(spec: &SimSpec) -> Result<Simulated> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.case {
        Case::Sinusoid => gen_case1(spec, &mut rng),
        Case::Ellipse => gen_case2(spec, &mut rng),
    }
}
