//! Plain Hamiltonian Monte Carlo with identity mass matrix and a fixed
//! number of leapfrog steps.

use alloc::vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::math;

/// A differentiable negative log density. `None` signals a point outside
/// the support (or a numerical failure); the trajectory is then rejected.
pub trait Potential {
    fn dim(&self) -> usize;

    fn potential(&self, x: &[f64], grad: Option<&mut [f64]>) -> Option<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmcStep {
    pub accepted: bool,
    /// `H(end) − H(start)`; infinite when the trajectory diverged.
    pub delta_h: f64,
}

/// Runs one HMC transition from `position`, overwriting it on acceptance.
pub fn hmc_step<P, R>(target: &P, position: &mut [f64], step_size: f64, n_leapfrog: usize, rng: &mut R) -> HmcStep
where
    P: Potential + ?Sized,
    R: Rng + ?Sized,
{
    let n = target.dim();
    let mut momentum = vec![0.0; n];
    for m in momentum.iter_mut() {
        *m = rng.sample(StandardNormal);
    }
    let u: f64 = rng.random();

    let rejected = HmcStep {
        accepted: false,
        delta_h: f64::INFINITY,
    };
    let mut grad = vec![0.0; n];
    let Some(u0) = target.potential(position, Some(&mut grad)) else {
        return rejected;
    };
    let h0 = u0 + 0.5 * momentum.iter().map(|p| p * p).sum::<f64>();

    let mut x = position.to_vec();
    for (p, g) in momentum.iter_mut().zip(&grad) {
        *p -= 0.5 * step_size * g;
    }
    let mut u1 = u0;
    for step in 0..n_leapfrog {
        for (xi, p) in x.iter_mut().zip(&momentum) {
            *xi += step_size * p;
        }
        match target.potential(&x, Some(&mut grad)) {
            Some(v) if v.is_finite() && grad.iter().all(|g| g.is_finite()) => u1 = v,
            _ => return rejected,
        }
        let scale = if step + 1 == n_leapfrog { 0.5 } else { 1.0 };
        for (p, g) in momentum.iter_mut().zip(&grad) {
            *p -= scale * step_size * g;
        }
    }
    let h1 = u1 + 0.5 * momentum.iter().map(|p| p * p).sum::<f64>();
    let delta_h = h1 - h0;
    if !delta_h.is_finite() {
        return rejected;
    }
    let accepted = u < 1.0 && (delta_h <= 0.0 || math::ln(u) < -delta_h);
    if accepted {
        position.copy_from_slice(&x);
    }
    HmcStep { accepted, delta_h }
}
