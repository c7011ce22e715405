//! Stein variational gradient descent over a [`ParticleSet`], plain and fairness-aware.
//!
//! One step moves every particle by
//! `ε/M · Σ_l [k(z_l, z_m) · score(z_l) + ∇_{z_l} k(z_l, z_m)]`, with all kernel values and
//! scores taken from the pre-step set. The median heuristic is the default bandwidth; it is
//! known to lose resolution in very high dimensions, where a fixed bandwidth may work better.

use rayon::prelude::*;

use crate::central::{kde_score, KdeConfig};
use crate::error::{Error, Result};
use crate::particles::{Particle, ParticleSet};
use crate::posterior::GroupPosterior;
use crate::scalar::{median, sq_dist, Scalar};

/// Gaussian kernel value `exp(-‖a-b‖² / 2h²)` without allocation.
#[inline]
pub(crate) fn gauss<T: Scalar>(a: &[T], b: &[T], h: T) -> T {
    (-sq_dist(a, b) / (T::lit(2.0) * h * h)).exp()
}

/// `k(a,b) = exp(-‖a-b‖²/2h²)` and `∇_a k(a,b) = -(a-b)/h² · k`.
pub fn rbf_kernel<T: Scalar>(a: &[T], b: &[T], h: T) -> Result<(T, Vec<T>)> {
    if a.len() != b.len() {
        return Err(Error::Dimension { expected: a.len(), got: b.len() });
    }
    if !(h > T::zero()) {
        return Err(Error::InvalidArgument(format!("kernel bandwidth {h} must be positive")));
    }
    let k = gauss(a, b, h);
    let h2 = h * h;
    let grad = a.iter().zip(b).map(|(&x, &y)| -(x - y) / h2 * k).collect();
    Ok((k, grad))
}

/// `median pairwise distance / sqrt(2 ln(M+1))`, or 1.0 when every particle coincides.
pub fn median_bandwidth<T: Scalar>(ps: &ParticleSet<T>) -> Result<T> {
    let m = ps.len();
    if m < 2 {
        return Err(Error::InvalidArgument("median bandwidth needs at least 2 particles".into()));
    }
    let mut dists = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in i + 1..m {
            dists.push(sq_dist(&ps.get(i).z, &ps.get(j).z).sqrt());
        }
    }
    let med = median(&mut dists).expect("at least one pair");
    if med == T::zero() {
        return Ok(T::one());
    }
    Ok(med / (T::lit(2.0) * T::count(m + 1).ln()).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthRule<T> {
    Median,
    Fixed(T),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvgdConfig<T> {
    pub step_size: T,
    pub bandwidth: BandwidthRule<T>,
    /// Multiplier on the central-distribution score.
    pub fairness_weight: T,
}

impl<T: Scalar> SvgdConfig<T> {
    pub fn new(step_size: T) -> Result<Self> {
        if !(step_size > T::zero()) {
            return Err(Error::InvalidArgument(format!("step size {step_size} must be positive")));
        }
        Ok(Self { step_size, bandwidth: BandwidthRule::Median, fairness_weight: T::one() })
    }

    pub fn with_bandwidth(mut self, rule: BandwidthRule<T>) -> Self {
        self.bandwidth = rule;
        self
    }

    pub fn with_fairness_weight(mut self, weight: T) -> Self {
        self.fairness_weight = weight;
        self
    }

    fn resolve_bandwidth(&self, ps: &ParticleSet<T>) -> Result<T> {
        match self.bandwidth {
            BandwidthRule::Fixed(h) if h > T::zero() => Ok(h),
            BandwidthRule::Fixed(h) => {
                Err(Error::InvalidArgument(format!("kernel bandwidth {h} must be positive")))
            }
            // k(z,z) = 1 for any h, so a lone particle needs no bandwidth.
            BandwidthRule::Median if ps.len() < 2 => Ok(T::one()),
            BandwidthRule::Median => median_bandwidth(ps),
        }
    }
}

/// One synchronous SVGD update.
pub fn svgd_step<T, F>(ps: &ParticleSet<T>, score: F, cfg: &SvgdConfig<T>) -> Result<ParticleSet<T>>
where
    T: Scalar,
    F: Fn(&[T]) -> Result<Vec<T>> + Sync,
{
    let m = ps.len();
    let dim = ps.dim();
    let h = cfg.resolve_bandwidth(ps)?;
    let h2 = h * h;

    let scores: Vec<Vec<T>> = ps
        .particles()
        .par_iter()
        .map(|p| score(&p.z))
        .collect::<Result<_>>()?;
    for (l, s) in scores.iter().enumerate() {
        if s.len() != dim {
            return Err(Error::Dimension { expected: dim, got: s.len() });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("score of particle {l}")));
        }
    }

    let scale = cfg.step_size / T::count(m);
    let moved: Vec<Particle<T>> = (0..m)
        .into_par_iter()
        .map(|mi| {
            let zm = &ps.get(mi).z;
            let mut phi = vec![T::zero(); dim];
            for (l, sl) in scores.iter().enumerate() {
                let zl = &ps.get(l).z;
                let k = gauss(zl, zm, h);
                if k == T::zero() {
                    continue;
                }
                // k · score(z_l) + ∇_{z_l} k(z_l, z_m)
                for d in 0..dim {
                    phi[d] = phi[d] + k * sl[d] - (zl[d] - zm[d]) / h2 * k;
                }
            }
            Particle::new(zm.iter().zip(&phi).map(|(&z, &f)| z + scale * f).collect())
        })
        .collect();
    ParticleSet::new(moved)
}

/// `z ↦ ∇ log p_s(z) + λ · ∇ log p̂*(z)` where `p̂*` is the KDE of the central cloud.
pub fn fair_score<'a, T: Scalar>(
    gp: &'a GroupPosterior<'a, T>,
    central: &'a ParticleSet<T>,
    kde: KdeConfig<T>,
    lambda_fair: T,
) -> impl Fn(&[T]) -> Result<Vec<T>> + Sync + 'a {
    move |z: &[T]| {
        let mut g = gp.grad_log_post(z)?;
        if lambda_fair != T::zero() {
            let pull = kde_score(central, z, &kde)?;
            for (a, b) in g.iter_mut().zip(pull) {
                *a = *a + lambda_fair * b;
            }
        }
        Ok(g)
    }
}
