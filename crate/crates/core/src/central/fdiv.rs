use rayon::prelude::*;

use super::descent::descend;
use super::{check_groups, kde_density, BarycenterConfig, BarycenterUpdate, KdeConfig};
use crate::error::{Error, Result};
use crate::particles::ParticleSet;
use crate::scalar::Scalar;
use crate::svgd::gauss;

/// Generator `f` of the f-divergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FChoice {
    /// `f(t) = t log t`
    Kl,
    /// `f(t) = -log t`
    ReverseKl,
    /// `f(t) = t log(2t/(t+1)) + log(2/(t+1))`
    #[default]
    Js,
}

impl FChoice {
    pub fn name(self) -> &'static str {
        match self {
            FChoice::Kl => "kl",
            FChoice::ReverseKl => "rkl",
            FChoice::Js => "js",
        }
    }

    /// `f(t)` for `t ≥ 0`, using the continuous limit at `t = 0` where one exists.
    pub fn f<T: Scalar>(self, t: T) -> Result<T> {
        let two = T::lit(2.0);
        if t < T::zero() || !t.is_finite() {
            return Err(Error::NonFinite(format!("density ratio {t}")));
        }
        if t == T::zero() {
            return match self {
                FChoice::Kl => Ok(T::zero()),
                FChoice::Js => Ok(two.ln()),
                FChoice::ReverseKl => Err(Error::NonFinite("reverse KL at zero density ratio".into())),
            };
        }
        Ok(match self {
            FChoice::Kl => t * t.ln(),
            FChoice::ReverseKl => -t.ln(),
            FChoice::Js => t * (two * t / (t + T::one())).ln() + (two / (t + T::one())).ln(),
        })
    }

    /// `f'(t)` for `t > 0`.
    pub fn df<T: Scalar>(self, t: T) -> T {
        match self {
            FChoice::Kl => t.ln() + T::one(),
            FChoice::ReverseKl => -T::one() / t,
            FChoice::Js => (T::lit(2.0) * t / (t + T::one())).ln(),
        }
    }
}

impl std::str::FromStr for FChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kl" => Ok(FChoice::Kl),
            "rkl" | "reverse_kl" | "reverse-kl" => Ok(FChoice::ReverseKl),
            "js" => Ok(FChoice::Js),
            other => Err(Error::Config(format!("unknown f-divergence {other:?} (expected kl|rkl|js)"))),
        }
    }
}

/// Density ratios `t_j = p̂_a(b_j) / (p̂_b(b_j) + ε)` and their denominators.
fn ratios<T: Scalar>(a: &ParticleSet<T>, b: &ParticleSet<T>, kde: &KdeConfig<T>) -> Result<Vec<(T, T)>> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension { expected: a.dim(), got: b.dim() });
    }
    b.particles()
        .par_iter()
        .map(|q| {
            let den = kde_density(b, &q.z, kde)? + kde.eps_stab;
            Ok((kde_density(a, &q.z, kde)? / den, den))
        })
        .collect()
}

/// `(1/M) Σ_j f(p̂_a(b_j) / (p̂_b(b_j) + ε))`: `a` plays the central cloud, `b` the group cloud.
pub fn f_divergence<T: Scalar>(a: &ParticleSet<T>, b: &ParticleSet<T>, f: FChoice, kde: &KdeConfig<T>) -> Result<T> {
    let mut total = T::zero();
    for (t, _) in ratios(a, b, kde)? {
        total = total + f.f(t)?;
    }
    Ok(total / T::count(b.len()))
}

/// Gradient of [`f_divergence`] with respect to every particle of `a`.
pub fn f_divergence_grad<T: Scalar>(
    a: &ParticleSet<T>,
    b: &ParticleSet<T>,
    f: FChoice,
    kde: &KdeConfig<T>,
) -> Result<Vec<Vec<T>>> {
    let r = ratios(a, b, kde)?;
    let h2 = kde.bandwidth * kde.bandwidth;
    let norm = T::count(a.len()) * T::count(b.len());
    // Weight on ∂p̂_a(b_j); ratios of exactly zero contribute nothing since every kernel term vanishes.
    let coeff: Vec<T> = r
        .iter()
        .map(|&(t, den)| if t > T::zero() { f.df(t) / den / norm } else { T::zero() })
        .collect();
    Ok(a.particles()
        .par_iter()
        .map(|p| {
            let mut g = vec![T::zero(); a.dim()];
            for (q, &c) in b.iter().zip(&coeff) {
                if c == T::zero() {
                    continue;
                }
                let k = gauss(&p.z, &q.z, kde.bandwidth);
                if k == T::zero() {
                    continue;
                }
                for (gd, (&x, &y)) in g.iter_mut().zip(p.z.iter().zip(&q.z)) {
                    *gd = *gd + c * k * (y - x) / h2;
                }
            }
            g
        })
        .collect())
}

/// `inner_iters` backtracking descent steps on `Σ_s λ_s D_f(central ‖ group_s)`.
pub fn fdiv_barycenter_update<T: Scalar>(
    groups: &[ParticleSet<T>],
    current: &ParticleSet<T>,
    cfg: &BarycenterConfig<T>,
    kde: &KdeConfig<T>,
) -> Result<BarycenterUpdate<T>> {
    check_groups(groups, current)?;
    let lambda = cfg.weights(groups.len())?;
    let f = cfg.f_choice;
    let objective = |c: &ParticleSet<T>| -> Result<T> {
        let mut total = T::zero();
        for (g, &l) in groups.iter().zip(&lambda) {
            total = total + l * f_divergence(c, g, f, kde)?;
        }
        Ok(total)
    };
    let gradient = |c: &ParticleSet<T>| -> Result<Vec<Vec<T>>> {
        let mut total = vec![vec![T::zero(); c.dim()]; c.len()];
        for (g, &l) in groups.iter().zip(&lambda) {
            for (acc, row) in total.iter_mut().zip(f_divergence_grad(c, g, f, kde)?) {
                for (x, y) in acc.iter_mut().zip(row) {
                    *x = *x + l * y;
                }
            }
        }
        Ok(total)
    };
    descend(current, cfg.inner_iters, cfg.gd_step, objective, gradient)
}
