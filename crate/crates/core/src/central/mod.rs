//! Central (barycentric) distribution of the group particle clouds.
//!
//! Three discrepancies are supported: squared 2-Wasserstein via exact assignment,
//! squared MMD with a Gaussian kernel, and KDE-estimated f-divergences. Densities from
//! [`kde_density`] use the Gaussian kernel without its normalizing constant, so they are
//! only comparable within one bandwidth.

mod assignment;
mod descent;
mod fdiv;
mod kde;
mod mmd;
mod padding;
mod transport;

pub use assignment::solve_assignment;
pub use fdiv::{f_divergence, f_divergence_grad, fdiv_barycenter_update, FChoice};
pub use kde::{kde_density, kde_score};
pub use mmd::{mmd_barycenter_update, mmd_objective_grad, mmd_sq};
pub use padding::pad_particles;
pub use transport::{solve_ot, wasserstein_barycenter_update, TransportPlan};

use crate::error::{Error, Result};
use crate::particles::ParticleSet;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Divergence {
    #[default]
    Wasserstein,
    Mmd,
    FDiv,
}

impl Divergence {
    pub fn name(self) -> &'static str {
        match self {
            Divergence::Wasserstein => "w2",
            Divergence::Mmd => "mmd",
            Divergence::FDiv => "fdiv",
        }
    }
}

impl std::str::FromStr for Divergence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "w2" | "wasserstein" => Ok(Divergence::Wasserstein),
            "mmd" => Ok(Divergence::Mmd),
            "fdiv" | "f" => Ok(Divergence::FDiv),
            other => Err(Error::Config(format!("unknown divergence {other:?} (expected w2|mmd|fdiv)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KdeConfig<T> {
    pub bandwidth: T,
    pub eps_stab: T,
}

impl<T: Scalar> KdeConfig<T> {
    pub fn new(bandwidth: T, eps_stab: T) -> Result<Self> {
        if !(bandwidth > T::zero()) {
            return Err(Error::InvalidArgument(format!("KDE bandwidth {bandwidth} must be positive")));
        }
        if !(eps_stab > T::zero()) {
            return Err(Error::InvalidArgument(format!("stability constant {eps_stab} must be positive")));
        }
        Ok(Self { bandwidth, eps_stab })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarycenterConfig<T> {
    pub divergence: Divergence,
    /// `λ_s`; `None` means uniform `1/S`.
    pub group_weights: Option<Vec<T>>,
    pub inner_iters: usize,
    pub gd_step: T,
    pub f_choice: FChoice,
}

impl<T: Scalar> BarycenterConfig<T> {
    pub fn new(divergence: Divergence) -> Self {
        Self {
            divergence,
            group_weights: None,
            inner_iters: 1,
            gd_step: T::one(),
            f_choice: FChoice::Js,
        }
    }

    pub fn with_iters(mut self, iters: usize) -> Self {
        self.inner_iters = iters;
        self
    }

    pub fn with_step(mut self, step: T) -> Self {
        self.gd_step = step;
        self
    }

    pub fn with_f(mut self, f: FChoice) -> Self {
        self.f_choice = f;
        self
    }

    /// Resolved and validated `λ_s` for `s` groups.
    pub fn weights(&self, s: usize) -> Result<Vec<T>> {
        let w = match &self.group_weights {
            None => vec![T::one() / T::count(s); s],
            Some(w) if w.len() == s => w.clone(),
            Some(w) => {
                return Err(Error::Size(format!("{} group weights for {s} groups", w.len())));
            }
        };
        let total: T = w.iter().copied().sum();
        if w.iter().any(|&l| !(l > T::zero() && l <= T::one())) || (total - T::one()).abs() > T::lit(1e-9) {
            return Err(Error::InvalidArgument("group weights must lie in (0,1] and sum to 1".into()));
        }
        Ok(w)
    }
}

/// Central particles after an update and the objective before and after each inner iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct BarycenterUpdate<T> {
    pub central: ParticleSet<T>,
    pub objective_trace: Vec<T>,
}

impl<T: Scalar> BarycenterUpdate<T> {
    pub fn final_objective(&self) -> T {
        *self.objective_trace.last().expect("trace holds the initial objective")
    }
}

/// `Σ_s λ_s D(central, group_s)` for the configured discrepancy (squared W₂ / squared MMD).
pub fn barycenter_objective<T: Scalar>(
    groups: &[ParticleSet<T>],
    central: &ParticleSet<T>,
    cfg: &BarycenterConfig<T>,
    kde: &KdeConfig<T>,
) -> Result<T> {
    let lambda = cfg.weights(groups.len())?;
    let mut total = T::zero();
    for (g, &l) in groups.iter().zip(&lambda) {
        let d = match cfg.divergence {
            Divergence::Wasserstein => solve_ot(g, central)?.objective,
            Divergence::Mmd => mmd_sq(central, g, kde)?,
            Divergence::FDiv => f_divergence(central, g, cfg.f_choice, kde)?,
        };
        total = total + l * d;
    }
    Ok(total)
}

/// One call of the configured barycenter solver (`inner_iters` sweeps or descent steps).
pub fn barycenter_update<T: Scalar>(
    groups: &[ParticleSet<T>],
    current: &ParticleSet<T>,
    cfg: &BarycenterConfig<T>,
    kde: &KdeConfig<T>,
) -> Result<BarycenterUpdate<T>> {
    match cfg.divergence {
        Divergence::Wasserstein => wasserstein_barycenter_update(groups, current, cfg),
        Divergence::Mmd => mmd_barycenter_update(groups, current, cfg, kde),
        Divergence::FDiv => fdiv_barycenter_update(groups, current, cfg, kde),
    }
}

/// Coordinate-wise `Σ_s λ_s z_s^(j)`, matching particles by index.
pub fn weighted_mean_set<T: Scalar>(groups: &[ParticleSet<T>], lambda: &[T]) -> Result<ParticleSet<T>> {
    let first = groups.first().ok_or_else(|| Error::InvalidArgument("no groups".into()))?;
    for g in groups {
        first.check_same_shape(g)?;
    }
    let rows = (0..first.len())
        .map(|j| {
            let mut row = vec![T::zero(); first.dim()];
            for (g, &l) in groups.iter().zip(lambda) {
                for (a, &b) in row.iter_mut().zip(&g.get(j).z) {
                    *a = *a + l * b;
                }
            }
            row
        })
        .collect();
    ParticleSet::from_rows(rows)
}

pub(crate) fn check_groups<T: Scalar>(groups: &[ParticleSet<T>], current: &ParticleSet<T>) -> Result<()> {
    if groups.is_empty() {
        return Err(Error::InvalidArgument("no groups".into()));
    }
    for g in groups {
        current.check_same_shape(g)?;
    }
    Ok(())
}
