//! Runtime checkers for the discrepancy-transfer and group-disparity bounds and for
//! divergence preservation under zero padding.
//!
//! Lipschitz constants and loss bounds are estimated over the particle supports, so
//! each check evaluates the bound with those empirical constants.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::central::{
    f_divergence, mmd_sq, pad_particles, solve_ot, wasserstein_barycenter_update, BarycenterConfig, Divergence,
    FChoice, KdeConfig,
};
use crate::error::{Error, Result};
use crate::particles::ParticleSet;
use crate::rng;
use crate::scalar::{dot, sigmoid, sq_dist, Scalar};
use crate::svgd::gauss;

/// Slack below which a bound check fails.
pub const SLACK_TOL: f64 = 1e-9;

/// A per-group loss `L_s(z)`.
pub trait Loss<T: Scalar>: Sync {
    fn value(&self, z: &[T]) -> T;

    /// RKHS norm under the unnormalized Gaussian kernel of bandwidth `h`, when known.
    fn rkhs_norm(&self, _h: T) -> Option<T> {
        None
    }
}

impl<T: Scalar, F: Fn(&[T]) -> T + Sync> Loss<T> for F {
    fn value(&self, z: &[T]) -> T {
        self(z)
    }
}

/// `L(z) = a·z + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLoss<T> {
    pub a: Vec<T>,
    pub c: T,
}

impl<T: Scalar> Loss<T> for AffineLoss<T> {
    fn value(&self, z: &[T]) -> T {
        dot(&self.a, z) + self.c
    }
}

/// `L(z) = scale · σ(a·z + c)`, bounded in `[0, scale]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmoidLoss<T> {
    pub a: Vec<T>,
    pub c: T,
    pub scale: T,
}

impl<T: Scalar> Loss<T> for SigmoidLoss<T> {
    fn value(&self, z: &[T]) -> T {
        self.scale * sigmoid(dot(&self.a, z) + self.c)
    }
}

/// `L(z) = Σ_i α_i k̃_h(z, c_i)`, whose RKHS norm is `√(αᵀKα)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelExpansion<T> {
    pub centers: Vec<Vec<T>>,
    pub alpha: Vec<T>,
    pub bandwidth: T,
}

impl<T: Scalar> Loss<T> for KernelExpansion<T> {
    fn value(&self, z: &[T]) -> T {
        self.centers.iter().zip(&self.alpha).map(|(c, &a)| a * gauss(z, c, self.bandwidth)).sum()
    }

    fn rkhs_norm(&self, h: T) -> Option<T> {
        if h != self.bandwidth {
            return None;
        }
        let mut q = T::zero();
        for (ci, &ai) in self.centers.iter().zip(&self.alpha) {
            for (cj, &aj) in self.centers.iter().zip(&self.alpha) {
                q = q + ai * aj * gauss(ci, cj, h);
            }
        }
        Some(q.max(T::zero()).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Transfer,
    Disparity,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub divergence: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
    /// Per-group `C_s`: Lipschitz estimate (W₂), `B_s √(2 c_f)` (f-div) or RKHS norm (MMD).
    pub constants: Vec<f64>,
    /// Per-group discrepancy `D(p̃_s, p̃*)` in the units multiplied by `C_s`.
    pub discrepancies: Vec<f64>,
    pub lipschitz: Option<Vec<f64>>,
    pub loss_bounds: Option<Vec<f64>>,
    pub c_f: Option<f64>,
    pub k_eff: Option<f64>,
}

impl BoundReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// `max |L(z) - L(z')| / ‖z - z'‖` over all distinct pairs in the union of supports.
///
/// This is a lower bound on the true Lipschitz constant.
pub fn empirical_lipschitz<T: Scalar>(loss: &dyn Loss<T>, supports: &[&ParticleSet<T>]) -> Result<T> {
    let points: Vec<&[T]> = supports.iter().flat_map(|s| s.iter().map(|p| p.z.as_slice())).collect();
    let values: Vec<T> = points.iter().map(|z| loss.value(z)).collect();
    let mut best: Option<T> = None;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let dist = sq_dist(points[i], points[j]).sqrt();
            if dist > T::zero() {
                let slope = (values[i] - values[j]).abs() / dist;
                best = Some(best.map_or(slope, |b| b.max(slope)));
            }
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("Lipschitz estimate needs two distinct points".into()))
}

/// `max_{z ∈ supp p̃*} max_{s,s'} |L_s(z) - L_{s'}(z)|`.
pub fn k_eff<T: Scalar>(central: &ParticleSet<T>, losses: &[&dyn Loss<T>]) -> T {
    central
        .iter()
        .map(|p| {
            let v: Vec<T> = losses.iter().map(|l| l.value(&p.z)).collect();
            let hi = v.iter().copied().fold(T::neg_infinity(), T::max);
            let lo = v.iter().copied().fold(T::infinity(), T::min);
            hi - lo
        })
        .fold(T::zero(), T::max)
}

/// Pinsker-type constant used in the f-divergence bound.
pub fn pinsker_constant(f: FChoice) -> f64 {
    match f {
        FChoice::Kl | FChoice::ReverseKl => 1.0,
        FChoice::Js => 2.0,
    }
}

fn expectation<T: Scalar>(ps: &ParticleSet<T>, loss: &dyn Loss<T>) -> T {
    ps.iter().map(|p| loss.value(&p.z)).sum::<T>() / T::count(ps.len())
}

struct Terms {
    constants: Vec<f64>,
    discrepancies: Vec<f64>,
    lipschitz: Option<Vec<f64>>,
    loss_bounds: Option<Vec<f64>>,
    c_f: Option<f64>,
}

/// Per-group `C_s` and `D_s` so that `|E_{p̃*}L_s - E_{p̃_s}L_s| ≤ C_s D_s`.
fn group_terms<T: Scalar>(
    groups: &[ParticleSet<T>],
    central: &ParticleSet<T>,
    losses: &[&dyn Loss<T>],
    cfg: &BarycenterConfig<T>,
    kde: &KdeConfig<T>,
) -> Result<Terms> {
    if groups.is_empty() || groups.len() != losses.len() {
        return Err(Error::Size(format!("{} groups with {} losses", groups.len(), losses.len())));
    }
    for g in groups {
        if g.dim() != central.dim() {
            return Err(Error::Dimension { expected: central.dim(), got: g.dim() });
        }
    }
    let mut supports: Vec<&ParticleSet<T>> = groups.iter().collect();
    supports.push(central);
    match cfg.divergence {
        Divergence::Wasserstein => {
            let mut lip = Vec::new();
            let mut dist = Vec::new();
            for (g, l) in groups.iter().zip(losses) {
                lip.push(empirical_lipschitz(*l, &supports).unwrap_or(T::zero()).as_f64());
                dist.push(solve_ot(g, central)?.w2().as_f64());
            }
            Ok(Terms { constants: lip.clone(), discrepancies: dist, lipschitz: Some(lip), loss_bounds: None, c_f: None })
        }
        Divergence::FDiv => {
            let c_f = pinsker_constant(cfg.f_choice);
            let mut bounds = Vec::new();
            let mut consts = Vec::new();
            let mut dist = Vec::new();
            for (g, l) in groups.iter().zip(losses) {
                let b = supports
                    .iter()
                    .flat_map(|s| s.iter())
                    .map(|p| l.value(&p.z).abs().as_f64())
                    .fold(0.0, f64::max);
                let d = f_divergence(central, g, cfg.f_choice, kde)?.as_f64().max(0.0);
                bounds.push(b);
                consts.push(b * (2.0 * c_f).sqrt());
                dist.push(d.sqrt());
            }
            Ok(Terms { constants: consts, discrepancies: dist, lipschitz: None, loss_bounds: Some(bounds), c_f: Some(c_f) })
        }
        Divergence::Mmd => {
            let mut norms = Vec::new();
            let mut dist = Vec::new();
            for (g, l) in groups.iter().zip(losses) {
                let n = l.rkhs_norm(kde.bandwidth).ok_or_else(|| {
                    Error::NotCheckable("MMD bound needs a loss with a known RKHS norm".into())
                })?;
                norms.push(n.as_f64());
                dist.push(mmd_sq(central, g, kde)?.as_f64().sqrt());
            }
            Ok(Terms { constants: norms, discrepancies: dist, lipschitz: None, loss_bounds: None, c_f: None })
        }
    }
}

fn report(kind: BoundKind, div: Divergence, lhs: f64, rhs: f64, terms: Terms, k_eff: Option<f64>) -> BoundReport {
    let slack = rhs - lhs;
    BoundReport {
        kind,
        divergence: div.name(),
        lhs,
        rhs,
        slack,
        pass: lhs.is_finite() && rhs.is_finite() && slack >= -SLACK_TOL,
        constants: terms.constants,
        discrepancies: terms.discrepancies,
        lipschitz: terms.lipschitz,
        loss_bounds: terms.loss_bounds,
        c_f: terms.c_f,
        k_eff,
    }
}

/// `|R(p̃*) - R̄| ≤ Σ_s λ_s C_s D(p̃_s, p̃*)` with `R(p̃*) = E_{p̃*} Σ_s λ_s L_s`.
pub fn check_transfer_bound<T: Scalar>(
    groups: &[ParticleSet<T>],
    central: &ParticleSet<T>,
    losses: &[&dyn Loss<T>],
    cfg: &BarycenterConfig<T>,
    kde: &KdeConfig<T>,
) -> Result<BoundReport> {
    let lambda: Vec<f64> = cfg.weights(groups.len())?.iter().map(|l| l.as_f64()).collect();
    let terms = group_terms(groups, central, losses, cfg, kde)?;
    let mut central_risk = 0.0;
    let mut mean_risk = 0.0;
    for ((g, l), &w) in groups.iter().zip(losses).zip(&lambda) {
        central_risk += w * expectation(central, *l).as_f64();
        mean_risk += w * expectation(g, *l).as_f64();
    }
    let rhs = lambda
        .iter()
        .zip(terms.constants.iter().zip(&terms.discrepancies))
        .map(|(w, (c, d))| w * c * d)
        .sum();
    Ok(report(BoundKind::Transfer, cfg.divergence, (central_risk - mean_risk).abs(), rhs, terms, None))
}

/// `max_{s,s'} |R_s - R_{s'}| ≤ 2 C_max max_s D(p̃_s, p̃*) + K_eff`.
pub fn check_disparity_bound<T: Scalar>(
    groups: &[ParticleSet<T>],
    central: &ParticleSet<T>,
    losses: &[&dyn Loss<T>],
    cfg: &BarycenterConfig<T>,
    kde: &KdeConfig<T>,
) -> Result<BoundReport> {
    if groups.len() < 2 {
        return Err(Error::InvalidArgument("disparity bound needs at least 2 groups".into()));
    }
    let terms = group_terms(groups, central, losses, cfg, kde)?;
    let risks: Vec<f64> = groups.iter().zip(losses).map(|(g, l)| expectation(g, *l).as_f64()).collect();
    let lhs = risks.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - risks.iter().copied().fold(f64::INFINITY, f64::min);
    let c_max = terms.constants.iter().copied().fold(0.0, f64::max);
    let d_max = terms.discrepancies.iter().copied().fold(0.0, f64::max);
    let keff = k_eff(central, losses).as_f64();
    let rhs = 2.0 * c_max * d_max + keff;
    Ok(report(BoundKind::Disparity, cfg.divergence, lhs, rhs, terms, Some(keff)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PaddingReport {
    /// `(unpadded, padded)` values.
    pub w2_sq: (f64, f64),
    pub mmd_sq: (f64, f64),
    pub fdiv: (f64, f64),
    pub pass: bool,
}

/// Compares each divergence before and after zero-padding both sets to `theta_dim + n_max`.
///
/// When the native weight lengths differ, the shorter set is first padded to the
/// longer one so the unpadded divergences are defined.
pub fn check_padding_invariance<T: Scalar>(
    raw_a: &ParticleSet<T>,
    raw_b: &ParticleSet<T>,
    theta_dim: usize,
    n_max: usize,
    kde: &KdeConfig<T>,
    f: FChoice,
) -> Result<PaddingReport> {
    let native = raw_a.dim().max(raw_b.dim()) - theta_dim;
    let a = pad_particles(raw_a, theta_dim, native)?;
    let b = pad_particles(raw_b, theta_dim, native)?;
    let pa = pad_particles(&a, theta_dim, n_max)?;
    let pb = pad_particles(&b, theta_dim, n_max)?;
    let pair = |x: T, y: T| (x.as_f64(), y.as_f64());
    let w2_sq = pair(solve_ot(&a, &b)?.objective, solve_ot(&pa, &pb)?.objective);
    let mmd = pair(mmd_sq(&a, &b, kde)?, mmd_sq(&pa, &pb, kde)?);
    let fdiv = pair(f_divergence(&a, &b, f, kde)?, f_divergence(&pa, &pb, f, kde)?);
    let close = |(x, y): (f64, f64), tol: f64| (x - y).abs() <= tol;
    let pass = close(w2_sq, 1e-12) && close(mmd, 1e-12) && close(fdiv, 1e-9);
    Ok(PaddingReport { w2_sq, mmd_sq: mmd, fdiv, pass })
}

/// Pass/fail tallies of a randomized suite.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SuiteSummary {
    pub trials: usize,
    pub passed: usize,
    pub failed: usize,
    /// Indices of failing trials.
    pub failures: Vec<usize>,
}

impl SuiteSummary {
    fn from_outcomes(outcomes: &[bool]) -> Self {
        let failures: Vec<usize> = outcomes.iter().enumerate().filter(|(_, &ok)| !ok).map(|(i, _)| i).collect();
        Self { trials: outcomes.len(), passed: outcomes.len() - failures.len(), failed: failures.len(), failures }
    }
}

fn normal_set<R: Rng>(rng: &mut R, m: usize, dim: usize, shift: f64, spread: f64) -> ParticleSet<f64> {
    let rows = (0..m)
        .map(|_| {
            (0..dim)
                .map(|_| shift + spread * Distribution::<f64>::sample(&StandardNormal, &mut *rng))
                .collect()
        })
        .collect();
    ParticleSet::from_rows(rows).expect("nonempty equal-dim rows")
}

/// Random groups (S ∈ {2,3}, M ≤ 10, dim ≤ 4) and their W₂ barycenter.
pub fn random_bound_instance<R: Rng>(rng: &mut R) -> (Vec<ParticleSet<f64>>, ParticleSet<f64>) {
    let s = rng.random_range(2..=3);
    let m = rng.random_range(2..=10);
    let dim = rng.random_range(1..=4);
    let groups: Vec<_> = (0..s)
        .map(|_| {
            let shift = rng.random_range(-1.0..1.0);
            let spread = rng.random_range(0.3..1.5);
            normal_set(rng, m, dim, shift, spread)
        })
        .collect();
    let cfg = BarycenterConfig::new(Divergence::Wasserstein).with_iters(5);
    let central = wasserstein_barycenter_update(&groups, &groups[0], &cfg)
        .expect("valid instance")
        .central;
    (groups, central)
}

/// One randomized trial of both bounds under W₂ with affine losses and under JS with
/// bounded sigmoid losses.
pub fn bound_trial(seed: u64, trial: usize, kde: &KdeConfig<f64>) -> Result<Vec<BoundReport>> {
    let mut rng = rng::stream(seed, &format!("bound_trial/{trial}"));
    let (groups, central) = random_bound_instance(&mut rng);
    let dim = central.dim();
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-2.0..2.0)).collect() };
    let affine: Vec<AffineLoss<f64>> =
        groups.iter().map(|_| AffineLoss { a: draw(dim), c: draw(1)[0] }).collect();
    let bounded: Vec<SigmoidLoss<f64>> = groups
        .iter()
        .map(|_| SigmoidLoss { a: draw(dim), c: draw(1)[0], scale: 1.0 + draw(1)[0].abs() })
        .collect();
    let affine_refs: Vec<&dyn Loss<f64>> = affine.iter().map(|l| l as &dyn Loss<f64>).collect();
    let bounded_refs: Vec<&dyn Loss<f64>> = bounded.iter().map(|l| l as &dyn Loss<f64>).collect();
    let w2 = BarycenterConfig::new(Divergence::Wasserstein);
    let js = BarycenterConfig::new(Divergence::FDiv).with_f(FChoice::Js);
    Ok(vec![
        check_transfer_bound(&groups, &central, &affine_refs, &w2, kde)?,
        check_disparity_bound(&groups, &central, &affine_refs, &w2, kde)?,
        check_transfer_bound(&groups, &central, &bounded_refs, &js, kde)?,
        check_disparity_bound(&groups, &central, &bounded_refs, &js, kde)?,
    ])
}

/// Runs `trials` bound trials; a trial passes when all of its reports pass.
pub fn bounds_suite(trials: usize, seed: u64, kde: &KdeConfig<f64>) -> Result<(SuiteSummary, Vec<Vec<BoundReport>>)> {
    let reports: Vec<Vec<BoundReport>> =
        (0..trials).into_par_iter().map(|t| bound_trial(seed, t, kde)).collect::<Result<_>>()?;
    let outcomes: Vec<bool> = reports.iter().map(|r| r.iter().all(|b| b.pass)).collect();
    Ok((SuiteSummary::from_outcomes(&outcomes), reports))
}

/// One randomized padding trial with unequal native weight lengths.
pub fn padding_trial(seed: u64, trial: usize, kde: &KdeConfig<f64>) -> Result<PaddingReport> {
    let mut rng = rng::stream(seed, &format!("padding_trial/{trial}"));
    let theta_dim = rng.random_range(1..=3);
    let m = rng.random_range(2..=8);
    let n_a = rng.random_range(1..=4);
    let n_b = rng.random_range(1..=4);
    let n_max = n_a.max(n_b) + rng.random_range(0..=3);
    let a = normal_set(&mut rng, m, theta_dim + n_a, 0.0, 0.5);
    let b = normal_set(&mut rng, m, theta_dim + n_b, 0.2, 0.5);
    let f = [FChoice::Kl, FChoice::ReverseKl, FChoice::Js][trial % 3];
    check_padding_invariance(&a, &b, theta_dim, n_max, kde, f)
}

pub fn padding_suite(trials: usize, seed: u64, kde: &KdeConfig<f64>) -> Result<(SuiteSummary, Vec<PaddingReport>)> {
    let reports: Vec<PaddingReport> =
        (0..trials).into_par_iter().map(|t| padding_trial(seed, t, kde)).collect::<Result<_>>()?;
    let outcomes: Vec<bool> = reports.iter().map(|r| r.pass).collect();
    Ok((SuiteSummary::from_outcomes(&outcomes), reports))
}
