use rayon::prelude::*;

use super::{check_groups, solve_assignment, BarycenterConfig, BarycenterUpdate};
use crate::error::Result;
use crate::particles::ParticleSet;
use crate::scalar::{sq_dist, Scalar};

/// Optimal coupling between two uniform `M`-point clouds.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan<T> {
    /// `plan[i][j]`: mass moved from source particle `i` to target particle `j`.
    pub plan: Vec<Vec<T>>,
    /// `cost[i][j] = ‖source_i - target_j‖²`.
    pub cost: Vec<Vec<T>>,
    /// `⟨cost, plan⟩_F`, the squared 2-Wasserstein distance.
    pub objective: T,
    /// Source particle `i` is sent to target particle `assignment[i]`.
    pub assignment: Vec<usize>,
}

impl<T: Scalar> TransportPlan<T> {
    pub fn w2(&self) -> T {
        self.objective.max(T::zero()).sqrt()
    }
}

/// Exact `W₂²` between equal-size clouds; uniform marginals make a scaled permutation optimal.
pub fn solve_ot<T: Scalar>(source: &ParticleSet<T>, target: &ParticleSet<T>) -> Result<TransportPlan<T>> {
    source.check_same_shape(target)?;
    let m = source.len();
    let cost: Vec<Vec<T>> = source
        .iter()
        .map(|a| target.iter().map(|b| sq_dist(&a.z, &b.z)).collect())
        .collect();
    let assignment = solve_assignment(&cost)?;
    let mass = T::one() / T::count(m);
    let mut plan = vec![vec![T::zero(); m]; m];
    let mut objective = T::zero();
    for (i, &j) in assignment.iter().enumerate() {
        plan[i][j] = mass;
        objective = objective + cost[i][j];
    }
    objective = objective * mass;
    Ok(TransportPlan { plan, cost, objective, assignment })
}

/// Fixed-point sweeps: `z̄_j ← M · Σ_s λ_s Σ_i T_s[i][j] · z_s^(i)` with `T_s` optimal against the
/// current central particles.
pub fn wasserstein_barycenter_update<T: Scalar>(
    groups: &[ParticleSet<T>],
    current: &ParticleSet<T>,
    cfg: &BarycenterConfig<T>,
) -> Result<BarycenterUpdate<T>> {
    check_groups(groups, current)?;
    let lambda = cfg.weights(groups.len())?;
    let m = current.len();
    let dim = current.dim();
    let scale = T::count(m);

    let solve_all = |central: &ParticleSet<T>| -> Result<Vec<TransportPlan<T>>> {
        groups.par_iter().map(|g| solve_ot(g, central)).collect()
    };
    let objective = |plans: &[TransportPlan<T>]| -> T {
        plans.iter().zip(&lambda).map(|(p, &l)| l * p.objective).sum()
    };

    let mut central = current.clone();
    let mut plans = solve_all(&central)?;
    let mut trace = vec![objective(&plans)];
    for _ in 0..cfg.inner_iters {
        let mut rows = vec![vec![T::zero(); dim]; m];
        for ((g, plan), &l) in groups.iter().zip(&plans).zip(&lambda) {
            for (i, &j) in plan.assignment.iter().enumerate() {
                let coeff = scale * l * plan.plan[i][j];
                for (a, &b) in rows[j].iter_mut().zip(&g.get(i).z) {
                    *a = *a + coeff * b;
                }
            }
        }
        central = ParticleSet::from_rows(rows)?;
        plans = solve_all(&central)?;
        trace.push(objective(&plans));
    }
    Ok(BarycenterUpdate { central, objective_trace: trace })
}
