use rayon::prelude::*;

use super::descent::descend;
use super::{check_groups, BarycenterConfig, BarycenterUpdate, KdeConfig};
use crate::error::{Error, Result};
use crate::particles::ParticleSet;
use crate::scalar::Scalar;
use crate::svgd::gauss;

fn block_mean<T: Scalar>(a: &ParticleSet<T>, b: &ParticleSet<T>, h: T) -> T {
    let total: T = a.iter().map(|p| b.iter().map(|q| gauss(&p.z, &q.z, h)).sum::<T>()).sum();
    total / (T::count(a.len()) * T::count(b.len()))
}

/// Biased squared MMD with a Gaussian kernel; rounding negatives are clamped to 0.
pub fn mmd_sq<T: Scalar>(a: &ParticleSet<T>, b: &ParticleSet<T>, kde: &KdeConfig<T>) -> Result<T> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension { expected: a.dim(), got: b.dim() });
    }
    let h = kde.bandwidth;
    let v = block_mean(a, a, h) + block_mean(b, b, h) - T::lit(2.0) * block_mean(a, b, h);
    Ok(v.max(T::zero()))
}

/// `∇` of `Σ_s λ_s MMD²(central, group_s)` with respect to each central particle.
pub fn mmd_objective_grad<T: Scalar>(
    groups: &[ParticleSet<T>],
    central: &ParticleSet<T>,
    lambda: &[T],
    kde: &KdeConfig<T>,
) -> Result<Vec<Vec<T>>> {
    for g in groups {
        if g.dim() != central.dim() {
            return Err(Error::Dimension { expected: central.dim(), got: g.dim() });
        }
    }
    let h = kde.bandwidth;
    let h2 = h * h;
    let m = T::count(central.len());
    let lambda_total: T = lambda.iter().copied().sum();
    let two = T::lit(2.0);
    Ok(central
        .particles()
        .par_iter()
        .map(|ci| {
            let mut g = vec![T::zero(); central.dim()];
            // ∇_a k(a,b) = -(a-b)/h² k(a,b)
            let mut add = |coeff: T, other: &[T]| {
                let k = gauss(&ci.z, other, h);
                if k == T::zero() {
                    return;
                }
                for (gd, (&a, &b)) in g.iter_mut().zip(ci.z.iter().zip(other)) {
                    *gd = *gd - coeff * (a - b) / h2 * k;
                }
            };
            let self_coeff = lambda_total * two / (m * m);
            for cj in central.iter() {
                add(self_coeff, &cj.z);
            }
            for (grp, &l) in groups.iter().zip(lambda) {
                let cross = -(l * two) / (m * T::count(grp.len()));
                for q in grp.iter() {
                    add(cross, &q.z);
                }
            }
            g
        })
        .collect())
}

/// `inner_iters` backtracking descent steps on `Σ_s λ_s MMD²(central, group_s)`.
pub fn mmd_barycenter_update<T: Scalar>(
    groups: &[ParticleSet<T>],
    current: &ParticleSet<T>,
    cfg: &BarycenterConfig<T>,
    kde: &KdeConfig<T>,
) -> Result<BarycenterUpdate<T>> {
    check_groups(groups, current)?;
    let lambda = cfg.weights(groups.len())?;
    let objective = |c: &ParticleSet<T>| -> Result<T> {
        let mut total = T::zero();
        for (g, &l) in groups.iter().zip(&lambda) {
            total = total + l * mmd_sq(c, g, kde)?;
        }
        Ok(total)
    };
    descend(current, cfg.inner_iters, cfg.gd_step, objective, |c| {
        mmd_objective_grad(groups, c, &lambda, kde)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::central::Divergence;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(rows: Vec<Vec<f64>>) -> ParticleSet<f64> {
        ParticleSet::from_rows(rows).unwrap()
    }

    fn random_set(rng: &mut ChaCha8Rng, m: usize, d: usize) -> ParticleSet<f64> {
        set((0..m).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect())
    }

    #[test]
    fn identical_and_singleton_cases() {
        let kde = KdeConfig::new(0.7, 1e-3).unwrap();
        let a = set(vec![vec![0.1, 0.2], vec![-0.3, 0.4], vec![1.0, 1.0]]);
        assert!(mmd_sq(&a, &a, &kde).unwrap() < 1e-12);

        let z1 = set(vec![vec![0.0, 1.0]]);
        let z2 = set(vec![vec![0.5, 0.0]]);
        let expected = 2.0 - 2.0 * (-(0.25 + 1.0f64) / (2.0 * 0.49)).exp();
        assert!((mmd_sq(&z1, &z2, &kde).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn symmetric_and_zero_only_for_equal_multisets() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let kde = KdeConfig::new(0.5, 1e-3).unwrap();
        for _ in 0..30 {
            let a = random_set(&mut rng, 4, 3);
            let b = random_set(&mut rng, 4, 3);
            let ab = mmd_sq(&a, &b, &kde).unwrap();
            assert!((ab - mmd_sq(&b, &a, &kde).unwrap()).abs() < 1e-14);
            assert!(ab > 1e-10);
            assert!(mmd_sq(&a, &a.permuted(&[2, 0, 3, 1]), &kde).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let m = rng.random_range(1..5);
            let d = rng.random_range(1..4);
            let s = rng.random_range(1..4);
            let kde = KdeConfig::new(rng.random_range(0.4..1.5), 1e-3).unwrap();
            let groups: Vec<_> = (0..s).map(|_| random_set(&mut rng, m, d)).collect();
            let central = random_set(&mut rng, m, d);
            let lambda = vec![1.0 / s as f64; s];
            let obj = |c: &ParticleSet<f64>| -> f64 {
                groups.iter().zip(&lambda).map(|(g, l)| {
                    let h = kde.bandwidth;
                    l * (block_mean(c, c, h) + block_mean(g, g, h) - 2.0 * block_mean(c, g, h))
                }).sum()
            };
            let g = mmd_objective_grad(&groups, &central, &lambda, &kde).unwrap();
            for i in 0..m {
                for k in 0..d {
                    let step = 1e-5;
                    let mut rows_p = central.rows();
                    let mut rows_m = central.rows();
                    rows_p[i][k] += step;
                    rows_m[i][k] -= step;
                    let fd = (obj(&set(rows_p)) - obj(&set(rows_m))) / (2.0 * step);
                    let err = (g[i][k] - fd).abs() / g[i][k].abs().max(fd.abs()).max(1e-8);
                    assert!(err < 1e-5 || (g[i][k] - fd).abs() < 1e-10, "{} vs {fd}", g[i][k]);
                }
            }
        }
    }

    #[test]
    fn stationary_when_groups_equal_current() {
        let kde = KdeConfig::new(0.5, 1e-3).unwrap();
        let c = set(vec![vec![0.0, 0.3], vec![0.9, -0.2]]);
        let cfg = BarycenterConfig::new(Divergence::Mmd).with_iters(5);
        let out = mmd_barycenter_update(&[c.clone(), c.clone()], &c, &cfg, &kde).unwrap();
        for (a, b) in out.central.iter().zip(c.iter()) {
            for (x, y) in a.z.iter().zip(&b.z) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_singletons_converge_to_midpoint() {
        let kde = KdeConfig::new(2.0, 1e-3).unwrap();
        let groups = [set(vec![vec![0.0]]), set(vec![vec![2.0]])];
        let cfg = BarycenterConfig::new(Divergence::Mmd).with_iters(500).with_step(1.0);
        let out = mmd_barycenter_update(&groups, &set(vec![vec![0.3]]), &cfg, &kde).unwrap();
        assert!((out.central.get(0).z[0] - 1.0).abs() < 1e-3, "{:?}", out.central);
        for w in out.objective_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }
}
