use super::KdeConfig;
use crate::error::{Error, Result};
use crate::particles::ParticleSet;
use crate::scalar::Scalar;
use crate::svgd::gauss;

fn check<T: Scalar>(ps: &ParticleSet<T>, z: &[T]) -> Result<()> {
    if ps.dim() != z.len() {
        return Err(Error::Dimension { expected: ps.dim(), got: z.len() });
    }
    Ok(())
}

/// `(1/M) Σ_i k̃_h(z, z_i)` with the unnormalized Gaussian kernel.
pub fn kde_density<T: Scalar>(ps: &ParticleSet<T>, z: &[T], kde: &KdeConfig<T>) -> Result<T> {
    check(ps, z)?;
    let total: T = ps.iter().map(|p| gauss(z, &p.z, kde.bandwidth)).sum();
    Ok(total / T::count(ps.len()))
}

/// `∇_z log(kde_density(z) + ε) = Σ_i ∇_z k̃(z, z_i) / (Σ_i k̃(z, z_i) + M ε)`.
pub fn kde_score<T: Scalar>(ps: &ParticleSet<T>, z: &[T], kde: &KdeConfig<T>) -> Result<Vec<T>> {
    check(ps, z)?;
    let h2 = kde.bandwidth * kde.bandwidth;
    let mut num = vec![T::zero(); z.len()];
    let mut den = T::count(ps.len()) * kde.eps_stab;
    for p in ps.iter() {
        let k = gauss(z, &p.z, kde.bandwidth);
        if k == T::zero() {
            continue;
        }
        den = den + k;
        for (n, (&a, &b)) in num.iter_mut().zip(z.iter().zip(&p.z)) {
            *n = *n - (a - b) / h2 * k;
        }
    }
    Ok(num.into_iter().map(|n| n / den).collect())
}
