use crate::error::{Error, Result};
use crate::particles::ParticleSet;
use crate::scalar::Scalar;

/// Append exact zeros to the weight block so every particle has `theta_dim + n_max` coordinates.
pub fn pad_particles<T: Scalar>(raw: &ParticleSet<T>, theta_dim: usize, n_max: usize) -> Result<ParticleSet<T>> {
    let n_s = raw
        .dim()
        .checked_sub(theta_dim)
        .ok_or(Error::Dimension { expected: theta_dim, got: raw.dim() })?;
    if n_s > n_max {
        return Err(Error::Size(format!("{n_s} weights exceed the padded length {n_max}")));
    }
    let rows = raw
        .iter()
        .map(|p| {
            let mut z = p.z.clone();
            z.resize(theta_dim + n_max, T::zero());
            z
        })
        .collect();
    ParticleSet::from_rows(rows)
}
