use super::BarycenterUpdate;
use crate::error::{Error, Result};
use crate::particles::ParticleSet;
use crate::scalar::Scalar;

pub(crate) const MAX_HALVINGS: usize = 20;

/// Gradient descent on central particle coordinates with step halving.
///
/// A step is accepted only if it does not increase the objective; after
/// `MAX_HALVINGS` failed halvings the particles stay put for that iteration.
pub(crate) fn descend<T, O, G>(
    current: &ParticleSet<T>,
    iters: usize,
    step: T,
    objective: O,
    gradient: G,
) -> Result<BarycenterUpdate<T>>
where
    T: Scalar,
    O: Fn(&ParticleSet<T>) -> Result<T>,
    G: Fn(&ParticleSet<T>) -> Result<Vec<Vec<T>>>,
{
    let mut central = current.clone();
    let mut value = objective(&central)?;
    let mut trace = vec![value];
    for _ in 0..iters {
        let grad = gradient(&central)?;
        if grad.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("barycenter gradient".into()));
        }
        let mut eta = step;
        for _ in 0..=MAX_HALVINGS {
            let rows = central
                .iter()
                .zip(&grad)
                .map(|(p, g)| p.z.iter().zip(g).map(|(&z, &d)| z - eta * d).collect())
                .collect();
            let candidate = ParticleSet::from_rows(rows)?;
            let v = objective(&candidate)?;
            if v.is_finite() && v <= value {
                central = candidate;
                value = v;
                break;
            }
            eta = eta / T::lit(2.0);
        }
        trace.push(value);
    }
    Ok(BarycenterUpdate { central, objective_trace: trace })
}
