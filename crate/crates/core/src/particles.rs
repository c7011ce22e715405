//! Particles in the padded joint space `z = (θ, w) ∈ R^{P+N̄}` and equally weighted sets of them.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Particle<T> {
    pub z: Vec<T>,
}

impl<T: Scalar> Particle<T> {
    pub fn new(z: Vec<T>) -> Self {
        Self { z }
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    pub fn is_finite(&self) -> bool {
        self.z.iter().all(|v| v.is_finite())
    }

    /// Parameter block `θ = z[..theta_dim]`.
    pub fn theta(&self, theta_dim: usize) -> &[T] {
        &self.z[..theta_dim]
    }

    /// Weight block `z[theta_dim..]`, padded slots included.
    pub fn weights(&self, theta_dim: usize) -> &[T] {
        &self.z[theta_dim..]
    }
}

impl<T> AsRef<[T]> for Particle<T> {
    fn as_ref(&self) -> &[T] {
        &self.z
    }
}

/// `M ≥ 1` equally weighted particles sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet<T> {
    particles: Vec<Particle<T>>,
    dim: usize,
}

impl<T: Scalar> ParticleSet<T> {
    pub fn new(particles: Vec<Particle<T>>) -> Result<Self> {
        let dim = particles
            .first()
            .map(Particle::dim)
            .ok_or_else(|| Error::InvalidArgument("particle set must be nonempty".into()))?;
        if let Some(p) = particles.iter().find(|p| p.dim() != dim) {
            return Err(Error::Dimension { expected: dim, got: p.dim() });
        }
        Ok(Self { particles, dim })
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        Self::new(rows.into_iter().map(Particle::new).collect())
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn particles(&self) -> &[Particle<T>] {
        &self.particles
    }

    pub fn get(&self, i: usize) -> &Particle<T> {
        &self.particles[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Particle<T>> {
        self.particles.iter()
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        self.particles.iter().map(|p| p.z.clone()).collect()
    }

    pub fn into_particles(self) -> Vec<Particle<T>> {
        self.particles
    }

    pub fn is_finite(&self) -> bool {
        self.particles.iter().all(Particle::is_finite)
    }

    /// Index of the first particle holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.particles.iter().position(|p| !p.is_finite())
    }

    /// Coordinate-wise mean particle.
    pub fn mean(&self) -> Vec<T> {
        let mut m = vec![T::zero(); self.dim];
        for p in &self.particles {
            for (a, &b) in m.iter_mut().zip(&p.z) {
                *a = *a + b;
            }
        }
        let n = T::count(self.len());
        m.iter_mut().for_each(|v| *v = *v / n);
        m
    }

    /// New set with particles in the given order.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self { particles: order.iter().map(|&i| self.particles[i].clone()).collect(), dim: self.dim }
    }

    /// Sub-coordinates `z[range]` of every particle, each mapped through `f`.
    pub fn project(&self, range: std::ops::Range<usize>, f: impl Fn(T) -> T) -> Result<Self> {
        if range.end > self.dim || range.start >= range.end {
            return Err(Error::InvalidArgument(format!(
                "projection {range:?} invalid for dim {}",
                self.dim
            )));
        }
        Self::from_rows(
            self.particles
                .iter()
                .map(|p| p.z[range.clone()].iter().map(|&v| f(v)).collect())
                .collect(),
        )
    }

    pub(crate) fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::Dimension { expected: self.dim, got: other.dim });
        }
        if self.len() != other.len() {
            return Err(Error::Size(format!(
                "particle counts differ: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(())
    }
}
