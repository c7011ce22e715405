//! Particle-set CSV files: one particle per row under a `z0..z{dim-1}` header.

use std::path::Path;

use crate::error::{Error, Result};
use crate::particles::ParticleSet;
use crate::scalar::Scalar;

/// CSV text for a particle set.
pub fn particles_to_csv<T: Scalar>(ps: &ParticleSet<T>) -> String {
    let mut out = (0..ps.dim()).map(|k| format!("z{k}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for p in ps.iter() {
        out.push_str(&p.z.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

/// Parses particle CSV text; columns must be named `z0, z1, ...` in order.
pub fn particles_from_csv<T: Scalar>(text: &str, origin: &str) -> Result<ParticleSet<T>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Load(format!("{origin}: {e}")))?.clone();
    for (k, h) in headers.iter().enumerate() {
        if h != format!("z{k}") {
            return Err(Error::Load(format!("{origin}: column {} is {h:?}, expected \"z{k}\"", k + 1)));
        }
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Load(format!("{origin}: row {}: {e}", i + 1)))?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(k, v)| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .map(T::lit)
                    .ok_or_else(|| Error::Load(format!("{origin}: row {}, column z{k}: {v:?} is not a finite number", i + 1)))
            })
            .collect::<Result<Vec<T>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Load(format!("{origin}: no particles")));
    }
    ParticleSet::from_rows(rows)
}

pub fn read_particles<T: Scalar>(path: impl AsRef<Path>) -> Result<ParticleSet<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    particles_from_csv(&text, &path.display().to_string())
}
