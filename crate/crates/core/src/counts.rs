//! Poisson count generation and binomial thinning of recorded counts.

use crate::error::{Error, Result};
use crate::grid::Image;
use crate::projector::{project, Sinogram, SystemMatrix};
use crate::rng::RngStream;

/// A simulated sinogram together with the global scale that was applied to
/// the projection of the ground truth. `scale * x_true` is the image the
/// reconstruction should recover.
#[derive(Debug, Clone)]
pub struct SimulatedCounts {
    pub sinogram: Sinogram,
    pub scale: f64,
}

/// Scale the noise-free projection so the total expected counts (including
/// a uniform additive term carrying `s_fraction` of the total) equal
/// `total_counts`, then draw independent Poisson counts per bin.
pub fn simulate_counts(
    a: &SystemMatrix,
    x_true: &Image,
    s_fraction: f64,
    total_counts: f64,
    seed: u64,
) -> Result<SimulatedCounts> {
    if !(total_counts > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "total_counts must be positive, got {total_counts}"
        )));
    }
    if !(0.0..1.0).contains(&s_fraction) {
        return Err(Error::InvalidArgument(format!(
            "s_fraction must be in [0, 1), got {s_fraction}"
        )));
    }
    let raw = project(a, x_true)?;
    let raw_sum: f64 = raw.iter().sum();
    if raw_sum <= 0.0 {
        return Err(Error::InvalidArgument(
            "all-zero projection: nothing to scale counts to".into(),
        ));
    }
    let m = a.n_lors();
    let scale = total_counts * (1.0 - s_fraction) / raw_sum;
    let s_per_bin = total_counts * s_fraction / m as f64;
    let additive = vec![s_per_bin; m];
    let mut rng = RngStream::derived(seed, "poisson-counts", 0);
    let counts: Vec<f64> = raw
        .iter()
        .map(|&v| rng.poisson(scale * v + s_per_bin) as f64)
        .collect();
    Ok(SimulatedCounts {
        sinogram: Sinogram::new(a.geometry.clone(), counts, additive)?,
        scale,
    })
}

fn thin_one(y: &Sinogram, ratio: f64, seed: u64, index: u64) -> Result<Sinogram> {
    let mut rng = RngStream::derived(seed, "thin", index);
    let mut counts = Vec::with_capacity(y.counts.len());
    for (i, &c) in y.counts.iter().enumerate() {
        if c.fract() != 0.0 || c < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "thinning needs integer counts; bin {i} is {c}"
            )));
        }
        counts.push(rng.binomial(c as u64, ratio) as f64);
    }
    let additive = y.additive.iter().map(|&s| s * ratio).collect();
    Sinogram::new(y.geometry.clone(), counts, additive)
}

/// Draw `n_realizations` independent binomial thinnings of `y`; realization
/// r uses the derived seed (seed, "thin", r), so realizations are i.i.d.
/// and individually reproducible.
pub fn thin_counts(
    y: &Sinogram,
    ratio: f64,
    n_realizations: usize,
    seed: u64,
) -> Result<Vec<Sinogram>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "thinning ratio must be in (0, 1], got {ratio}"
        )));
    }
    (0..n_realizations)
        .map(|r| thin_one(y, ratio, seed, r as u64))
        .collect()
}
