//! Mattes mutual information on a fixed set of random points drawn
//! uniformly inside the ellipsoid inscribed in the fixed image's extent.
//!
//! The joint histogram has `bins x bins` cells over each image's full
//! intensity range. Fixed intensities are hard-binned; moving intensities are
//! spread over four neighbouring bins with a cubic B-spline Parzen window,
//! using two padding bins at each end of the moving axis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::transform::RigidTransform;
use super::RegistrationConfig;
use crate::error::{Error, Result};
use crate::model::{Point3, Volume};

/// Fewer valid samples than this makes the histogram meaningless.
pub const MIN_VALID_SAMPLES: usize = 25;

const PARZEN_PADDING: usize = 2;

/// Cubic B-spline kernel.
#[inline]
pub fn cubic_bspline(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        2.0 / 3.0 - a * a + 0.5 * a * a * a
    } else if a < 2.0 {
        let t = 2.0 - a;
        t * t * t / 6.0
    } else {
        0.0
    }
}

/// Seeded sampler for one (fixed, moving) pair; samples are drawn once and
/// reused for every evaluation so the objective is deterministic.
#[derive(Debug, Clone)]
pub struct MattesMutualInformation<'a> {
    moving: &'a Volume,
    bins: usize,
    points: Vec<Point3>,
    fixed_bins: Vec<u16>,
    moving_min: f64,
    moving_bin_width: f64,
}

impl<'a> MattesMutualInformation<'a> {
    pub fn new(fixed: &Volume, moving: &'a Volume, cfg: &RegistrationConfig, level_seed: u64) -> Result<Self> {
        let bins = cfg.histogram_bins;
        if bins < 2 + 2 * PARZEN_PADDING {
            return Err(Error::Config(format!(
                "need at least {} histogram bins",
                2 + 2 * PARZEN_PADDING
            )));
        }
        let (fmin, fmax) = fixed.intensity_range();
        if fmax <= fmin {
            return Err(Error::InsufficientRange { which: "fixed" });
        }
        let (mmin, mmax) = moving.intensity_range();
        if mmax <= mmin {
            return Err(Error::InsufficientRange { which: "moving" });
        }

        let n_samples = (cfg.sample_fraction * fixed.len() as f64).floor() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        rng.set_stream(level_seed);
        let fbin_width = (fmax - fmin) / bins as f64;
        let extent = fixed.dims().map(|n| (n - 1) as f64);
        let mut points = Vec::with_capacity(n_samples);
        let mut fixed_bins = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            // Continuous positions, drawn uniformly inside the ellipsoid
            // inscribed in the grid. Voxel-centre samples make an identical
            // image read without interpolation only at identity, and samples
            // near the corners leave the moving volume under the smallest
            // rotation; discarding them shifts the MI optimum off alignment.
            let idx = loop {
                let u: [f64; 3] = [rng.random(), rng.random(), rng.random()];
                if u.iter().map(|x| (2.0 * x - 1.0).powi(2)).sum::<f64>() <= 1.0 {
                    break [0, 1, 2].map(|a| u[a] * extent[a]);
                }
            };
            let value = fixed.interpolate_index(idx).expect("sample lies inside the fixed grid");
            points.push(fixed.voxel_to_physical(idx));
            let b = ((value - fmin) / fbin_width).floor() as usize;
            fixed_bins.push(b.min(bins - 1) as u16);
        }
        Ok(MattesMutualInformation {
            moving,
            bins,
            points,
            fixed_bins,
            moving_min: mmin,
            moving_bin_width: (mmax - mmin) / (bins - 2 * PARZEN_PADDING) as f64,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.points.len()
    }

    /// Negated mutual information (lower is better) for `t` mapping fixed
    /// points into the moving image.
    pub fn evaluate(&self, t: &RigidTransform) -> Result<f64> {
        let bins = self.bins;
        let mut joint = vec![0.0f64; bins * bins];
        let mapper = t.mapper();
        let mut valid = 0usize;
        for (p, &fb) in self.points.iter().zip(&self.fixed_bins) {
            let q = mapper.apply(*p);
            let Some(m) = self.moving.interpolate(q) else {
                continue;
            };
            valid += 1;
            let term = (m - self.moving_min) / self.moving_bin_width + PARZEN_PADDING as f64;
            let start = term.floor() as isize - 1;
            let row = fb as usize * bins;
            for offset in 0..4 {
                let b = start + offset;
                if b >= 0 && (b as usize) < bins {
                    joint[row + b as usize] += cubic_bspline(b as f64 - term);
                }
            }
        }
        if valid < MIN_VALID_SAMPLES {
            return Err(Error::InsufficientOverlap {
                valid,
                required: MIN_VALID_SAMPLES,
            });
        }
        Ok(-mutual_information(&joint, bins))
    }
}

/// Mutual information (nats) of an unnormalised joint histogram stored
/// row-major with fixed bins along rows.
pub fn mutual_information(joint: &[f64], bins: usize) -> f64 {
    let total: f64 = joint.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let mut pf = vec![0.0; bins];
    let mut pm = vec![0.0; bins];
    for f in 0..bins {
        for m in 0..bins {
            let p = joint[f * bins + m] / total;
            pf[f] += p;
            pm[m] += p;
        }
    }
    let mut mi = 0.0;
    for f in 0..bins {
        for m in 0..bins {
            let p = joint[f * bins + m] / total;
            if p > 0.0 {
                mi += p * (p / (pf[f] * pm[m])).ln();
            }
        }
    }
    mi
}

/// One-shot evaluation of the metric.
pub fn mattes_mi(
    fixed: &Volume,
    moving: &Volume,
    t: &RigidTransform,
    cfg: &RegistrationConfig,
    level_seed: u64,
) -> Result<f64> {
    MattesMutualInformation::new(fixed, moving, cfg, level_seed)?.evaluate(t)
}
