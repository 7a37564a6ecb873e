//! Rigid registration of two volumes.
//!
//! The pipeline is: threshold both volumes and keep the largest connected
//! component, align mask centroids and principal axes, then refine the six
//! parameters level by level on a Gaussian pyramid by descending the negated
//! Mattes mutual information. The resulting transform maps fixed-frame points
//! into the moving frame; its inverse carries moving-frame lesion centroids
//! back into the fixed frame.

mod init;
mod mask;
mod metric;
mod pyramid;
mod resample;
mod transform;

pub use init::{initialize_transform, Initialization, PrincipalAxes, AXIS_RATIO_MIN};
pub use mask::{preprocess_mask, BinaryMask};
pub use metric::{cubic_bspline, mattes_mi, mutual_information, MattesMutualInformation, MIN_VALID_SAMPLES};
pub use pyramid::{gaussian_smooth, shrink};
pub use resample::{resample, resample_with_fill};
pub use transform::{
    angles_from_matrix, determinant, mat_mul, mat_vec, rotation_matrix, transpose, Mat3, PointMapper, RigidTransform,
    IDENTITY,
};

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LesionAnnotation, Point3, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    pub histogram_bins: usize,
    /// Fraction of fixed voxels sampled for the metric.
    pub sample_fraction: f64,
    /// Initial step length, in voxels of the current level.
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub convergence_tolerance: f64,
    /// Number of consecutive iterations whose metric change must stay below
    /// the tolerance.
    pub convergence_window: usize,
    pub shrink_factors: Vec<usize>,
    /// Gaussian sigma per level, in voxels of the unshrunk volume.
    pub smoothing_sigmas: Vec<f64>,
    pub rng_seed: u64,
    pub body_threshold: f64,
    /// Finite-difference steps for the angle (rad) and translation (mm) gradients.
    pub angle_delta: f64,
    pub translation_delta: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            histogram_bins: 50,
            sample_fraction: 0.10,
            learning_rate: 0.1,
            max_iterations: 1000,
            convergence_tolerance: 1e-10,
            convergence_window: 5,
            shrink_factors: vec![2, 1, 1],
            smoothing_sigmas: vec![4.0, 2.0, 1.0],
            rng_seed: 0,
            body_threshold: -300.0,
            angle_delta: 1e-3,
            translation_delta: 0.1,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.histogram_bins < 6 {
            return bad(format!("histogram_bins must be >= 6, got {}", self.histogram_bins));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return bad(format!(
                "sample_fraction must be in (0, 1], got {}",
                self.sample_fraction
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.shrink_factors.is_empty() || self.shrink_factors.len() != self.smoothing_sigmas.len() {
            return bad("shrink_factors and smoothing_sigmas must be non-empty and of equal length".into());
        }
        if self.shrink_factors.contains(&0) {
            return bad("shrink factors must be >= 1".into());
        }
        if self.smoothing_sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("smoothing sigmas must be finite and >= 0".into());
        }
        if self.convergence_window == 0 {
            return bad("convergence_window must be >= 1".into());
        }
        if !(self.angle_delta > 0.0 && self.translation_delta > 0.0) {
            return bad("finite-difference deltas must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub shrink_factor: usize,
    pub smoothing_sigma: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_metric: f64,
    pub final_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    /// Maps fixed-frame physical points to moving-frame physical points.
    pub transform: RigidTransform,
    pub initial_transform: RigidTransform,
    pub rotation_from_axes: bool,
    pub final_metric: f64,
    pub converged: bool,
    pub levels: Vec<LevelReport>,
    /// Metric after every iteration of every level.
    pub metric_trace: Vec<f64>,
}

impl RegistrationResult {
    pub fn iterations_per_level(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.iterations).collect()
    }

    pub fn total_iterations(&self) -> usize {
        self.levels.iter().map(|l| l.iterations).sum()
    }

    /// Result of registering a volume to itself without optimisation.
    pub fn identity() -> Self {
        RegistrationResult {
            transform: RigidTransform::IDENTITY,
            initial_transform: RigidTransform::IDENTITY,
            rotation_from_axes: false,
            final_metric: 0.0,
            converged: true,
            levels: Vec::new(),
            metric_trace: Vec::new(),
        }
    }

    /// Moving-frame point to fixed-frame point.
    pub fn map_to_fixed(&self, p: Point3) -> Point3 {
        self.transform.inverse().apply(p)
    }
}

/// Registers `moving` onto `fixed`.
pub fn register(fixed: &Volume, moving: &Volume, cfg: &RegistrationConfig) -> Result<RegistrationResult> {
    cfg.validate()?;
    let fixed_mask = preprocess_mask(fixed, cfg.body_threshold)?;
    let moving_mask = preprocess_mask(moving, cfg.body_threshold)?;
    let init = initialize_transform(&fixed_mask, &moving_mask)?;
    register_from(fixed, moving, cfg, init, &fixed_mask)
}

/// Runs the multi-resolution optimisation from a given initial transform.
pub fn register_from(
    fixed: &Volume,
    moving: &Volume,
    cfg: &RegistrationConfig,
    init: Initialization,
    fixed_mask: &BinaryMask,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    let center = init.transform.center;
    let min_spacing = fixed.spacing().into_iter().fold(f64::INFINITY, f64::min);
    let radius = fixed_mask
        .points()
        .map(|p| p.distance(center))
        .fold(min_spacing, f64::max);

    let mut transform = init.transform;
    let mut levels = Vec::with_capacity(cfg.shrink_factors.len());
    let mut trace = Vec::new();
    for (level, (&factor, &sigma)) in cfg.shrink_factors.iter().zip(&cfg.smoothing_sigmas).enumerate() {
        let f_level = shrink(&gaussian_smooth(fixed, sigma), factor);
        let m_level = shrink(&gaussian_smooth(moving, sigma), factor);
        let metric = MattesMutualInformation::new(&f_level, &m_level, cfg, level as u64)?;
        let spacing = f_level.spacing();
        let unit = (spacing[0] + spacing[1] + spacing[2]) / 3.0;
        let angle_unit = unit / radius;
        let scales = [angle_unit, angle_unit, angle_unit, unit, unit, unit];
        let (t, report) = descend(&metric, transform, &scales, cfg, level, &mut trace)?;
        log::debug!(
            "level {level}: shrink {factor}, sigma {sigma}, {} iterations, metric {:.6}, converged {}",
            report.iterations,
            report.final_metric,
            report.converged
        );
        transform = t;
        levels.push(LevelReport {
            shrink_factor: factor,
            smoothing_sigma: sigma,
            ..report
        });
    }
    let last = levels.last().expect("at least one level");
    Ok(RegistrationResult {
        transform,
        initial_transform: init.transform,
        rotation_from_axes: init.rotation_from_axes,
        final_metric: last.final_metric,
        converged: last.converged,
        levels,
        metric_trace: trace,
    })
}

/// Normalised-step gradient descent in scaled parameter space.
///
/// Each iteration moves `step` scaled units against the central-difference
/// gradient. A move that does not lower the metric is rejected and halves the
/// step. The level stops after `max_iterations` or once the metric has changed
/// by less than the tolerance for `convergence_window` consecutive iterations.
fn descend(
    metric: &MattesMutualInformation<'_>,
    start: RigidTransform,
    scales: &[f64; 6],
    cfg: &RegistrationConfig,
    level: usize,
    trace: &mut Vec<f64>,
) -> Result<(RigidTransform, LevelReport)> {
    let deltas = [
        cfg.angle_delta,
        cfg.angle_delta,
        cfg.angle_delta,
        cfg.translation_delta,
        cfg.translation_delta,
        cfg.translation_delta,
    ];
    let eval = |p: [f64; 6], iteration: usize| -> Result<f64> {
        let m = metric.evaluate(&start.with_parameters(p))?;
        if m.is_finite() {
            Ok(m)
        } else {
            Err(Error::Diverged { level, iteration })
        }
    };

    let mut params = start.parameters();
    let mut value = eval(params, 0)?;
    let mut step = cfg.learning_rate;
    let mut recent: VecDeque<f64> = VecDeque::with_capacity(cfg.convergence_window);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let mut grad = [0.0; 6];
        for i in 0..6 {
            let mut hi = params;
            let mut lo = params;
            hi[i] += deltas[i];
            lo[i] -= deltas[i];
            let g = (eval(hi, iterations)? - eval(lo, iterations)?) / (2.0 * deltas[i]);
            grad[i] = g * scales[i];
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm == 0.0 {
            trace.push(value);
            converged = true;
            break;
        }
        let mut candidate = params;
        for i in 0..6 {
            candidate[i] -= step * grad[i] / norm * scales[i];
        }
        let next = eval(candidate, iterations)?;
        let change = if next < value {
            let c = value - next;
            params = candidate;
            value = next;
            c
        } else {
            step *= 0.5;
            0.0
        };
        trace.push(value);
        if recent.len() == cfg.convergence_window {
            recent.pop_front();
        }
        recent.push_back(change);
        if recent.len() == cfg.convergence_window && recent.iter().all(|&c| c < cfg.convergence_tolerance) {
            converged = true;
            break;
        }
    }
    Ok((
        start.with_parameters(params),
        LevelReport {
            shrink_factor: 1,
            smoothing_sigma: 0.0,
            iterations,
            converged,
            final_metric: value,
            final_step: step,
        },
    ))
}

/// Carries moving-frame lesion centroids into the fixed frame through the
/// inverse of the registration transform.
pub fn map_lesion_centroids(result: &RegistrationResult, lesions: &[LesionAnnotation]) -> Vec<LesionAnnotation> {
    let inverse = result.transform.inverse().mapper();
    lesions
        .iter()
        .map(|a| LesionAnnotation {
            centroid: inverse.apply(a.centroid),
            ..a.clone()
        })
        .collect()
}
