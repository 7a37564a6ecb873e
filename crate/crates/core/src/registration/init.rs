//! Moment-based initial alignment of two masks.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::mask::BinaryMask;
use super::transform::{angles_from_matrix, determinant, Mat3, RigidTransform};
use crate::error::{Error, Result};
use crate::model::Point3;

/// Minimum ratio between consecutive second-moment eigenvalues for the
/// principal axes to be considered well defined.
pub const AXIS_RATIO_MIN: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrincipalAxes {
    pub centroid: Point3,
    /// Unit axes as rows, ordered by descending eigenvalue.
    pub axes: [[f64; 3]; 3],
    pub eigenvalues: [f64; 3],
}

impl PrincipalAxes {
    pub fn of(mask: &BinaryMask) -> Option<Self> {
        let centroid = mask.centroid()?;
        let mut cov = Matrix3::<f64>::zeros();
        let mut n = 0usize;
        for p in mask.points() {
            let d = Vector3::new(p.x - centroid.x, p.y - centroid.y, p.z - centroid.z);
            cov += d * d.transpose();
            n += 1;
        }
        cov /= n as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut axes = [[0.0; 3]; 3];
        let mut eigenvalues = [0.0; 3];
        for (slot, &o) in order.iter().enumerate() {
            let v = eig.eigenvectors.column(o);
            axes[slot] = [v[0], v[1], v[2]];
            eigenvalues[slot] = eig.eigenvalues[o];
        }
        Some(PrincipalAxes {
            centroid,
            axes,
            eigenvalues,
        })
    }

    /// Whether consecutive eigenvalues are separated enough to order the axes.
    pub fn is_distinct(&self) -> bool {
        let [l0, l1, l2] = self.eigenvalues;
        l1 > 0.0 && l2 > 0.0 && l0 / l1 >= AXIS_RATIO_MIN && l1 / l2 >= AXIS_RATIO_MIN
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Initialization {
    pub transform: RigidTransform,
    /// False when degenerate moments forced a translation-only start.
    pub rotation_from_axes: bool,
}

/// Aligns mask centroids and, when both masks have distinct principal axes,
/// their axes. The result maps fixed-frame points into the moving frame and
/// rotates about the fixed-mask centroid.
pub fn initialize_transform(fixed: &BinaryMask, moving: &BinaryMask) -> Result<Initialization> {
    let empty = || Error::EmptyMask { threshold: f64::NAN };
    let fa = PrincipalAxes::of(fixed).ok_or_else(empty)?;
    let ma = PrincipalAxes::of(moving).ok_or_else(empty)?;
    let translation = (ma.centroid - fa.centroid).to_array();

    if !(fa.is_distinct() && ma.is_distinct()) {
        return Ok(Initialization {
            transform: RigidTransform::new([0.0; 3], translation, fa.centroid),
            rotation_from_axes: false,
        });
    }

    let mut m_axes = ma.axes;
    let mut dots = [0.0; 3];
    for k in 0..3 {
        let d: f64 = (0..3).map(|c| fa.axes[k][c] * m_axes[k][c]).sum();
        if d < 0.0 {
            m_axes[k] = m_axes[k].map(|v| -v);
        }
        dots[k] = d.abs();
    }
    // R = sum_k m_k f_k^T sends each fixed axis onto its moving counterpart.
    let mut r = rotation_from_axes(&fa.axes, &m_axes);
    if determinant(&r) < 0.0 {
        // Flip the least certain pairing to restore a proper rotation.
        let k = (0..3).min_by(|&a, &b| dots[a].total_cmp(&dots[b])).unwrap_or(2);
        m_axes[k] = m_axes[k].map(|v| -v);
        r = rotation_from_axes(&fa.axes, &m_axes);
    }
    Ok(Initialization {
        transform: RigidTransform::new(angles_from_matrix(&r), translation, fa.centroid),
        rotation_from_axes: true,
    })
}

fn rotation_from_axes(fixed: &[[f64; 3]; 3], moving: &[[f64; 3]; 3]) -> Mat3 {
    let mut r = [[0.0; 3]; 3];
    for k in 0..3 {
        for (row, out) in r.iter_mut().enumerate() {
            for (col, cell) in out.iter_mut().enumerate() {
                *cell += moving[k][row] * fixed[k][col];
            }
        }
    }
    r
}
