//! Six-parameter rigid transforms.
//!
//! The rotation is the ordered product `Rx(a1) * Ry(a2) * Rz(a3)` of
//!
//! ```text
//! | 1    0      0   |   | cos a2  0  -sin a2 |   |  cos a3  sin a3  0 |
//! | 0  cos a1 sin a1| * |   0     1     0    | * | -sin a3  cos a3  0 |
//! | 0 -sin a1 cos a1|   | sin a2  0   cos a2 |   |    0       0     1 |
//! ```
//!
//! and a point is mapped as `center + R (p - center) + t`.

use serde::{Deserialize, Serialize};

use crate::model::Point3;

pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            *cell = a[r][0] * b[0][c] + a[r][1] * b[1][c] + a[r][2] * b[2][c];
        }
    }
    out
}

pub fn mat_vec(m: &Mat3, p: Point3) -> Point3 {
    Point3::new(
        m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z,
        m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z,
        m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z,
    )
}

pub fn transpose(m: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (r, row) in m.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            out[c][r] = v;
        }
    }
    out
}

pub fn determinant(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Rotation matrix for angles `(a1, a2, a3)` in radians.
pub fn rotation_matrix(angles: [f64; 3]) -> Mat3 {
    let (s1, c1) = angles[0].sin_cos();
    let (s2, c2) = angles[1].sin_cos();
    let (s3, c3) = angles[2].sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, c1, s1], [0.0, -s1, c1]];
    let ry = [[c2, 0.0, -s2], [0.0, 1.0, 0.0], [s2, 0.0, c2]];
    let rz = [[c3, s3, 0.0], [-s3, c3, 0.0], [0.0, 0.0, 1.0]];
    mat_mul(&mat_mul(&rx, &ry), &rz)
}

/// Recovers angles from a rotation matrix so that
/// `rotation_matrix(angles_from_matrix(r)) == r`. `a2` lies in `[-pi/2, pi/2]`;
/// at gimbal lock `a3` is set to zero.
pub fn angles_from_matrix(r: &Mat3) -> [f64; 3] {
    // r[0] = [c2 c3, c2 s3, -s2], r[1][2] = s1 c2, r[2][2] = c1 c2
    let s2 = (-r[0][2]).clamp(-1.0, 1.0);
    let a2 = s2.asin();
    if a2.cos() > 1e-9 {
        let a1 = r[1][2].atan2(r[2][2]);
        let a3 = r[0][1].atan2(r[0][0]);
        [a1, a2, a3]
    } else {
        // c2 = 0: with a3 = 0, r[1][0] = s1 s2 and r[1][1] = c1
        let a1 = (r[1][0] * s2.signum()).atan2(r[1][1]);
        [a1, a2, 0.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    /// Rotation angles in radians.
    pub angles: [f64; 3],
    /// Translation in millimetres.
    pub translation: [f64; 3],
    /// Rotation centre in millimetres.
    pub center: Point3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        angles: [0.0; 3],
        translation: [0.0; 3],
        center: Point3::ORIGIN,
    };

    pub fn new(angles: [f64; 3], translation: [f64; 3], center: Point3) -> Self {
        RigidTransform {
            angles,
            translation,
            center,
        }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        RigidTransform {
            translation: t,
            ..Self::IDENTITY
        }
    }

    pub fn is_finite(&self) -> bool {
        self.angles.iter().chain(&self.translation).all(|v| v.is_finite()) && self.center.is_finite()
    }

    pub fn matrix(&self) -> Mat3 {
        rotation_matrix(self.angles)
    }

    pub fn translation_vec(&self) -> Point3 {
        Point3::from(self.translation)
    }

    /// Parameters as `[a1, a2, a3, t1, t2, t3]`.
    pub fn parameters(&self) -> [f64; 6] {
        let [a1, a2, a3] = self.angles;
        let [t1, t2, t3] = self.translation;
        [a1, a2, a3, t1, t2, t3]
    }

    pub fn with_parameters(&self, p: [f64; 6]) -> Self {
        RigidTransform {
            angles: [p[0], p[1], p[2]],
            translation: [p[3], p[4], p[5]],
            center: self.center,
        }
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        self.mapper().apply(p)
    }

    /// Precomputes the rotation for repeated application.
    pub fn mapper(&self) -> PointMapper {
        PointMapper {
            rotation: self.matrix(),
            center: self.center,
            offset: self.center + self.translation_vec(),
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        // p = c + R^T (q - c - t); with c' = c + t this is c' + R^T (q - c') - t
        let rt = transpose(&self.matrix());
        RigidTransform {
            angles: angles_from_matrix(&rt),
            translation: [-self.translation[0], -self.translation[1], -self.translation[2]],
            center: self.center + self.translation_vec(),
        }
    }

    /// The same mapping expressed about a different rotation centre.
    pub fn recentered(&self, center: Point3) -> RigidTransform {
        let r = self.matrix();
        let t = mat_vec(&r, center - self.center) + self.center - center + self.translation_vec();
        RigidTransform {
            angles: self.angles,
            translation: t.to_array(),
            center,
        }
    }

    /// `self` after `first`: `p -> self(first(p))`, centred at `first.center`.
    pub fn compose(&self, first: &RigidTransform) -> RigidTransform {
        let r = mat_mul(&self.matrix(), &first.matrix());
        let c = first.center;
        let t = self.apply(first.apply(c)) - c;
        RigidTransform {
            angles: angles_from_matrix(&r),
            translation: t.to_array(),
            center: c,
        }
    }

    pub fn angles_degrees(&self) -> [f64; 3] {
        self.angles.map(f64::to_degrees)
    }
}

/// A rigid transform with its rotation matrix precomputed.
#[derive(Debug, Clone, Copy)]
pub struct PointMapper {
    rotation: Mat3,
    center: Point3,
    offset: Point3,
}

impl PointMapper {
    #[inline]
    pub fn apply(&self, p: Point3) -> Point3 {
        mat_vec(&self.rotation, p - self.center) + self.offset
    }
}
