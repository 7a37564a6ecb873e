//! Domain types shared by every stage: physical points, lesion annotations and
//! axis-aligned scalar volumes.
//!
//! All physical coordinates are millimetres. A [`Volume`] places the centre of
//! voxel `(0, 0, 0)` at its origin and advances by `spacing` along each axis;
//! there is no direction-cosine matrix.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A position in physical space, in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dot(self, other: Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, other: Point3) -> f64 {
        (self - other).norm()
    }

    /// Arithmetic mean of a non-empty set of points.
    pub fn mean<I: IntoIterator<Item = Point3>>(points: I) -> Option<Point3> {
        let mut sum = Point3::ORIGIN;
        let mut n = 0usize;
        for p in points {
            sum += p;
            n += 1;
        }
        (n > 0).then(|| sum * (1.0 / n as f64))
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }
}

impl From<Point3> for [f64; 3] {
    fn from(p: Point3) -> Self {
        p.to_array()
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Point3 {
    fn add_assign(&mut self, o: Point3) {
        *self = *self + o;
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Point3 {
    type Output = Point3;
    fn neg(self) -> Point3 {
        Point3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl fmt::Display for Point3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.3}, {:.3}, {:.3})", self.x, self.y, self.z)
    }
}

impl FromStr for Point3 {
    type Err = Error;

    /// Parses `x,y,z`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::Parse(format!("expected x,y,z but got {s:?}")));
        }
        let mut out = [0.0; 3];
        for (slot, part) in out.iter_mut().zip(&parts) {
            *slot = part
                .parse()
                .map_err(|_| Error::Parse(format!("bad coordinate {part:?} in {s:?}")))?;
        }
        let p = Point3::from(out);
        if !p.is_finite() {
            return Err(Error::Parse(format!("non-finite coordinate in {s:?}")));
        }
        Ok(p)
    }
}

/// Target lesions are measured and tracked; non-targets are annotated only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LesionClass {
    Target,
    NonTarget,
}

impl LesionClass {
    pub const ALL: [LesionClass; 2] = [LesionClass::Target, LesionClass::NonTarget];

    /// Prefix used for canonical track names.
    pub fn name_prefix(self) -> &'static str {
        match self {
            LesionClass::Target => "G",
            LesionClass::NonTarget => "NG",
        }
    }
}

impl fmt::Display for LesionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LesionClass::Target => "target",
            LesionClass::NonTarget => "non-target",
        })
    }
}

impl FromStr for LesionClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "target" | "t" => Ok(LesionClass::Target),
            "non-target" | "nontarget" | "non_target" | "nt" => Ok(LesionClass::NonTarget),
            other => Err(Error::Parse(format!("unknown lesion class {other:?}"))),
        }
    }
}

/// One reader's mark of one lesion in one image series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionAnnotation {
    pub centroid: Point3,
    pub class: LesionClass,
    pub reader_id: String,
    pub series_id: String,
    pub timepoint_id: String,
    /// The reader's own name for the lesion, e.g. `T1`.
    pub source_label: String,
}

/// Identity of an annotation within a patient dataset.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AnnotationKey {
    pub timepoint_id: String,
    pub series_id: String,
    pub reader_id: String,
    pub source_label: String,
    pub class: LesionClass,
}

impl fmt::Display for AnnotationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{} ({})",
            self.timepoint_id, self.series_id, self.reader_id, self.source_label, self.class
        )
    }
}

impl LesionAnnotation {
    pub fn new(
        centroid: Point3,
        class: LesionClass,
        reader_id: impl Into<String>,
        series_id: impl Into<String>,
        timepoint_id: impl Into<String>,
        source_label: impl Into<String>,
    ) -> Result<Self> {
        let ann = LesionAnnotation {
            centroid,
            class,
            reader_id: reader_id.into(),
            series_id: series_id.into(),
            timepoint_id: timepoint_id.into(),
            source_label: source_label.into(),
        };
        ann.validate()?;
        Ok(ann)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.centroid.is_finite() {
            return Err(Error::data(None, format!("non-finite centroid for {}", self.key())));
        }
        if self.source_label.trim().is_empty() {
            return Err(Error::data(None, "empty source label"));
        }
        Ok(())
    }

    pub fn key(&self) -> AnnotationKey {
        AnnotationKey {
            timepoint_id: self.timepoint_id.clone(),
            series_id: self.series_id.clone(),
            reader_id: self.reader_id.clone(),
            source_label: self.source_label.clone(),
            class: self.class,
        }
    }

    /// Ordering key used when numbering new tracks.
    pub(crate) fn naming_key(&self) -> (&str, &str, &str, &str) {
        (&self.timepoint_id, &self.series_id, &self.reader_id, &self.source_label)
    }
}

/// An axis-aligned 3D scalar grid.
///
/// Voxels are stored x-fastest: the value at `(i, j, k)` lives at
/// `i + nx * (j + ny * k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: Point3,
    voxels: Vec<f64>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: Point3, voxels: Vec<f64>) -> Result<Self> {
        Self::check_geometry(dims, spacing, origin)?;
        let expected = dims[0] * dims[1] * dims[2];
        if voxels.len() != expected {
            return Err(Error::Size {
                expected,
                found: voxels.len(),
            });
        }
        if let Some(pos) = voxels.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(None, format!("non-finite intensity at voxel {pos}")));
        }
        Ok(Volume {
            dims,
            spacing,
            origin,
            voxels,
        })
    }

    pub fn filled(dims: [usize; 3], spacing: [f64; 3], origin: Point3, value: f64) -> Result<Self> {
        Self::new(dims, spacing, origin, vec![value; dims[0] * dims[1] * dims[2]])
    }

    /// Builds a volume by evaluating `f` at every voxel index.
    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: Point3,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut voxels = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    voxels.push(f(i, j, k));
                }
            }
        }
        Self::new(dims, spacing, origin, voxels)
    }

    pub(crate) fn check_geometry(dims: [usize; 3], spacing: [f64; 3], origin: Point3) -> Result<()> {
        if dims.contains(&0) {
            return Err(Error::data(None, format!("dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::data(None, format!("spacing must be positive, got {spacing:?}")));
        }
        if !origin.is_finite() {
            return Err(Error::data(None, "origin must be finite"));
        }
        Ok(())
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> Point3 {
        self.origin
    }

    pub fn voxels(&self) -> &[f64] {
        &self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn into_voxels(self) -> Vec<f64> {
        self.voxels
    }

    /// A new volume with the same geometry and different intensities.
    pub fn with_voxels(&self, voxels: Vec<f64>) -> Result<Volume> {
        Volume::new(self.dims, self.spacing, self.origin, voxels)
    }

    #[inline]
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.voxels[self.linear_index(i, j, k)]
    }

    pub fn same_geometry(&self, other: &Volume) -> bool {
        self.dims == other.dims && self.spacing == other.spacing && self.origin == other.origin
    }

    pub fn intensity_range(&self) -> (f64, f64) {
        self.voxels
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// `origin + index * spacing`, componentwise. Indices may be fractional
    /// or outside the grid.
    pub fn voxel_to_physical(&self, index: [f64; 3]) -> Point3 {
        Point3::new(
            self.origin.x + index[0] * self.spacing[0],
            self.origin.y + index[1] * self.spacing[1],
            self.origin.z + index[2] * self.spacing[2],
        )
    }

    pub fn physical_to_voxel(&self, p: Point3) -> [f64; 3] {
        [
            (p.x - self.origin.x) / self.spacing[0],
            (p.y - self.origin.y) / self.spacing[1],
            (p.z - self.origin.z) / self.spacing[2],
        ]
    }

    /// Whether a continuous index lies within the span of voxel centres.
    pub fn contains_index(&self, index: [f64; 3]) -> bool {
        const EPS: f64 = 1e-9;
        (0..3).all(|a| index[a] >= -EPS && index[a] <= (self.dims[a] - 1) as f64 + EPS)
    }

    pub fn contains_physical(&self, p: Point3) -> bool {
        self.contains_index(self.physical_to_voxel(p))
    }

    /// Trilinear interpolation at a continuous voxel index; `None` outside
    /// the span of voxel centres.
    pub fn interpolate_index(&self, index: [f64; 3]) -> Option<f64> {
        if !self.contains_index(index) {
            return None;
        }
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let max = self.dims[a] - 1;
            let c = index[a].clamp(0.0, max as f64);
            let b = (c.floor() as usize).min(max.saturating_sub(1));
            base[a] = b;
            frac[a] = if max == 0 { 0.0 } else { c - b as f64 };
        }
        let step = [
            usize::from(self.dims[0] > 1),
            usize::from(self.dims[1] > 1) * self.dims[0],
            usize::from(self.dims[2] > 1) * self.dims[0] * self.dims[1],
        ];
        let i0 = self.linear_index(base[0], base[1], base[2]);
        let v = &self.voxels;
        let [fx, fy, fz] = frac;
        let c00 = v[i0] * (1.0 - fx) + v[i0 + step[0]] * fx;
        let c10 = v[i0 + step[1]] * (1.0 - fx) + v[i0 + step[1] + step[0]] * fx;
        let c01 = v[i0 + step[2]] * (1.0 - fx) + v[i0 + step[2] + step[0]] * fx;
        let c11 = v[i0 + step[2] + step[1]] * (1.0 - fx) + v[i0 + step[2] + step[1] + step[0]] * fx;
        let c0 = c00 * (1.0 - fy) + c10 * fy;
        let c1 = c01 * (1.0 - fy) + c11 * fy;
        Some(c0 * (1.0 - fz) + c1 * fz)
    }

    pub fn interpolate(&self, p: Point3) -> Option<f64> {
        self.interpolate_index(self.physical_to_voxel(p))
    }

    /// Physical centre of the volume.
    pub fn center(&self) -> Point3 {
        self.voxel_to_physical([
            (self.dims[0] - 1) as f64 / 2.0,
            (self.dims[1] - 1) as f64 / 2.0,
            (self.dims[2] - 1) as f64 / 2.0,
        ])
    }

    /// Value below which `fraction` of the voxels fall (nearest rank).
    pub fn percentile(&self, fraction: f64) -> f64 {
        let mut sorted = self.voxels.clone();
        sorted.sort_by(f64::total_cmp);
        let rank = (fraction.clamp(0.0, 1.0) * (sorted.len() - 1) as f64).round() as usize;
        sorted[rank]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(spacing: [f64; 3], origin: Point3) -> Volume {
        Volume::filled([4, 4, 4], spacing, origin, 0.0).unwrap()
    }

    #[test]
    fn voxel_to_physical_examples() {
        let v = vol([2.0; 3], Point3::ORIGIN);
        assert_eq!(v.voxel_to_physical([1.0, 1.0, 1.0]), Point3::new(2.0, 2.0, 2.0));
        assert_eq!(v.voxel_to_physical([0.0; 3]), v.origin());

        let v = vol([0.5, 0.5, 1.0], Point3::new(10.0, -5.0, 0.0));
        assert_eq!(v.voxel_to_physical([2.0, 2.0, 3.0]), Point3::new(11.0, -4.0, 3.0));
    }

    #[test]
    fn physical_to_voxel_examples() {
        let v = vol([2.0; 3], Point3::new(1.0, 1.0, 1.0));
        assert_eq!(v.physical_to_voxel(Point3::new(5.0, 3.0, 1.0)), [2.0, 1.0, 0.0]);
        assert_eq!(v.physical_to_voxel(v.origin()), [0.0; 3]);

        let p = Point3::new(3.5, 0.0, -2.0);
        let back = v.voxel_to_physical(v.physical_to_voxel(p));
        assert!(back.distance(p) < 1e-9);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(Volume::filled([0, 1, 1], [1.0; 3], Point3::ORIGIN, 0.0).is_err());
        assert!(Volume::filled([1, 1, 1], [1.0, 0.0, 1.0], Point3::ORIGIN, 0.0).is_err());
        assert!(matches!(
            Volume::new([2, 2, 2], [1.0; 3], Point3::ORIGIN, vec![0.0; 7]),
            Err(Error::Size { expected: 8, found: 7 })
        ));
        assert!(Volume::new([1, 1, 1], [1.0; 3], Point3::ORIGIN, vec![f64::NAN]).is_err());
    }

    #[test]
    fn trilinear_reproduces_linear_fields() {
        let v = Volume::from_fn([5, 4, 3], [1.0, 2.0, 3.0], Point3::new(-1.0, 0.0, 2.0), |i, j, k| {
            1.0 + 2.0 * i as f64 - 0.5 * j as f64 + 3.0 * k as f64
        })
        .unwrap();
        let idx = [2.25, 1.5, 0.75];
        let expected = 1.0 + 2.0 * 2.25 - 0.5 * 1.5 + 3.0 * 0.75;
        assert!((v.interpolate_index(idx).unwrap() - expected).abs() < 1e-12);
        assert_eq!(v.interpolate_index([4.0, 3.0, 2.0]), Some(v.get(4, 3, 2)));
        assert_eq!(v.interpolate_index([4.01, 0.0, 0.0]), None);
        assert_eq!(v.interpolate_index([-0.01, 0.0, 0.0]), None);
    }

    #[test]
    fn singleton_axes_interpolate() {
        let v = Volume::new([2, 1, 1], [1.0; 3], Point3::ORIGIN, vec![0.0, 10.0]).unwrap();
        assert_eq!(v.interpolate_index([0.5, 0.0, 0.0]), Some(5.0));
        assert_eq!(v.interpolate_index([0.5, 0.2, 0.0]), None);
    }

    #[test]
    fn class_parsing() {
        assert_eq!("Target".parse::<LesionClass>().unwrap(), LesionClass::Target);
        assert_eq!("non-target".parse::<LesionClass>().unwrap(), LesionClass::NonTarget);
        assert_eq!("NT".parse::<LesionClass>().unwrap(), LesionClass::NonTarget);
        assert!("lesion".parse::<LesionClass>().is_err());
    }

    #[test]
    fn annotation_validation() {
        assert!(LesionAnnotation::new(Point3::ORIGIN, LesionClass::Target, "R1", "S1", "Screening", "").is_err());
        assert!(LesionAnnotation::new(
            Point3::new(f64::INFINITY, 0.0, 0.0),
            LesionClass::Target,
            "R1",
            "S1",
            "Screening",
            "T1"
        )
        .is_err());
    }

    #[test]
    fn point_parsing() {
        assert_eq!("1, -2.5,3".parse::<Point3>().unwrap(), Point3::new(1.0, -2.5, 3.0));
        assert!("1,2".parse::<Point3>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(100))]
            #[test]
            fn index_round_trip(
                sx in 0.1f64..5.0, sy in 0.1f64..5.0, sz in 0.1f64..5.0,
                ox in -500.0f64..500.0, oy in -500.0f64..500.0, oz in -500.0f64..500.0,
                i in -10.0f64..100.0, j in -10.0f64..100.0, k in -10.0f64..100.0,
            ) {
                let v = Volume::filled([3, 3, 3], [sx, sy, sz], Point3::new(ox, oy, oz), 0.0).unwrap();
                let back = v.physical_to_voxel(v.voxel_to_physical([i, j, k]));
                prop_assert!((back[0] - i).abs() < 1e-9);
                prop_assert!((back[1] - j).abs() < 1e-9);
                prop_assert!((back[2] - k).abs() < 1e-9);
            }
        }
    }
}
