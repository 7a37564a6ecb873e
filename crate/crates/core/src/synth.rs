//! Deterministic phantoms with known lesion positions and known transforms,
//! and a small synthetic longitudinal study built from them.
//!
//! Intensities are loosely CT-like: background -1000, body 0, lesions +100,
//! so the default body threshold of -300 separates body from air without
//! configuration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{AnnotationTable, Dtype};
use crate::model::{LesionAnnotation, LesionClass, Point3, Volume};
use crate::pipeline::{PatientDataset, SeriesData, TimepointData};
use crate::registration::{resample_with_fill, RigidTransform};
use crate::track::{Cluster, Observation, TrackRegistry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodySpec {
    #[serde(default)]
    pub center: Point3,
    pub semi_axes_mm: [f64; 3],
    #[serde(default)]
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionSpec {
    pub center: Point3,
    pub radius_mm: f64,
    #[serde(default = "default_lesion_intensity")]
    pub intensity: f64,
    pub class: LesionClass,
    /// Reader label for the ground-truth annotation; defaults to `T<n>` / `NT<n>`.
    #[serde(default)]
    pub label: Option<String>,
}

fn default_lesion_intensity() -> f64 {
    100.0
}

fn default_background() -> f64 {
    -1000.0
}

fn default_noise() -> f64 {
    10.0
}

fn default_id(s: &str) -> String {
    s.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Physical position of voxel (0,0,0); defaults to centring the grid on the origin.
    #[serde(default)]
    pub origin: Option<Point3>,
    pub body: BodySpec,
    #[serde(default = "default_background")]
    pub background: f64,
    #[serde(default)]
    pub lesions: Vec<LesionSpec>,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "patient_default")]
    pub patient_id: String,
    #[serde(default = "timepoint_default")]
    pub timepoint_id: String,
    #[serde(default = "series_default")]
    pub series_id: String,
    #[serde(default = "reader_default")]
    pub reader_id: String,
}

fn patient_default() -> String {
    default_id("P1")
}
fn timepoint_default() -> String {
    default_id("Screening")
}
fn series_default() -> String {
    default_id("S1")
}
fn reader_default() -> String {
    default_id("R1")
}

impl PhantomSpec {
    /// A 64-cubed phantom at 2 mm spacing with a triaxial body and no lesions.
    pub fn standard(seed: u64) -> Self {
        PhantomSpec {
            dims: [64, 64, 64],
            spacing: [2.0; 3],
            origin: None,
            body: BodySpec {
                center: Point3::ORIGIN,
                semi_axes_mm: [40.0, 30.0, 22.0],
                intensity: 0.0,
            },
            background: -1000.0,
            lesions: Vec::new(),
            noise_sigma: 10.0,
            rng_seed: seed,
            patient_id: patient_default(),
            timepoint_id: timepoint_default(),
            series_id: series_default(),
            reader_id: reader_default(),
        }
    }

    pub fn origin(&self) -> Point3 {
        self.origin.unwrap_or_else(|| {
            Point3::new(
                -((self.dims[0] - 1) as f64) * self.spacing[0] / 2.0,
                -((self.dims[1] - 1) as f64) * self.spacing[1] / 2.0,
                -((self.dims[2] - 1) as f64) * self.spacing[2] / 2.0,
            )
        })
    }

    fn body_level(&self, p: Point3) -> f64 {
        let d = p - self.body.center;
        let [a, b, c] = self.body.semi_axes_mm;
        (d.x / a).powi(2) + (d.y / b).powi(2) + (d.z / c).powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        Volume::check_geometry(self.dims, self.spacing, self.origin()).map_err(|e| Error::Spec(e.to_string()))?;
        if self.body.semi_axes_mm.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Spec("body semi-axes must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Spec("noise_sigma must be >= 0".into()));
        }
        let max_spacing = self.spacing.iter().copied().fold(0.0, f64::max);
        for (n, l) in self.lesions.iter().enumerate() {
            if !(l.radius_mm > max_spacing) {
                return Err(Error::Spec(format!("lesion {n}: radius must exceed the voxel spacing")));
            }
            let extremes = [
                Point3::new(l.radius_mm, 0.0, 0.0),
                Point3::new(0.0, l.radius_mm, 0.0),
                Point3::new(0.0, 0.0, l.radius_mm),
            ];
            let inside = std::iter::once(l.center)
                .chain(extremes.iter().flat_map(|&e| [l.center + e, l.center - e]))
                .all(|p| self.body_level(p) <= 1.0);
            if !inside {
                return Err(Error::Spec(format!(
                    "lesion {n} at {} is not inside the body",
                    l.center
                )));
            }
        }
        Ok(())
    }

    /// Noise-free intensity of the anatomy at a world-frame point.
    pub fn intensity_at(&self, p: Point3) -> f64 {
        for l in self.lesions.iter().rev() {
            if p.distance(l.center) <= l.radius_mm {
                return l.intensity;
            }
        }
        if self.body_level(p) <= 1.0 {
            self.body.intensity
        } else {
            self.background
        }
    }

    pub fn lesion_labels(&self) -> Vec<String> {
        let mut counts = [0usize; 2];
        self.lesions
            .iter()
            .map(|l| {
                let slot = usize::from(l.class == LesionClass::NonTarget);
                counts[slot] += 1;
                l.label.clone().unwrap_or_else(|| match l.class {
                    LesionClass::Target => format!("T{}", counts[slot]),
                    LesionClass::NonTarget => format!("NT{}", counts[slot]),
                })
            })
            .collect()
    }
}

const SUPERSAMPLE: [f64; 2] = [-0.25, 0.25];

/// Renders the phantom in its own scanner frame.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(Volume, AnnotationTable)> {
    generate_phantom_posed(spec, &RigidTransform::IDENTITY)
}

/// Renders the phantom as seen by a scanner whose frame maps to the world
/// frame through `pose`. Annotations are returned in the scanner frame.
pub fn generate_phantom_posed(spec: &PhantomSpec, pose: &RigidTransform) -> Result<(Volume, AnnotationTable)> {
    spec.validate()?;
    let origin = spec.origin();
    let mapper = pose.mapper();
    let mut volume = Volume::from_fn(spec.dims, spec.spacing, origin, |i, j, k| {
        let mut acc = 0.0;
        for dx in SUPERSAMPLE {
            for dy in SUPERSAMPLE {
                for dz in SUPERSAMPLE {
                    let idx = [i as f64 + dx, j as f64 + dy, k as f64 + dz];
                    let p = Point3::new(
                        origin.x + idx[0] * spec.spacing[0],
                        origin.y + idx[1] * spec.spacing[1],
                        origin.z + idx[2] * spec.spacing[2],
                    );
                    acc += spec.intensity_at(mapper.apply(p));
                }
            }
        }
        acc / 8.0
    })?;

    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Spec(e.to_string()))?;
        let noisy: Vec<f64> = volume.voxels().iter().map(|&v| v + normal.sample(&mut rng)).collect();
        volume = volume.with_voxels(noisy)?;
    }

    let inverse = pose.inverse().mapper();
    let mut table = AnnotationTable::new();
    for (l, label) in spec.lesions.iter().zip(spec.lesion_labels()) {
        table.insert(
            &spec.patient_id,
            LesionAnnotation::new(
                inverse.apply(l.center),
                l.class,
                spec.reader_id.clone(),
                spec.series_id.clone(),
                spec.timepoint_id.clone(),
                label,
            )?,
        )?;
    }
    Ok((volume, table))
}

/// Resamples `volume` through `t` onto `out_grid` (output voxel `x` takes the
/// intensity at `t(x)`), and moves the ground truth with it: a lesion at `c`
/// ends up at `t^-1(c)`. Points outside the source take its minimum intensity.
pub fn transform_phantom(
    volume: &Volume,
    truth: &AnnotationTable,
    t: &RigidTransform,
    out_grid: &Volume,
) -> Result<(Volume, AnnotationTable)> {
    let (fill, _) = volume.intensity_range();
    let out = resample_with_fill(volume, t, out_grid, fill);
    let inverse = t.inverse().mapper();
    let mut table = AnnotationTable::new();
    for (patient, a) in truth.iter() {
        table.insert(
            patient,
            LesionAnnotation {
                centroid: inverse.apply(a.centroid),
                ..a.clone()
            },
        )?;
    }
    Ok((out, table))
}

/// Draws a rigid transform with angles uniform in `±max_angle_deg` and
/// translations uniform in `±max_translation_mm`, rotating about `center`.
pub fn random_rigid(rng: &mut impl Rng, max_angle_deg: f64, max_translation_mm: f64, center: Point3) -> RigidTransform {
    let a = max_angle_deg.to_radians();
    RigidTransform::new(
        [
            rng.random_range(-a..=a),
            rng.random_range(-a..=a),
            rng.random_range(-a..=a),
        ],
        [
            rng.random_range(-max_translation_mm..=max_translation_mm),
            rng.random_range(-max_translation_mm..=max_translation_mm),
            rng.random_range(-max_translation_mm..=max_translation_mm),
        ],
        center,
    )
}

/// A uniform random offset inside a ball of the given radius.
pub fn ball_jitter(rng: &mut impl Rng, radius: f64) -> Point3 {
    loop {
        let p = Point3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        if p.norm() <= 1.0 {
            return p * radius;
        }
    }
}

/// Parameters of the two-visit synthetic study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudySpec {
    pub patient_id: String,
    pub seed: u64,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Readers place each centroid uniformly within this radius of the truth.
    pub reader_jitter_mm: f64,
    pub noise_sigma: f64,
    /// Pose ranges of the series scanners relative to the world frame.
    pub max_angle_deg: f64,
    pub max_translation_mm: f64,
}

impl Default for StudySpec {
    fn default() -> Self {
        StudySpec {
            patient_id: "P1".into(),
            seed: 0,
            dims: [48, 48, 48],
            spacing: [3.5; 3],
            reader_jitter_mm: 5.0,
            noise_sigma: 10.0,
            max_angle_deg: 8.0,
            max_translation_mm: 12.0,
        }
    }
}

impl StudySpec {
    pub fn with_seed(seed: u64) -> Self {
        StudySpec {
            seed,
            ..Default::default()
        }
    }
}

pub const STUDY_TIMEPOINTS: [&str; 2] = ["Screening", "Week 8"];
pub const STUDY_SERIES: [&str; 2] = ["S1", "S2"];
pub const STUDY_READERS: [&str; 2] = ["R1", "R2"];

/// World-frame lesions: (center, class, first timepoint index).
const STUDY_LESIONS: [([f64; 3], LesionClass, usize); 5] = [
    ([25.0, 10.0, 5.0], LesionClass::Target, 0),
    ([-30.0, -15.0, 10.0], LesionClass::Target, 0),
    ([5.0, 25.0, -12.0], LesionClass::Target, 0),
    ([-10.0, -5.0, -15.0], LesionClass::NonTarget, 0),
    ([28.0, -15.0, -6.0], LesionClass::Target, 1),
];

/// A synthetic patient followed over two visits, two series per visit and
/// two readers per series, with four lesions present throughout and one that
/// appears at the second visit.
#[derive(Debug, Clone)]
pub struct LongitudinalStudy {
    pub dataset: PatientDataset,
    /// The true grouping of annotations, in the world frame, in tracks format.
    pub truth: TrackRegistry,
    /// Scanner-to-world pose of each (timepoint, series).
    pub poses: BTreeMap<(String, String), RigidTransform>,
}

impl LongitudinalStudy {
    pub fn generate(spec: &StudySpec) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let centers: Vec<Point3> = STUDY_LESIONS
            .iter()
            .map(|(c, _, _)| Point3::from(*c) + ball_jitter(&mut rng, 2.0))
            .collect();

        let mut poses = BTreeMap::new();
        let mut timepoints = Vec::new();
        let mut clusters: Vec<Vec<Observation>> = vec![Vec::new(); STUDY_LESIONS.len()];
        let mut volume_seed = spec.seed.wrapping_mul(1000);
        for (t, tp) in STUDY_TIMEPOINTS.iter().enumerate() {
            let present: Vec<usize> = (0..STUDY_LESIONS.len()).filter(|&n| STUDY_LESIONS[n].2 <= t).collect();
            let mut tp_data = TimepointData::new(*tp);
            for series in STUDY_SERIES {
                let pose = if t == 0 && series == STUDY_SERIES[0] {
                    RigidTransform::IDENTITY
                } else {
                    random_rigid(&mut rng, spec.max_angle_deg, spec.max_translation_mm, Point3::ORIGIN)
                };
                volume_seed += 1;
                let phantom = PhantomSpec {
                    dims: spec.dims,
                    spacing: spec.spacing,
                    origin: None,
                    body: BodySpec {
                        center: Point3::ORIGIN,
                        semi_axes_mm: [60.0, 45.0, 35.0],
                        intensity: 0.0,
                    },
                    background: -1000.0,
                    lesions: present
                        .iter()
                        .map(|&n| LesionSpec {
                            center: centers[n],
                            radius_mm: 6.0,
                            intensity: 100.0,
                            class: STUDY_LESIONS[n].1,
                            label: None,
                        })
                        .collect(),
                    noise_sigma: spec.noise_sigma,
                    rng_seed: volume_seed,
                    patient_id: spec.patient_id.clone(),
                    timepoint_id: tp.to_string(),
                    series_id: series.to_string(),
                    reader_id: STUDY_READERS[0].to_string(),
                };
                let (volume, _) = generate_phantom_posed(&phantom, &pose)?;
                let to_scanner = pose.inverse().mapper();

                let mut data = SeriesData::new(series);
                data.volume = Some(volume);
                for (r, reader) in STUDY_READERS.iter().enumerate() {
                    // the second reader numbers its targets in reverse, so
                    // labels disagree between readers as they do in practice
                    let mut order: Vec<usize> = present.clone();
                    if r == 1 {
                        order.reverse();
                    }
                    let mut counts = [0usize; 2];
                    let mut labels = BTreeMap::new();
                    for &n in &order {
                        let class = STUDY_LESIONS[n].1;
                        let slot = usize::from(class == LesionClass::NonTarget);
                        counts[slot] += 1;
                        let prefix = if slot == 0 { "T" } else { "NT" };
                        labels.insert(n, format!("{prefix}{}", counts[slot]));
                    }
                    for &n in &present {
                        let centroid = to_scanner.apply(centers[n]) + ball_jitter(&mut rng, spec.reader_jitter_mm);
                        let a = LesionAnnotation::new(
                            centroid,
                            STUDY_LESIONS[n].1,
                            *reader,
                            series,
                            *tp,
                            labels[&n].clone(),
                        )?;
                        clusters[n].push(Observation {
                            annotation: a.clone(),
                            mapped_centroid: centers[n],
                        });
                        data.annotations.push(a);
                    }
                }
                tp_data.series.push(data);
                poses.insert((tp.to_string(), series.to_string()), pose);
            }
            timepoints.push(tp_data);
        }

        let mut truth = TrackRegistry::new(spec.patient_id.clone());
        for (n, observations) in clusters.into_iter().enumerate() {
            truth.open_track(Cluster {
                class: STUDY_LESIONS[n].1,
                observations,
            });
        }
        Ok(LongitudinalStudy {
            dataset: PatientDataset::new(spec.patient_id.clone(), timepoints)?,
            truth,
            poses,
        })
    }

    /// Writes `annotations.csv`, `truth.json` and `volumes/<patient>/<timepoint>/<series>.hdr`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        crate::io::save_annotations(&self.dataset.to_table()?, dir.join("annotations.csv"))?;
        let truth = dir.join("truth.json");
        std::fs::write(&truth, self.truth.to_json()?).map_err(|e| Error::io(&truth, e))?;
        self.dataset.save_volumes(&dir.join("volumes"), Dtype::I16)
    }
}
