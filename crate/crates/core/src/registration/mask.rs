use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::model::{Point3, Volume};

/// Boolean voxel mask sharing the geometry of the volume it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: Point3,
    voxels: Vec<bool>,
}

impl BinaryMask {
    pub fn from_volume(v: &Volume, mut pred: impl FnMut(f64) -> bool) -> Self {
        BinaryMask {
            dims: v.dims(),
            spacing: v.spacing(),
            origin: v.origin(),
            voxels: v.voxels().iter().map(|&x| pred(x)).collect(),
        }
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

    pub fn voxels(&self) -> &[bool] {
        &self.voxels
    }

    pub fn count(&self) -> usize {
        self.voxels.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.voxels.iter().any(|&b| b)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.voxels[i + self.dims[0] * (j + self.dims[1] * k)]
    }

    fn index_to_physical(&self, n: usize) -> Point3 {
        let [nx, ny, _] = self.dims;
        let (i, j, k) = (n % nx, (n / nx) % ny, n / (nx * ny));
        Point3::new(
            self.origin.x + i as f64 * self.spacing[0],
            self.origin.y + j as f64 * self.spacing[1],
            self.origin.z + k as f64 * self.spacing[2],
        )
    }

    /// Physical positions of all set voxels.
    pub fn points(&self) -> impl Iterator<Item = Point3> + '_ {
        self.voxels
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(n, _)| self.index_to_physical(n))
    }

    pub fn centroid(&self) -> Option<Point3> {
        Point3::mean(self.points())
    }

    /// Labels 6-connected components; returns per-voxel labels (0 = background)
    /// and the size of each component, indexed by `label - 1`.
    pub fn label_components(&self) -> (Vec<u32>, Vec<usize>) {
        let [nx, ny, nz] = self.dims;
        let mut labels = vec![0u32; self.voxels.len()];
        let mut sizes = Vec::new();
        let mut queue = VecDeque::new();
        for seed in 0..self.voxels.len() {
            if !self.voxels[seed] || labels[seed] != 0 {
                continue;
            }
            let label = sizes.len() as u32 + 1;
            labels[seed] = label;
            queue.push_back(seed);
            let mut size = 0usize;
            while let Some(n) = queue.pop_front() {
                size += 1;
                let (i, j, k) = (n % nx, (n / nx) % ny, n / (nx * ny));
                let mut visit = |m: usize| {
                    if self.voxels[m] && labels[m] == 0 {
                        labels[m] = label;
                        queue.push_back(m);
                    }
                };
                if i > 0 {
                    visit(n - 1);
                }
                if i + 1 < nx {
                    visit(n + 1);
                }
                if j > 0 {
                    visit(n - nx);
                }
                if j + 1 < ny {
                    visit(n + nx);
                }
                if k > 0 {
                    visit(n - nx * ny);
                }
                if k + 1 < nz {
                    visit(n + nx * ny);
                }
            }
            sizes.push(size);
        }
        (labels, sizes)
    }

    /// Keeps only the largest 6-connected component (lowest label on ties).
    pub fn largest_component(&self) -> BinaryMask {
        let (labels, sizes) = self.label_components();
        let keep = sizes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(n, _)| n as u32 + 1);
        BinaryMask {
            voxels: labels.iter().map(|&l| Some(l) == keep).collect(),
            ..self.clone()
        }
    }

    /// Dice overlap of two masks on the same grid.
    pub fn dice(&self, other: &BinaryMask) -> f64 {
        assert_eq!(self.dims, other.dims, "dice needs masks on the same grid");
        let inter = self
            .voxels
            .iter()
            .zip(&other.voxels)
            .filter(|(a, b)| **a && **b)
            .count();
        let total = self.count() + other.count();
        if total == 0 {
            1.0
        } else {
            2.0 * inter as f64 / total as f64
        }
    }

    /// The mask as a 0/1 volume.
    pub fn to_volume(&self) -> Volume {
        Volume::new(
            self.dims,
            self.spacing,
            self.origin,
            self.voxels.iter().map(|&b| f64::from(u8::from(b))).collect(),
        )
        .expect("mask geometry is valid")
    }
}

/// Thresholds at `body_threshold` (inclusive) and keeps the largest
/// 6-connected component.
pub fn preprocess_mask(v: &Volume, body_threshold: f64) -> Result<BinaryMask> {
    let raw = BinaryMask::from_volume(v, |x| x >= body_threshold);
    if raw.is_empty() {
        return Err(Error::EmptyMask {
            threshold: body_threshold,
        });
    }
    Ok(raw.largest_component())
}
