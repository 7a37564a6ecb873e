use super::transform::RigidTransform;
use crate::model::Volume;

/// Resamples `moving` onto `reference`'s grid: each output voxel takes the
/// trilinear moving intensity at `t(x)`; points outside the moving volume get 0.
pub fn resample(moving: &Volume, t: &RigidTransform, reference: &Volume) -> Volume {
    resample_with_fill(moving, t, reference, 0.0)
}

pub fn resample_with_fill(moving: &Volume, t: &RigidTransform, reference: &Volume, fill: f64) -> Volume {
    let mapper = t.mapper();
    Volume::from_fn(reference.dims(), reference.spacing(), reference.origin(), |i, j, k| {
        let p = reference.voxel_to_physical([i as f64, j as f64, k as f64]);
        moving.interpolate(mapper.apply(p)).unwrap_or(fill)
    })
    .expect("reference grid is valid")
}
