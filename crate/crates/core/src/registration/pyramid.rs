//! Gaussian smoothing and integer shrinking for the multi-resolution schedule.

use crate::model::Volume;

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with `sigma` in voxels; edges are clamped.
/// `sigma <= 0` returns a copy.
pub fn gaussian_smooth(v: &Volume, sigma: f64) -> Volume {
    if sigma <= 0.0 {
        return v.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let dims = v.dims();
    let strides = [1, dims[0], dims[0] * dims[1]];
    let mut data = v.voxels().to_vec();
    let mut scratch = vec![0.0; data.len()];
    for axis in 0..3 {
        let n = dims[axis] as isize;
        if n == 1 {
            continue;
        }
        let stride = strides[axis];
        for (idx, out) in scratch.iter_mut().enumerate() {
            let pos = ((idx / stride) % dims[axis]) as isize;
            let line_start = idx - pos as usize * stride;
            let mut acc = 0.0;
            for (t, w) in kernel.iter().enumerate() {
                let q = (pos + t as isize - radius).clamp(0, n - 1) as usize;
                acc += w * data[line_start + q * stride];
            }
            *out = acc;
        }
        std::mem::swap(&mut data, &mut scratch);
    }
    v.with_voxels(data).expect("smoothing keeps geometry")
}

/// Downsamples by an integer factor per axis, keeping the physical extent
/// centred: output voxel `i` sits at input index `factor * i + (factor - 1) / 2`.
pub fn shrink(v: &Volume, factor: usize) -> Volume {
    if factor <= 1 {
        return v.clone();
    }
    let f = factor as f64;
    let dims = v.dims().map(|n| (n / factor).max(1));
    let spacing = v.spacing().map(|s| s * f);
    let offset = (f - 1.0) / 2.0;
    let origin = v.voxel_to_physical([offset, offset, offset]);
    let src_dims = v.dims();
    Volume::from_fn(dims, spacing, origin, |i, j, k| {
        let idx = [i, j, k].map(|x| x as f64 * f + offset);
        let clamped = [0, 1, 2].map(|a| idx[a].min((src_dims[a] - 1) as f64));
        v.interpolate_index(clamped)
            .expect("shrunk grid lies inside the source")
    })
    .expect("shrink produces a valid grid")
}
