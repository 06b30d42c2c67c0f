use super::{Geometry, Image3, Volume};
use crate::error::{ensure, Result};

fn target_geometry(src: &Geometry, target: [f64; 3]) -> Result<Geometry> {
    ensure!(
        target.iter().all(|&t| t > 0.0 && t.is_finite()),
        "target spacing must be positive, got {:?}",
        target
    );
    ensure!(
        !src.is_empty(),
        "cannot resample a zero-extent volume {:?}",
        src.dims
    );
    let dims: [usize; 3] = std::array::from_fn(|a| {
        ((src.dims[a] as f64 * src.spacing[a] as f64 / target[a]).round() as usize).max(1)
    });
    Geometry::new(dims, target.map(|t| t as f32), src.origin)
}

/// Source continuous index for every output coordinate along one axis,
/// clamped to the source hull.
fn axis_samples(src: &Geometry, dst: &Geometry, axis: usize) -> Vec<f64> {
    let n = src.dims[axis] as f64;
    (0..dst.dims[axis])
        .map(|j| {
            let p = dst.origin[axis] as f64 + (j as f64 + 0.5) * dst.spacing[axis] as f64;
            let u = (p - src.origin[axis] as f64) / src.spacing[axis] as f64 - 0.5;
            u.clamp(0.0, n - 1.0)
        })
        .collect()
}

/// Trilinear resampling onto `target` spacing (mm). Output dims are
/// `round(dims · spacing / target)` with the same origin corner; samples
/// beyond the outermost voxel centers take the nearest edge value.
pub fn resample_trilinear(v: &Volume, target: [f64; 3]) -> Result<Volume> {
    let geom = target_geometry(&v.geom, target)?;
    if geom == v.geom {
        return Ok(v.clone());
    }
    let axes: [Vec<(usize, usize, f64)>; 3] = std::array::from_fn(|a| {
        let n = v.geom.dims[a];
        axis_samples(&v.geom, &geom, a)
            .into_iter()
            .map(|u| {
                let i0 = (u.floor() as usize).min(n - 1);
                let i1 = (i0 + 1).min(n - 1);
                (i0, i1, u - i0 as f64)
            })
            .collect()
    });
    let mut data = Vec::with_capacity(geom.len());
    for &(z0, z1, fz) in &axes[0] {
        for &(y0, y1, fy) in &axes[1] {
            for &(x0, x1, fx) in &axes[2] {
                let at = |z, y, x| v.get(z, y, x) as f64;
                let c00 = at(z0, y0, x0) * (1.0 - fx) + at(z0, y0, x1) * fx;
                let c01 = at(z0, y1, x0) * (1.0 - fx) + at(z0, y1, x1) * fx;
                let c10 = at(z1, y0, x0) * (1.0 - fx) + at(z1, y0, x1) * fx;
                let c11 = at(z1, y1, x0) * (1.0 - fx) + at(z1, y1, x1) * fx;
                let c0 = c00 * (1.0 - fy) + c01 * fy;
                let c1 = c10 * (1.0 - fy) + c11 * fy;
                data.push((c0 * (1.0 - fz) + c1 * fz) as f32);
            }
        }
    }
    Image3::new(geom, data)
}

/// Nearest-center resampling for labels and masks; no new values appear.
pub fn resample_nearest<T: Copy>(m: &Image3<T>, target: [f64; 3]) -> Result<Image3<T>> {
    let geom = target_geometry(&m.geom, target)?;
    if geom == m.geom {
        return Ok(m.clone());
    }
    let axes: [Vec<usize>; 3] = std::array::from_fn(|a| {
        axis_samples(&m.geom, &geom, a)
            .into_iter()
            .map(|u| u.round() as usize)
            .collect()
    });
    let mut data = Vec::with_capacity(geom.len());
    for &z in &axes[0] {
        for &y in &axes[1] {
            for &x in &axes[2] {
                data.push(m.get(z, y, x));
            }
        }
    }
    Image3::new(geom, data)
}
