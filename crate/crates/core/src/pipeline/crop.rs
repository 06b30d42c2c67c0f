use super::{BinaryMask, Geometry, Image3};
use crate::error::{ensure, Result};

/// Window of exactly `size` voxels starting at `center - size / 2`; voxels
/// outside the source take `fill`. The origin moves with the window so every
/// kept voxel keeps its physical position.
pub fn crop_or_pad<T: Copy>(
    v: &Image3<T>,
    size: [usize; 3],
    center: [i64; 3],
    fill: T,
) -> Result<Image3<T>> {
    ensure!(
        size.iter().all(|&s| s > 0),
        "crop size must be positive, got {:?}",
        size
    );
    let start: [i64; 3] = std::array::from_fn(|a| center[a] - (size[a] / 2) as i64);
    let origin: [f32; 3] = std::array::from_fn(|a| {
        (v.geom.origin[a] as f64 + start[a] as f64 * v.geom.spacing[a] as f64) as f32
    });
    let geom = Geometry::new(size, v.geom.spacing, origin)?;
    if geom == v.geom {
        return Ok(v.clone());
    }
    let dims = v.geom.dims.map(|d| d as i64);
    // Source x-range overlapping the window, shared by every row.
    let x_lo = start[2].clamp(0, dims[2]);
    let x_hi = (start[2] + size[2] as i64).clamp(0, dims[2]);
    let mut data = vec![fill; geom.len()];
    for z in 0..size[0] {
        let sz = start[0] + z as i64;
        if !(0..dims[0]).contains(&sz) {
            continue;
        }
        for y in 0..size[1] {
            let sy = start[1] + y as i64;
            if !(0..dims[1]).contains(&sy) || x_lo >= x_hi {
                continue;
            }
            let src = v.geom.index(sz as usize, sy as usize, x_lo as usize);
            let dst = geom.index(z, y, (x_lo - start[2]) as usize);
            let n = (x_hi - x_lo) as usize;
            data[dst..dst + n].copy_from_slice(&v.data[src..src + n]);
        }
    }
    Ok(Image3 { geom, data })
}

/// Center-of-mass voxel of a mask, rounded half up with exact integer
/// arithmetic; `None` for an empty mask.
pub fn mask_center_voxel(m: &BinaryMask) -> Option<[i64; 3]> {
    let mut sums = [0i64; 3];
    let mut count = 0i64;
    for (idx, v) in m.indexed() {
        if v != 0 {
            for a in 0..3 {
                sums[a] += idx[a] as i64;
            }
            count += 1;
        }
    }
    (count > 0).then(|| sums.map(|s| (2 * s + count).div_euclid(2 * count)))
}
