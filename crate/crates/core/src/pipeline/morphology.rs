use std::collections::VecDeque;

use super::{crop_or_pad, BinaryMask, Geometry, LabelMap, Volume};
use crate::error::{Error, Result};

const NEIGHBORS6: [[i64; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

/// Offsets of the voxel-metric ball `dz² + dy² + dx² ≤ r²`.
fn ball_offsets(r: usize) -> Vec<[i64; 3]> {
    let r = r as i64;
    let mut out = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                if dz * dz + dy * dy + dx * dx <= r * r {
                    out.push([dz, dy, dx]);
                }
            }
        }
    }
    out
}

#[inline]
fn shifted(g: &Geometry, idx: [usize; 3], off: [i64; 3]) -> Option<usize> {
    let mut p = [0usize; 3];
    for a in 0..3 {
        let c = idx[a] as i64 + off[a];
        if c < 0 || c >= g.dims[a] as i64 {
            return None;
        }
        p[a] = c as usize;
    }
    Some(g.index(p[0], p[1], p[2]))
}

/// Dilation by a ball of radius `r`, clipped to the grid.
pub fn dilate_ball(m: &BinaryMask, r: usize) -> BinaryMask {
    if r == 0 {
        return m.map(|v| (v != 0) as u8);
    }
    let offs = ball_offsets(r);
    let mut out = m.map(|_| 0u8);
    for (idx, v) in m.indexed() {
        if v != 0 {
            for &o in &offs {
                if let Some(i) = shifted(&m.geom, idx, o) {
                    out.data[i] = 1;
                }
            }
        }
    }
    out
}

/// Erosion by a ball of radius `r`; voxels beyond the grid count as 0.
pub fn erode_ball(m: &BinaryMask, r: usize) -> BinaryMask {
    if r == 0 {
        return m.map(|v| (v != 0) as u8);
    }
    let offs = ball_offsets(r);
    let mut out = m.map(|_| 0u8);
    for (idx, v) in m.indexed() {
        if v != 0 {
            let keep = offs
                .iter()
                .all(|&o| shifted(&m.geom, idx, o).is_some_and(|i| m.data[i] != 0));
            out.data[m.geom.index(idx[0], idx[1], idx[2])] = keep as u8;
        }
    }
    out
}

/// Closing (dilate then erode) computed on a grid padded by `r`, so the
/// volume border does not erode the result.
pub fn close_ball(m: &BinaryMask, r: usize) -> BinaryMask {
    if r == 0 {
        return m.map(|v| (v != 0) as u8);
    }
    let pad = r as i64;
    let [d, h, w] = m.geom.dims;
    let big = [d + 2 * r, h + 2 * r, w + 2 * r];
    // Window starts at -pad on every axis.
    let c: [i64; 3] = std::array::from_fn(|a| (big[a] / 2) as i64 - pad);
    let padded = crop_or_pad(m, big, c, 0u8).expect("padding a valid mask");
    let closed = erode_ball(&dilate_ball(&padded, r), r);
    let back: [i64; 3] = std::array::from_fn(|a| (m.geom.dims[a] / 2) as i64 + pad);
    let mut out = crop_or_pad(&closed, m.geom.dims, back, 0u8).expect("cropping back");
    out.geom = m.geom;
    out
}

/// Labels 6-connected components of nonzero voxels; returns per-voxel
/// component ids (0 = background) and component sizes indexed by `id - 1`.
fn components(m: &BinaryMask) -> (Vec<u32>, Vec<usize>) {
    let g = m.geom;
    let mut ids = vec![0u32; g.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for (start, v) in m.indexed() {
        let si = g.index(start[0], start[1], start[2]);
        if v == 0 || ids[si] != 0 {
            continue;
        }
        let id = sizes.len() as u32 + 1;
        ids[si] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(p) = queue.pop_front() {
            size += 1;
            for &o in &NEIGHBORS6 {
                if let Some(n) = shifted(&g, p, o) {
                    if m.data[n] != 0 && ids[n] == 0 {
                        ids[n] = id;
                        queue.push_back([
                            (p[0] as i64 + o[0]) as usize,
                            (p[1] as i64 + o[1]) as usize,
                            (p[2] as i64 + o[2]) as usize,
                        ]);
                    }
                }
            }
        }
        sizes.push(size);
    }
    (ids, sizes)
}

/// Keeps the largest 6-connected component; ties go to the component met
/// first in row-major order.
pub fn largest_component(m: &BinaryMask) -> BinaryMask {
    let (ids, sizes) = components(m);
    let Some((best, _)) =
        sizes
            .iter()
            .enumerate()
            .fold(None, |acc: Option<(usize, usize)>, (i, &s)| match acc {
                Some((_, bs)) if bs >= s => acc,
                _ => Some((i, s)),
            })
    else {
        return m.map(|_| 0);
    };
    let keep = best as u32 + 1;
    BinaryMask {
        geom: m.geom,
        data: ids.iter().map(|&i| (i == keep) as u8).collect(),
    }
}

/// Sets every background voxel not 6-connected to the grid border.
pub fn fill_holes(m: &BinaryMask) -> BinaryMask {
    let g = m.geom;
    let [d, h, w] = g.dims;
    let mut outside = vec![false; g.len()];
    let mut queue = VecDeque::new();
    for (idx, v) in m.indexed() {
        let border = idx[0] == 0
            || idx[1] == 0
            || idx[2] == 0
            || idx[0] + 1 == d
            || idx[1] + 1 == h
            || idx[2] + 1 == w;
        if border && v == 0 {
            outside[g.index(idx[0], idx[1], idx[2])] = true;
            queue.push_back(idx);
        }
    }
    while let Some(p) = queue.pop_front() {
        for &o in &NEIGHBORS6 {
            if let Some(n) = shifted(&g, p, o) {
                if m.data[n] == 0 && !outside[n] {
                    outside[n] = true;
                    queue.push_back([
                        (p[0] as i64 + o[0]) as usize,
                        (p[1] as i64 + o[1]) as usize,
                        (p[2] as i64 + o[2]) as usize,
                    ]);
                }
            }
        }
    }
    BinaryMask {
        geom: g,
        data: outside.iter().map(|&o| (!o) as u8).collect(),
    }
}

/// Threshold, largest component, closing, hole fill.
pub fn generate_global_mask_threshold(
    v: &Volume,
    threshold: f32,
    closing_radius: usize,
) -> Result<BinaryMask> {
    let raw = v.map(|x| (x > threshold) as u8);
    if raw.count_nonzero() == 0 {
        return Err(Error::EmptyMask(format!("no voxel above {threshold} HU")));
    }
    Ok(fill_holes(&close_ball(
        &largest_component(&raw),
        closing_radius,
    )))
}

/// Union of all structure labels dilated by a ball of radius `r`.
pub fn mask_from_labels(lm: &LabelMap, dilation_radius: usize) -> Result<BinaryMask> {
    let union = lm.map(|l| (l != 0) as u8);
    if union.count_nonzero() == 0 {
        return Err(Error::EmptyMask("label map has no structure voxels".into()));
    }
    Ok(dilate_ball(&union, dilation_radius))
}
