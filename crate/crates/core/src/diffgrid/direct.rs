//! Register-blocked direct kernels for 3×3×3 same-padded convolution.
//!
//! Inputs are copied into a zero-padded buffer whose rows are widened to a
//! multiple of [`LANES`], so the inner loops run over fixed-size blocks
//! without bounds checks. On x86-64 with AVX2+FMA the blocks run through
//! explicit vector intrinsics; elsewhere a scalar loop computes the same
//! sums. Results are deterministic for a given machine.

const LANES: usize = 8;
const CO_BLOCK: usize = 8;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Dims {
    pub cin: usize,
    pub cout: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    fn w8(&self) -> usize {
        self.w.div_ceil(LANES) * LANES
    }

    /// Padded row stride: one zero column on the left, at least one on the right.
    fn wp(&self) -> usize {
        self.w8() + 2
    }

    fn co_pad(&self) -> usize {
        self.cout.div_ceil(CO_BLOCK) * CO_BLOCK
    }
}

/// Zero-padded copy laid out `c × (d+2) × (h+2) × wp`, interior at offset (1, 1, 1).
fn pad_input(src: &[f32], c: usize, dims: &Dims) -> Vec<f32> {
    let (d, h, w, wp) = (dims.d, dims.h, dims.w, dims.wp());
    let (hp, dp) = (h + 2, d + 2);
    let mut out = vec![0.0f32; c * dp * hp * wp];
    for ch in 0..c {
        for z in 0..d {
            for y in 0..h {
                let s = ((ch * d + z) * h + y) * w;
                let o = ((ch * dp + z + 1) * hp + y + 1) * wp + 1;
                out[o..o + w].copy_from_slice(&src[s..s + w]);
            }
        }
    }
    out
}

/// Rows widened to `w8` with zero tail: `c_pad × d × h × w8`.
fn widen_rows(src: &[f32], c: usize, c_pad: usize, dims: &Dims) -> Vec<f32> {
    let (w, w8) = (dims.w, dims.w8());
    let rows = c * dims.d * dims.h;
    let mut out = vec![0.0f32; c_pad * dims.d * dims.h * w8];
    for r in 0..rows {
        out[r * w8..r * w8 + w].copy_from_slice(&src[r * w..(r + 1) * w]);
    }
    out
}

/// One block of output: eight output channels × eight x positions.
/// `src(t)` is the padded input offset of tap `t`, `wt(t)` the weight offset.
type Block = [[f32; LANES]; CO_BLOCK];

#[allow(clippy::too_many_arguments)]
fn forward_block_scalar(
    padded: &[f32],
    wt: &[f32],
    rows: &[usize],
    co_pad: usize,
    cb: usize,
    x0: usize,
    acc: &mut Block,
) {
    for (t, &row) in rows.iter().enumerate() {
        let src = &padded[row + x0..row + x0 + LANES];
        let wv = &wt[t * co_pad + cb * CO_BLOCK..t * co_pad + cb * CO_BLOCK + CO_BLOCK];
        for c in 0..CO_BLOCK {
            for l in 0..LANES {
                acc[c][l] += wv[c] * src[l];
            }
        }
    }
}

/// Walk of one z plane for the weight gradient: `rows` rows of `xblocks`
/// blocks, starting at `src0` in the padded input and `g0` in the widened
/// upstream gradient.
#[derive(Clone, Copy)]
struct PlaneWalk {
    src0: usize,
    src_stride: usize,
    g0: usize,
    g_stride: usize,
    rows: usize,
    xblocks: usize,
    plane: usize,
}

fn weight_grad_scalar(padded: &[f32], gw: &[f32], walk: PlaneWalk, acc: &mut Block) {
    for y in 0..walk.rows {
        for xb in 0..walk.xblocks {
            let row = walk.src0 + y * walk.src_stride + xb * LANES;
            let grow = walk.g0 + y * walk.g_stride + xb * LANES;
            let src = &padded[row..row + LANES];
            for (c, a) in acc.iter_mut().enumerate() {
                let g = &gw[grow + c * walk.plane..grow + c * walk.plane + LANES];
                for l in 0..LANES {
                    a[l] += g[l] * src[l];
                }
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod avx {
    use std::arch::x86_64::*;

    use super::{Block, PlaneWalk, CO_BLOCK, LANES};

    pub(super) fn available() -> bool {
        std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
    }

    /// # Safety
    /// AVX2 and FMA must be available; every offset in `rows` plus `x0 + LANES`
    /// must lie within `padded`, and `wt` must hold `rows.len() · co_pad` values.
    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn forward_block(
        padded: &[f32],
        wt: &[f32],
        rows: &[usize],
        co_pad: usize,
        cb: usize,
        x0: usize,
        out: &mut Block,
    ) {
        let mut acc = [_mm256_setzero_ps(); CO_BLOCK];
        let pp = padded.as_ptr();
        let wp = wt.as_ptr().add(cb * CO_BLOCK);
        for (t, &row) in rows.iter().enumerate() {
            let src = _mm256_loadu_ps(pp.add(row + x0));
            let w = wp.add(t * co_pad);
            for (c, a) in acc.iter_mut().enumerate() {
                *a = _mm256_fmadd_ps(_mm256_broadcast_ss(&*w.add(c)), src, *a);
            }
        }
        for (c, a) in acc.iter().enumerate() {
            _mm256_storeu_ps(out[c].as_mut_ptr(), *a);
        }
        let _ = LANES;
    }

    /// # Safety
    /// AVX2 and FMA must be available; every block visited by `walk` must lie
    /// inside `padded`, and `CO_BLOCK` gradient planes must follow in `gw`.
    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn weight_grad(padded: &[f32], gw: &[f32], walk: PlaneWalk, out: &mut Block) {
        let mut acc = [_mm256_setzero_ps(); CO_BLOCK];
        for (c, a) in acc.iter_mut().enumerate() {
            *a = _mm256_loadu_ps(out[c].as_ptr());
        }
        let pp = padded.as_ptr();
        let gp = gw.as_ptr();
        for y in 0..walk.rows {
            let srow = pp.add(walk.src0 + y * walk.src_stride);
            let grow = gp.add(walk.g0 + y * walk.g_stride);
            for xb in 0..walk.xblocks {
                let src = _mm256_loadu_ps(srow.add(xb * LANES));
                let g = grow.add(xb * LANES);
                for (c, a) in acc.iter_mut().enumerate() {
                    *a = _mm256_fmadd_ps(_mm256_loadu_ps(g.add(c * walk.plane)), src, *a);
                }
            }
        }
        for (c, a) in acc.iter().enumerate() {
            _mm256_storeu_ps(out[c].as_mut_ptr(), *a);
        }
    }
}

fn use_avx() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        avx::available()
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

/// `out[co] = Σ_ci Σ_tap w[co, ci, tap] · in[ci, shifted]` for one sample.
/// `weight` is `cout × cin × 27`; `out` is `cout × d × h × w` and overwritten.
pub(crate) fn conv3x3_forward(dims: &Dims, input: &[f32], weight: &[f32], out: &mut [f32]) {
    let Dims { cin, cout, d, h, w } = *dims;
    let (wp, hp, dp) = (dims.wp(), h + 2, d + 2);
    let padded = pad_input(input, cin, dims);
    let co_pad = dims.co_pad();
    // wt[(ci·27 + tap)·co_pad + co]
    let mut wt = vec![0.0f32; cin * 27 * co_pad];
    for co in 0..cout {
        for ci in 0..cin {
            for tap in 0..27 {
                wt[(ci * 27 + tap) * co_pad + co] = weight[(co * cin + ci) * 27 + tap];
            }
        }
    }
    let fast = use_avx();
    let mut rows = vec![0usize; cin * 27];
    let mut acc: Block = [[0.0; LANES]; CO_BLOCK];
    for z in 0..d {
        for y in 0..h {
            for ci in 0..cin {
                for kz in 0..3 {
                    for ky in 0..3 {
                        let base = ((ci * dp + z + kz) * hp + y + ky) * wp;
                        for kx in 0..3 {
                            rows[ci * 27 + (kz * 3 + ky) * 3 + kx] = base + kx;
                        }
                    }
                }
            }
            for cb in 0..co_pad / CO_BLOCK {
                for x0 in (0..dims.w8()).step_by(LANES) {
                    if fast {
                        #[cfg(target_arch = "x86_64")]
                        // SAFETY: features checked by `use_avx`; offsets stay inside the padded buffers.
                        unsafe {
                            avx::forward_block(&padded, &wt, &rows, co_pad, cb, x0, &mut acc)
                        };
                    } else {
                        acc = [[0.0; LANES]; CO_BLOCK];
                        forward_block_scalar(&padded, &wt, &rows, co_pad, cb, x0, &mut acc);
                    }
                    let n = LANES.min(w - x0);
                    for (c, a) in acc.iter().enumerate() {
                        let co = cb * CO_BLOCK + c;
                        if co < cout {
                            let o = ((co * d + z) * h + y) * w + x0;
                            out[o..o + n].copy_from_slice(&a[..n]);
                        }
                    }
                }
            }
        }
    }
}

/// `dw[co, ci, tap] += Σ_pos dout[co, pos] · in[ci, pos + tap]` for one sample.
pub(crate) fn conv3x3_weight_grad(dims: &Dims, input: &[f32], dout: &[f32], dw: &mut [f32]) {
    let Dims {
        cin, cout, d, h, ..
    } = *dims;
    let (wp, hp, dp, w8) = (dims.wp(), h + 2, d + 2, dims.w8());
    let padded = pad_input(input, cin, dims);
    let co_pad = dims.co_pad();
    let gw = widen_rows(dout, cout, co_pad, dims);
    let plane = d * h * w8;
    let fast = use_avx();
    let blocks = co_pad / CO_BLOCK;
    // per-lane partial sums, indexed [(ci·27 + tap)·blocks + cb]
    let mut partial: Vec<Block> = vec![[[0.0; LANES]; CO_BLOCK]; cin * 27 * blocks];
    // one z plane of `dout` at a time so it stays cache resident across taps
    for z in 0..d {
        for ci in 0..cin {
            for tap in 0..27 {
                let (kz, ky, kx) = (tap / 9, (tap / 3) % 3, tap % 3);
                let walk = PlaneWalk {
                    src0: ((ci * dp + z + kz) * hp + ky) * wp + kx,
                    src_stride: wp,
                    g0: z * h * w8,
                    g_stride: w8,
                    rows: h,
                    xblocks: w8 / LANES,
                    plane,
                };
                for cb in 0..blocks {
                    let gblock = &gw[cb * CO_BLOCK * plane..];
                    let acc = &mut partial[(ci * 27 + tap) * blocks + cb];
                    if fast {
                        #[cfg(target_arch = "x86_64")]
                        // SAFETY: features checked by `use_avx`; the walk covers whole padded rows.
                        unsafe {
                            avx::weight_grad(&padded, gblock, walk, acc)
                        };
                    } else {
                        weight_grad_scalar(&padded, gblock, walk, acc);
                    }
                }
            }
        }
    }
    for ci in 0..cin {
        for tap in 0..27 {
            for cb in 0..blocks {
                for (c, lanes) in partial[(ci * 27 + tap) * blocks + cb].iter().enumerate() {
                    let co = cb * CO_BLOCK + c;
                    if co < cout {
                        let s: f64 = lanes.iter().map(|&v| v as f64).sum();
                        dw[(co * cin + ci) * 27 + tap] += s as f32;
                    }
                }
            }
        }
    }
}

/// Gradient w.r.t. the input: a same-padded convolution of `dout` with the
/// spatially flipped, channel-transposed kernel. `din` is overwritten.
pub(crate) fn conv3x3_input_grad(dims: &Dims, weight: &[f32], dout: &[f32], din: &mut [f32]) {
    let Dims { cin, cout, .. } = *dims;
    let mut flipped = vec![0.0f32; cin * cout * 27];
    for co in 0..cout {
        for ci in 0..cin {
            for tap in 0..27 {
                flipped[(ci * cout + co) * 27 + 26 - tap] = weight[(co * cin + ci) * 27 + tap];
            }
        }
    }
    let t = Dims {
        cin: cout,
        cout: cin,
        ..*dims
    };
    conv3x3_forward(&t, dout, &flipped, din);
}
