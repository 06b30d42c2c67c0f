//! Raw forward/backward kernels over row-major slices. The tape wraps these.

use super::direct;

/// Upper bound on im2col buffer size in elements (16 MiB of f32).
const COL_BUDGET: usize = 1 << 18;

/// `c = a·b + beta·c` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    debug_assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    debug_assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the debug assertions above spell out the bounds every caller
    // upholds; all three buffers are live for the duration of the call.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvShape {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
    /// Cubic kernel side (odd); padding is `k / 2` on every side.
    pub k: usize,
}

impl ConvShape {
    fn direct(&self) -> direct::Dims {
        direct::Dims {
            cin: self.cin,
            cout: self.cout,
            d: self.d,
            h: self.h,
            w: self.w,
        }
    }

    fn vox(&self) -> usize {
        self.d * self.h * self.w
    }

    fn taps(&self) -> usize {
        self.k * self.k * self.k
    }

    fn rows(&self) -> usize {
        self.cin * self.taps()
    }

    /// Number of z planes per im2col chunk.
    fn planes_per_chunk(&self) -> usize {
        let per_plane = self.rows() * self.h * self.w;
        (COL_BUDGET / per_plane.max(1)).clamp(1, self.d)
    }

    fn chunks(&self) -> impl Iterator<Item = (usize, usize)> {
        let step = self.planes_per_chunk();
        let d = self.d;
        (0..d).step_by(step).map(move |z0| (z0, step.min(d - z0)))
    }
}

/// Valid output x-range `[lo, hi)` for kernel offset `kx` under zero padding.
#[inline]
fn x_range(w: usize, kx: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kx).min(w);
    let hi = (w + pad).saturating_sub(kx).min(w);
    (lo, hi.max(lo))
}

fn im2col(s: &ConvShape, sample: &[f32], z0: usize, planes: usize, col: &mut [f32]) {
    let (h, w, k) = (s.h, s.w, s.k);
    let pad = k / 2;
    let p = planes * h * w;
    let plane = h * w;
    for ci in 0..s.cin {
        let src = &sample[ci * s.vox()..(ci + 1) * s.vox()];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ci * s.taps() + (kz * k + ky) * k + kx;
                    let dst = &mut col[row * p..(row + 1) * p];
                    let (xlo, xhi) = x_range(w, kx, pad);
                    for zz in 0..planes {
                        let iz = (z0 + zz + kz) as isize - pad as isize;
                        for y in 0..h {
                            let drow = &mut dst[(zz * h + y) * w..(zz * h + y + 1) * w];
                            let iy = (y + ky) as isize - pad as isize;
                            if iz < 0 || iz >= s.d as isize || iy < 0 || iy >= h as isize {
                                drow.fill(0.0);
                                continue;
                            }
                            drow[..xlo].fill(0.0);
                            drow[xhi..].fill(0.0);
                            if xhi > xlo {
                                let base = iz as usize * plane + iy as usize * w;
                                let sx = xlo + kx - pad;
                                drow[xlo..xhi]
                                    .copy_from_slice(&src[base + sx..base + sx + xhi - xlo]);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add(s: &ConvShape, col: &[f32], z0: usize, planes: usize, sample: &mut [f32]) {
    let (h, w, k) = (s.h, s.w, s.k);
    let pad = k / 2;
    let p = planes * h * w;
    let plane = h * w;
    let vox = s.vox();
    for ci in 0..s.cin {
        let dst = &mut sample[ci * vox..(ci + 1) * vox];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ci * s.taps() + (kz * k + ky) * k + kx;
                    let src = &col[row * p..(row + 1) * p];
                    let (xlo, xhi) = x_range(w, kx, pad);
                    if xhi <= xlo {
                        continue;
                    }
                    for zz in 0..planes {
                        let iz = (z0 + zz + kz) as isize - pad as isize;
                        if iz < 0 || iz >= s.d as isize {
                            continue;
                        }
                        for y in 0..h {
                            let iy = (y + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let srow = &src[(zz * h + y) * w + xlo..(zz * h + y) * w + xhi];
                            let base = iz as usize * plane + iy as usize * w + xlo + kx - pad;
                            for (d, v) in dst[base..base + (xhi - xlo)].iter_mut().zip(srow) {
                                *d += *v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Same-padded stride-1 convolution. `weight` is `cout×cin×k×k×k`.
pub(crate) fn conv3d_forward(
    s: &ConvShape,
    input: &[f32],
    weight: &[f32],
    bias: &[f32],
) -> Vec<f32> {
    let vox = s.vox();
    let kk = s.rows();
    let mut out = vec![0.0f32; s.n * s.cout * vox];
    let mut col = Vec::new();
    for b in 0..s.n {
        let sample = &input[b * s.cin * vox..(b + 1) * s.cin * vox];
        let out_b = &mut out[b * s.cout * vox..(b + 1) * s.cout * vox];
        if s.k == 3 {
            direct::conv3x3_forward(&s.direct(), sample, weight, out_b);
        } else {
            for (z0, planes) in s.chunks() {
                let p = planes * s.h * s.w;
                let off = z0 * s.h * s.w;
                if s.k == 1 {
                    // the input slab already is the column matrix
                    sgemm(
                        s.cout,
                        kk,
                        p,
                        weight,
                        (kk, 1),
                        &sample[off..],
                        (vox, 1),
                        0.0,
                        &mut out_b[off..],
                        (vox, 1),
                    );
                } else {
                    col.resize(kk * p, 0.0);
                    im2col(s, sample, z0, planes, &mut col);
                    sgemm(
                        s.cout,
                        kk,
                        p,
                        weight,
                        (kk, 1),
                        &col,
                        (p, 1),
                        0.0,
                        &mut out_b[off..],
                        (vox, 1),
                    );
                }
            }
        }
        for (co, &bv) in bias.iter().enumerate() {
            if bv != 0.0 {
                out_b[co * vox..(co + 1) * vox]
                    .iter_mut()
                    .for_each(|v| *v += bv);
            }
        }
    }
    out
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f32>>,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

pub(crate) fn conv3d_backward(
    s: &ConvShape,
    input: &[f32],
    weight: &[f32],
    dout: &[f32],
    need_input: bool,
) -> ConvGrads {
    let vox = s.vox();
    let kk = s.rows();
    let mut dw = vec![0.0f32; s.cout * kk];
    let mut db = vec![0.0f32; s.cout];
    let mut din = need_input.then(|| vec![0.0f32; s.n * s.cin * vox]);
    let mut col = Vec::new();
    let mut dcol = Vec::new();
    for b in 0..s.n {
        let sample = &input[b * s.cin * vox..(b + 1) * s.cin * vox];
        let dout_b = &dout[b * s.cout * vox..(b + 1) * s.cout * vox];
        for (co, acc) in db.iter_mut().enumerate() {
            let sum: f64 = dout_b[co * vox..(co + 1) * vox]
                .iter()
                .map(|&v| v as f64)
                .sum();
            *acc += sum as f32;
        }
        if s.k == 3 {
            direct::conv3x3_weight_grad(&s.direct(), sample, dout_b, &mut dw);
            if let Some(din) = din.as_mut() {
                let din_b = &mut din[b * s.cin * vox..(b + 1) * s.cin * vox];
                direct::conv3x3_input_grad(&s.direct(), weight, dout_b, din_b);
            }
            continue;
        }
        for (z0, planes) in s.chunks() {
            let p = planes * s.h * s.w;
            let off = z0 * s.h * s.w;
            if s.k == 1 {
                sgemm(
                    s.cout,
                    p,
                    kk,
                    &dout_b[off..],
                    (vox, 1),
                    &sample[off..],
                    (1, vox),
                    1.0,
                    &mut dw,
                    (kk, 1),
                );
                if let Some(din) = din.as_mut() {
                    let din_b = &mut din[b * s.cin * vox..(b + 1) * s.cin * vox];
                    sgemm(
                        kk,
                        s.cout,
                        p,
                        weight,
                        (1, kk),
                        &dout_b[off..],
                        (vox, 1),
                        1.0,
                        &mut din_b[off..],
                        (vox, 1),
                    );
                }
                continue;
            }
            col.resize(kk * p, 0.0);
            im2col(s, sample, z0, planes, &mut col);
            sgemm(
                s.cout,
                p,
                kk,
                &dout_b[off..],
                (vox, 1),
                &col,
                (1, p),
                1.0,
                &mut dw,
                (kk, 1),
            );
            if let Some(din) = din.as_mut() {
                dcol.resize(kk * p, 0.0);
                sgemm(
                    kk,
                    s.cout,
                    p,
                    weight,
                    (1, kk),
                    &dout_b[off..],
                    (vox, 1),
                    0.0,
                    &mut dcol,
                    (p, 1),
                );
                let din_b = &mut din[b * s.cin * vox..(b + 1) * s.cin * vox];
                col2im_add(s, &dcol, z0, planes, din_b);
            }
        }
    }
    ConvGrads {
        input: din,
        weight: dw,
        bias: db,
    }
}

/// Kernel-2 stride-2 transposed convolution. `weight` is `cin×cout×2×2×2`,
/// input spatial `(d, h, w)` maps to `(2d, 2h, 2w)`.
pub(crate) fn upconv_forward(
    s: &ConvShape,
    input: &[f32],
    weight: &[f32],
    bias: &[f32],
) -> Vec<f32> {
    let vin = s.vox();
    let (od, oh, ow) = (2 * s.d, 2 * s.h, 2 * s.w);
    let vout = od * oh * ow;
    let m = s.cout * 8;
    let mut out = vec![0.0f32; s.n * s.cout * vout];
    let mut t = vec![0.0f32; m * vin];
    for b in 0..s.n {
        let sample = &input[b * s.cin * vin..(b + 1) * s.cin * vin];
        // t[(co,tap), p] = Σ_ci w[ci, (co,tap)] · x[ci, p]
        sgemm(
            m,
            s.cin,
            vin,
            weight,
            (1, m),
            sample,
            (vin, 1),
            0.0,
            &mut t,
            (vin, 1),
        );
        let out_b = &mut out[b * s.cout * vout..(b + 1) * s.cout * vout];
        for co in 0..s.cout {
            let dst = &mut out_b[co * vout..(co + 1) * vout];
            for tap in 0..8 {
                let (a, bb, c) = (tap >> 2, (tap >> 1) & 1, tap & 1);
                let src = &t[(co * 8 + tap) * vin..(co * 8 + tap + 1) * vin];
                for z in 0..s.d {
                    for y in 0..s.h {
                        let srow = &src[(z * s.h + y) * s.w..(z * s.h + y + 1) * s.w];
                        let base = ((2 * z + a) * oh + 2 * y + bb) * ow + c;
                        for (x, &v) in srow.iter().enumerate() {
                            dst[base + 2 * x] = v + bias[co];
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn upconv_backward(
    s: &ConvShape,
    input: &[f32],
    weight: &[f32],
    dout: &[f32],
    need_input: bool,
) -> ConvGrads {
    let vin = s.vox();
    let (od, oh, ow) = (2 * s.d, 2 * s.h, 2 * s.w);
    let vout = od * oh * ow;
    let m = s.cout * 8;
    let mut dw = vec![0.0f32; s.cin * m];
    let mut db = vec![0.0f32; s.cout];
    let mut din = need_input.then(|| vec![0.0f32; s.n * s.cin * vin]);
    let mut dt = vec![0.0f32; m * vin];
    for b in 0..s.n {
        let sample = &input[b * s.cin * vin..(b + 1) * s.cin * vin];
        let dout_b = &dout[b * s.cout * vout..(b + 1) * s.cout * vout];
        for co in 0..s.cout {
            let src = &dout_b[co * vout..(co + 1) * vout];
            let sum: f64 = src.iter().map(|&v| v as f64).sum();
            db[co] += sum as f32;
            for tap in 0..8 {
                let (a, bb, c) = (tap >> 2, (tap >> 1) & 1, tap & 1);
                let dst = &mut dt[(co * 8 + tap) * vin..(co * 8 + tap + 1) * vin];
                for z in 0..s.d {
                    for y in 0..s.h {
                        let drow = &mut dst[(z * s.h + y) * s.w..(z * s.h + y + 1) * s.w];
                        let base = ((2 * z + a) * oh + 2 * y + bb) * ow + c;
                        for (x, d) in drow.iter_mut().enumerate() {
                            *d = src[base + 2 * x];
                        }
                    }
                }
            }
        }
        // dw[ci, j] += Σ_p x[ci, p] · dt[j, p]
        sgemm(
            s.cin,
            vin,
            m,
            sample,
            (vin, 1),
            &dt,
            (1, vin),
            1.0,
            &mut dw,
            (m, 1),
        );
        if let Some(din) = din.as_mut() {
            let din_b = &mut din[b * s.cin * vin..(b + 1) * s.cin * vin];
            sgemm(
                s.cin,
                m,
                vin,
                weight,
                (m, 1),
                &dt,
                (vin, 1),
                0.0,
                din_b,
                (vin, 1),
            );
        }
    }
    ConvGrads {
        input: din,
        weight: dw,
        bias: db,
    }
}

/// 2×2×2 stride-2 max pooling over `planes` independent `d×h×w` volumes.
/// Returns pooled values and the flat input index of each window's first
/// maximal element in row-major order.
pub(crate) fn maxpool_forward(
    input: &[f32],
    planes: usize,
    d: usize,
    h: usize,
    w: usize,
) -> (Vec<f32>, Vec<u32>) {
    let (od, oh, ow) = (d / 2, h / 2, w / 2);
    let vin = d * h * w;
    let vout = od * oh * ow;
    let mut out = vec![0.0f32; planes * vout];
    let mut arg = vec![0u32; planes * vout];
    for pl in 0..planes {
        let src = &input[pl * vin..(pl + 1) * vin];
        for z in 0..od {
            for y in 0..oh {
                for x in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_i = 0usize;
                    let mut first = true;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let i = ((2 * z + dz) * h + 2 * y + dy) * w + 2 * x + dx;
                                if first || src[i] > best {
                                    best = src[i];
                                    best_i = i;
                                    first = false;
                                }
                            }
                        }
                    }
                    let o = pl * vout + (z * oh + y) * ow + x;
                    out[o] = best;
                    arg[o] = (pl * vin + best_i) as u32;
                }
            }
        }
    }
    (out, arg)
}
