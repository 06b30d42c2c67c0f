//! Straight-loop 64-bit implementations of the layer operations, written
//! independently of the library kernels.

#[derive(Debug, Clone, PartialEq)]
pub struct T {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl T {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(shape, vec![0.0; shape.iter().product()])
    }

    pub fn from_grid(g: &maskseg::diffgrid::Grid) -> Self {
        Self::new(g.shape(), g.data().iter().map(|&v| v as f64).collect())
    }

    pub fn to_grid(&self) -> maskseg::diffgrid::Grid {
        maskseg::diffgrid::Grid::from_vec(
            &self.shape,
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .unwrap()
    }

    pub fn d5(&self) -> [usize; 5] {
        self.shape[..].try_into().unwrap()
    }

    fn at5(&self, n: usize, c: usize, z: usize, y: usize, x: usize) -> f64 {
        let [_, cc, d, h, w] = self.d5();
        self.data[(((n * cc + c) * d + z) * h + y) * w + x]
    }

    fn idx5(&self, n: usize, c: usize, z: usize, y: usize, x: usize) -> usize {
        let [_, cc, d, h, w] = self.d5();
        (((n * cc + c) * d + z) * h + y) * w + x
    }
}

/// Same-padded, stride-1 cross-correlation.
pub fn conv3d(x: &T, w: &T, b: &T) -> T {
    let [n, cin, d, h, wd] = x.d5();
    let [cout, wcin, k, _, _] = w.d5();
    assert_eq!(cin, wcin);
    let p = (k / 2) as i64;
    let mut out = T::zeros(&[n, cout, d, h, wd]);
    for s in 0..n {
        for co in 0..cout {
            for z in 0..d {
                for y in 0..h {
                    for xx in 0..wd {
                        let mut acc = b.data[co];
                        for ci in 0..cin {
                            for a in 0..k {
                                for bb in 0..k {
                                    for c in 0..k {
                                        let (zi, yi, xi) = (
                                            z as i64 + a as i64 - p,
                                            y as i64 + bb as i64 - p,
                                            xx as i64 + c as i64 - p,
                                        );
                                        if zi < 0
                                            || yi < 0
                                            || xi < 0
                                            || zi >= d as i64
                                            || yi >= h as i64
                                            || xi >= wd as i64
                                        {
                                            continue;
                                        }
                                        acc += x.at5(s, ci, zi as usize, yi as usize, xi as usize)
                                            * w.at5(co, ci, a, bb, c);
                                    }
                                }
                            }
                        }
                        let i = out.idx5(s, co, z, y, xx);
                        out.data[i] = acc;
                    }
                }
            }
        }
    }
    out
}

/// Kernel-2 stride-2 transposed convolution; weight is `Cin×Cout×2×2×2`.
pub fn upconv3d(x: &T, w: &T, b: &T) -> T {
    let [n, cin, d, h, wd] = x.d5();
    let cout = w.shape[1];
    let mut out = T::zeros(&[n, cout, 2 * d, 2 * h, 2 * wd]);
    for s in 0..n {
        for co in 0..cout {
            for z in 0..2 * d {
                for y in 0..2 * h {
                    for xx in 0..2 * wd {
                        let mut acc = b.data[co];
                        for ci in 0..cin {
                            acc += x.at5(s, ci, z / 2, y / 2, xx / 2)
                                * w.at5(ci, co, z % 2, y % 2, xx % 2);
                        }
                        let i = out.idx5(s, co, z, y, xx);
                        out.data[i] = acc;
                    }
                }
            }
        }
    }
    out
}

pub fn maxpool3d(x: &T) -> T {
    maxpool3d_argmax(x).0
}

/// Pooling that takes each window's value at a fixed offset (0..8).
pub fn maxpool3d_routed(x: &T, arg: &[u8]) -> T {
    let [n, c, d, h, w] = x.d5();
    let mut out = T::zeros(&[n, c, d / 2, h / 2, w / 2]);
    for (i, &a) in arg.iter().enumerate().take(out.data.len()) {
        let (xx, rest) = (i % (w / 2), i / (w / 2));
        let (y, rest) = (rest % (h / 2), rest / (h / 2));
        let (z, rest) = (rest % (d / 2), rest / (d / 2));
        let (ch, s) = (rest % c, rest / c);
        let a = a as usize;
        out.data[i] = x.at5(s, ch, 2 * z + a / 4, 2 * y + a / 2 % 2, 2 * xx + a % 2);
    }
    out
}

/// Pooling plus the winning offset (0..8) of every window; ties go to the
/// first offset in row-major order.
pub fn maxpool3d_argmax(x: &T) -> (T, Vec<u8>) {
    let [n, c, d, h, w] = x.d5();
    let mut out = T::zeros(&[n, c, d / 2, h / 2, w / 2]);
    let mut arg = Vec::with_capacity(out.data.len());
    for s in 0..n {
        for ch in 0..c {
            for z in 0..d / 2 {
                for y in 0..h / 2 {
                    for xx in 0..w / 2 {
                        let (mut m, mut best) = (f64::NEG_INFINITY, 0u8);
                        for a in 0..2 {
                            for b in 0..2 {
                                for cc in 0..2 {
                                    let v = x.at5(s, ch, 2 * z + a, 2 * y + b, 2 * xx + cc);
                                    if v > m {
                                        m = v;
                                        best = (a * 4 + b * 2 + cc) as u8;
                                    }
                                }
                            }
                        }
                        let i = out.idx5(s, ch, z, y, xx);
                        out.data[i] = m;
                        arg.push(best);
                    }
                }
            }
        }
    }
    (out, arg)
}

/// Batch statistics over N, D, H, W with the biased variance.
pub fn batchnorm_train(x: &T, gamma: &T, beta: &T, eps: f64) -> T {
    let [n, c, d, h, w] = x.d5();
    let vox = d * h * w;
    let mut out = x.clone();
    for ch in 0..c {
        let vals: Vec<f64> = (0..n)
            .flat_map(|s| (0..vox).map(move |v| (s, v)))
            .map(|(s, v)| x.data[(s * c + ch) * vox + v])
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        for s in 0..n {
            for v in 0..vox {
                let i = (s * c + ch) * vox + v;
                out.data[i] =
                    gamma.data[ch] * (x.data[i] - mean) / (var + eps).sqrt() + beta.data[ch];
            }
        }
    }
    out
}

pub fn map(x: &T, f: impl Fn(f64) -> f64) -> T {
    T::new(&x.shape, x.data.iter().map(|&v| f(v)).collect())
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn relu(v: f64) -> f64 {
    v.max(0.0)
}

pub fn concat(a: &T, b: &T) -> T {
    let [n, ca, d, h, w] = a.d5();
    let cb = b.shape[1];
    let vox = d * h * w;
    let mut data = Vec::new();
    for s in 0..n {
        data.extend_from_slice(&a.data[s * ca * vox..(s + 1) * ca * vox]);
        data.extend_from_slice(&b.data[s * cb * vox..(s + 1) * cb * vox]);
    }
    T::new(&[n, ca + cb, d, h, w], data)
}

pub fn slice_channels(x: &T, start: usize, count: usize) -> T {
    let [n, c, d, h, w] = x.d5();
    let vox = d * h * w;
    let mut data = Vec::new();
    for s in 0..n {
        data.extend_from_slice(&x.data[(s * c + start) * vox..(s * c + start + count) * vox]);
    }
    T::new(&[n, count, d, h, w], data)
}

/// Multiplies each `(sample, channel)` block by `scale[block]`.
pub fn channel_scale(x: &T, scale: &[f64]) -> T {
    let vox = x.data.len() / scale.len();
    T::new(
        &x.shape,
        x.data
            .iter()
            .enumerate()
            .map(|(i, &v)| v * scale[i / vox])
            .collect(),
    )
}

pub fn zip(a: &T, b: &T, f: impl Fn(f64, f64) -> f64) -> T {
    assert_eq!(a.shape, b.shape);
    T::new(
        &a.shape,
        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    )
}

/// Mean over `(sample, channel)` of `1 - 2Σpg / (Σp² + Σg² + eps)`.
pub fn dice_loss(p: &T, g: &T, eps: f64) -> f64 {
    let groups = p.shape[0] * p.shape[1];
    let vox = p.data.len() / groups;
    let mut total = 0.0;
    for k in 0..groups {
        let ps = &p.data[k * vox..(k + 1) * vox];
        let gs = &g.data[k * vox..(k + 1) * vox];
        let i: f64 = ps.iter().zip(gs).map(|(a, b)| a * b).sum();
        let d: f64 =
            ps.iter().map(|a| a * a).sum::<f64>() + gs.iter().map(|b| b * b).sum::<f64>() + eps;
        total += 1.0 - 2.0 * i / d;
    }
    total / groups as f64
}

pub fn dot(a: &T, r: &T) -> f64 {
    a.data.iter().zip(&r.data).map(|(x, y)| x * y).sum()
}
