//! Gradient and forward-oracle suites shared by the per-op tests and the
//! acceptance run.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use maskseg::diffgrid::{Mode, RunningStats, Tape, Var, BN_EPS};
use maskseg::pipeline::{resample_trilinear, Geometry, Image3};
use maskseg::unet::{Activation, UNetConfig, UNetModel};
use maskseg::RngState;

use super::reference::{self as r, T};
use super::{rel_err, uniform};

pub const FD_STEP: f64 = 1e-3;
pub const GRAD_TOL: f64 = 1e-3;
pub const GRAD_SAMPLES: usize = 20;
/// Denominator floor for the relative error, so coordinates whose exact
/// gradient vanishes (bias before batch norm) compare on an absolute scale.
pub const GRAD_FLOOR: f64 = 1e-4;
pub const ORACLE_TOL: f64 = 1e-5;

type RefFn = Box<dyn Fn(&[T]) -> T>;
type TapeFn = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;

pub struct GradCase {
    pub name: String,
    pub inputs: Vec<T>,
    pub reference: RefFn,
    pub tape: TapeFn,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GradStats {
    pub coords: usize,
    /// Coordinates checked on the piece active at the base point.
    pub pinned: usize,
    pub worst: f64,
}

impl GradStats {
    fn merge(&mut self, o: GradStats) {
        self.coords += o.coords;
        self.pinned += o.pinned;
        self.worst = self.worst.max(o.worst);
    }
}

/// Five-point central difference at step [`FD_STEP`], accurate to O(h⁴).
pub fn central_difference(f: impl Fn(f64) -> f64) -> f64 {
    let h = FD_STEP;
    (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h)
}

fn sample_coords(rng: &mut RngState, len: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    rng.shuffle(&mut idx);
    idx.truncate(k.min(len));
    idx
}

/// Autodiff of `Σ r ⊙ f(x)` against central differences of the 64-bit
/// reference, on up to [`GRAD_SAMPLES`] coordinates of every input.
pub fn check_case(case: &GradCase, rng: &mut RngState) -> Result<GradStats, String> {
    let out = (case.reference)(&case.inputs);
    let proj = T::new(&out.shape, uniform(rng, out.data.len(), -1.0, 1.0));
    let mut tape = Tape::new();
    let leaves: Vec<Var> = case.inputs.iter().map(|t| tape.leaf(t.to_grid())).collect();
    let y = (case.tape)(&mut tape, &leaves);
    if tape.value(y).shape() != out.shape.as_slice() {
        return Err(format!(
            "{}: shape {:?} vs reference {:?}",
            case.name,
            tape.value(y).shape(),
            out.shape
        ));
    }
    let pv = tape.constant(proj.to_grid());
    let prod = tape.mul(y, pv).map_err(|e| e.to_string())?;
    let loss = tape.sum(prod);
    tape.backward(loss).map_err(|e| e.to_string())?;
    let objective = |xs: &[T]| r::dot(&(case.reference)(xs), &proj);
    let mut stats = GradStats::default();
    for (j, leaf) in leaves.iter().enumerate() {
        let grad = tape
            .grad(*leaf)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; case.inputs[j].data.len()]);
        for i in sample_coords(rng, case.inputs[j].data.len(), GRAD_SAMPLES) {
            let numeric = central_difference(|d| {
                let mut xs = case.inputs.clone();
                xs[j].data[i] += d;
                objective(&xs)
            });
            let e = rel_err(grad[i] as f64, numeric, GRAD_FLOOR);
            if !(e <= GRAD_TOL) {
                return Err(format!(
                    "{} input {j} coord {i}: autodiff {} vs numeric {numeric} (rel {e:.2e})",
                    case.name, grad[i]
                ));
            }
            stats.coords += 1;
            stats.worst = stats.worst.max(e);
        }
    }
    Ok(stats)
}

fn case(
    name: &str,
    inputs: Vec<T>,
    reference: impl Fn(&[T]) -> T + 'static,
    tape: impl Fn(&mut Tape, &[Var]) -> Var + 'static,
) -> GradCase {
    GradCase {
        name: name.into(),
        inputs,
        reference: Box::new(reference),
        tape: Box::new(tape),
    }
}

fn rand_t(rng: &mut RngState, shape: &[usize], lo: f64, hi: f64) -> T {
    T::new(shape, uniform(rng, shape.iter().product(), lo, hi))
}

/// Values bounded away from zero so the relu kink is out of reach of the step.
fn signed_away_from_zero(rng: &mut RngState, shape: &[usize]) -> T {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.uniform_range(0.05, 1.0) as f32 as f64;
            if rng.uniform() < 0.5 {
                -m
            } else {
                m
            }
        })
        .collect();
    T::new(shape, data)
}

/// Distinct values at least 0.01 apart, so every pooling window has a
/// unique maximum that a step of 1e-3 cannot displace.
fn distinct(rng: &mut RngState, shape: &[usize]) -> T {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n)
        .map(|i| (i as f64 * 0.01 - 0.5) as f32 as f64)
        .collect();
    rng.shuffle(&mut v);
    T::new(shape, v)
}

fn binary(rng: &mut RngState, shape: &[usize]) -> T {
    let n = shape.iter().product();
    T::new(
        shape,
        (0..n).map(|_| (rng.uniform() < 0.4) as u8 as f64).collect(),
    )
}

/// One case per differentiable operation.
pub fn op_cases(rng: &mut RngState) -> Vec<GradCase> {
    let mut v = Vec::new();
    for (k, xs, cout) in [
        (3, [2, 2, 4, 5, 3], 3),
        (1, [1, 3, 3, 3, 3], 2),
        (5, [1, 1, 5, 4, 6], 2),
    ] {
        let w = rand_t(rng, &[cout, xs[1], k, k, k], -0.5, 0.5);
        v.push(case(
            &format!("conv3d k={k}"),
            vec![
                rand_t(rng, &xs, -1.0, 1.0),
                w,
                rand_t(rng, &[cout], -0.5, 0.5),
            ],
            |t| r::conv3d(&t[0], &t[1], &t[2]),
            |tp, x| tp.conv3d(x[0], x[1], x[2]).unwrap(),
        ));
    }
    v.push(case(
        "transposed_conv3d",
        vec![
            rand_t(rng, &[2, 3, 2, 3, 2], -1.0, 1.0),
            rand_t(rng, &[3, 2, 2, 2, 2], -0.5, 0.5),
            rand_t(rng, &[2], -0.5, 0.5),
        ],
        |t| r::upconv3d(&t[0], &t[1], &t[2]),
        |tp, x| tp.transposed_conv3d(x[0], x[1], x[2]).unwrap(),
    ));
    v.push(case(
        "maxpool3d",
        vec![distinct(rng, &[1, 2, 4, 4, 6])],
        |t| r::maxpool3d(&t[0]),
        |tp, x| tp.maxpool3d(x[0]).unwrap(),
    ));
    v.push(case(
        "batchnorm3d train",
        vec![
            rand_t(rng, &[2, 3, 3, 2, 2], -1.0, 1.0),
            rand_t(rng, &[3], 0.5, 1.5),
            rand_t(rng, &[3], -0.5, 0.5),
        ],
        |t| r::batchnorm_train(&t[0], &t[1], &t[2], BN_EPS),
        |tp, x| {
            let mut s = RunningStats::new(3);
            tp.batchnorm3d(x[0], x[1], x[2], &mut s, Mode::Train)
                .unwrap()
        },
    ));
    let mean = uniform(rng, 2, -0.5, 0.5);
    let var = uniform(rng, 2, 0.2, 2.0);
    let stats = RunningStats {
        mean: mean.iter().map(|&m| m as f32).collect(),
        var: var.iter().map(|&s| s as f32).collect(),
    };
    v.push(case(
        "batchnorm3d eval",
        vec![
            rand_t(rng, &[1, 2, 2, 3, 2], -1.0, 1.0),
            rand_t(rng, &[2], 0.5, 1.5),
            rand_t(rng, &[2], -0.5, 0.5),
        ],
        move |t| {
            let vox = 12;
            let data = t[0]
                .data
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let c = i / vox;
                    t[1].data[c] * (x - mean[c]) / (var[c] + BN_EPS).sqrt() + t[2].data[c]
                })
                .collect();
            T::new(&t[0].shape, data)
        },
        move |tp, x| {
            let mut s = stats.clone();
            tp.batchnorm3d(x[0], x[1], x[2], &mut s, Mode::Eval)
                .unwrap()
        },
    ));
    v.push(case(
        "sigmoid",
        vec![rand_t(rng, &[1, 2, 3, 3, 3], -4.0, 4.0)],
        |t| r::map(&t[0], r::sigmoid),
        |tp, x| tp.sigmoid(x[0]),
    ));
    v.push(case(
        "sigmoid_open",
        vec![rand_t(rng, &[1, 2, 3, 3, 3], -4.0, 4.0)],
        |t| r::map(&t[0], r::sigmoid),
        |tp, x| tp.sigmoid_open(x[0]),
    ));
    v.push(case(
        "relu",
        vec![signed_away_from_zero(rng, &[1, 2, 3, 3, 3])],
        |t| r::map(&t[0], r::relu),
        |tp, x| tp.relu(x[0]),
    ));
    const DROP_SEED: u64 = 7;
    v.push(case(
        "spatial_dropout3d",
        vec![rand_t(rng, &[2, 4, 2, 2, 2], -1.0, 1.0)],
        |t| {
            let mut dr = RngState::new(DROP_SEED);
            let scale: Vec<f64> = (0..8)
                .map(|_| if dr.uniform() < 0.5 { 0.0 } else { 2.0 })
                .collect();
            r::channel_scale(&t[0], &scale)
        },
        |tp, x| {
            tp.spatial_dropout3d(x[0], 0.5, &mut RngState::new(DROP_SEED), Mode::Train)
                .unwrap()
        },
    ));
    v.push(case(
        "concat_channels",
        vec![
            rand_t(rng, &[2, 2, 2, 2, 2], -1.0, 1.0),
            rand_t(rng, &[2, 1, 2, 2, 2], -1.0, 1.0),
        ],
        |t| r::concat(&t[0], &t[1]),
        |tp, x| tp.concat_channels(x[0], x[1]).unwrap(),
    ));
    v.push(case(
        "slice_channels",
        vec![rand_t(rng, &[2, 4, 2, 2, 2], -1.0, 1.0)],
        |t| r::slice_channels(&t[0], 1, 2),
        |tp, x| tp.slice_channels(x[0], 1, 2).unwrap(),
    ));
    v.push(case(
        "add",
        vec![
            rand_t(rng, &[1, 2, 2, 3, 2], -1.0, 1.0),
            rand_t(rng, &[1, 2, 2, 3, 2], -1.0, 1.0),
        ],
        |t| r::zip(&t[0], &t[1], |a, b| a + b),
        |tp, x| tp.add(x[0], x[1]).unwrap(),
    ));
    v.push(case(
        "mul",
        vec![
            rand_t(rng, &[1, 2, 2, 3, 2], -1.0, 1.0),
            rand_t(rng, &[1, 2, 2, 3, 2], -1.0, 1.0),
        ],
        |t| r::zip(&t[0], &t[1], |a, b| a * b),
        |tp, x| tp.mul(x[0], x[1]).unwrap(),
    ));
    v.push(case(
        "sum",
        vec![rand_t(rng, &[1, 1, 2, 3, 4], -1.0, 1.0)],
        |t| T::new(&[1], vec![t[0].data.iter().sum()]),
        |tp, x| tp.sum(x[0]),
    ));
    let target = binary(rng, &[2, 3, 3, 3, 3]);
    let tg = target.to_grid();
    v.push(case(
        "dice_loss",
        vec![rand_t(rng, &[2, 3, 3, 3, 3], 0.05, 0.95)],
        move |t| T::new(&[1], vec![r::dice_loss(&t[0], &target, 1e-6)]),
        move |tp, x| tp.dice_loss(x[0], &tg, 1e-6).unwrap(),
    ));
    v
}

/// Checks every operation case; returns the combined statistics.
pub fn op_gradients(seed: u64) -> Result<GradStats, String> {
    let mut rng = RngState::new(seed);
    let mut total = GradStats::default();
    for c in op_cases(&mut rng) {
        total.merge(check_case(&c, &mut rng)?);
    }
    Ok(total)
}

/// 64-bit forward of the U-Net with parameters in canonical order, plus
/// the branch pattern (pooling winners, relu signs) the output depends on.
/// With `pin`, branches follow the given pattern instead of the values,
/// which evaluates the smooth piece the pattern selects.
pub fn unet_reference(cfg: &UNetConfig, params: &[T], x: &T, pin: Option<&[u8]>) -> (T, Vec<u8>) {
    let mut pattern = Vec::new();
    let mut params = params.iter();
    let mut take = || params.next().expect("parameter count").clone();
    let block = |x: &T, take: &mut dyn FnMut() -> T, pattern: &mut Vec<u8>| {
        let mut y = x.clone();
        for _ in 0..2 {
            let (w, b, g, bt) = (take(), take(), take(), take());
            let z = r::batchnorm_train(&r::conv3d(&y, &w, &b), &g, &bt, BN_EPS);
            y = match cfg.hidden_activation {
                Activation::Sigmoid => r::map(&z, r::sigmoid),
                Activation::Relu => {
                    let at = pattern.len();
                    pattern.extend(z.data.iter().map(|&v| (v > 0.0) as u8));
                    let mut y = z;
                    match pin {
                        Some(p) => y
                            .data
                            .iter_mut()
                            .zip(&p[at..])
                            .for_each(|(v, &on)| *v *= on as f64),
                        None => y.data.iter_mut().for_each(|v| *v = r::relu(*v)),
                    }
                    y
                }
            };
        }
        y
    };
    let mut skips = Vec::new();
    let mut h = x.clone();
    for _ in 0..cfg.depth {
        let y = block(&h, &mut take, &mut pattern);
        let (pooled, arg) = r::maxpool3d_argmax(&y);
        h = match pin {
            Some(p) => r::maxpool3d_routed(&y, &p[pattern.len()..pattern.len() + arg.len()]),
            None => pooled,
        };
        pattern.extend(arg);
        skips.push(y);
    }
    h = block(&h, &mut take, &mut pattern);
    for skip in skips.into_iter().rev() {
        let (w, b) = (take(), take());
        let up = r::upconv3d(&h, &w, &b);
        h = block(&r::concat(&skip, &up), &mut take, &mut pattern);
    }
    let (w, b) = (take(), take());
    (r::map(&r::conv3d(&h, &w, &b), r::sigmoid), pattern)
}

/// End-to-end check of a two-level U-Net on one 8³ input: Dice loss
/// gradients of [`GRAD_SAMPLES`] coordinates of every parameter tensor
/// against central differences. When a stencil crosses a pooling or relu
/// switch, the difference is taken on the piece active at the base point.
pub fn unet_gradients(seed: u64, activation: Activation) -> Result<GradStats, String> {
    let mut rng = RngState::new(seed);
    let cfg = UNetConfig {
        in_channels: 1,
        out_channels: 2,
        base_channels: 2,
        depth: 2,
        dropout_rate: 0.0,
        hidden_activation: activation,
    };
    let mut model =
        UNetModel::build(cfg, &mut RngState::new(seed ^ 0x5eed)).map_err(|e| e.to_string())?;
    // Perturb zero-initialised biases and affine shifts so their gradients are exercised.
    for p in model.params_mut() {
        for v in p.data_mut() {
            *v += rng.uniform_range(-0.1, 0.1) as f32;
        }
    }
    let x = rand_t(&mut rng, &[1, 1, 8, 8, 8], -1.0, 1.0);
    let target = binary(&mut rng, &[1, 2, 8, 8, 8]);
    let eps = 1e-6;
    let mut tape = Tape::new();
    let xv = tape.constant(x.to_grid());
    let fwd = model
        .forward(&mut tape, xv, Mode::Train, &mut RngState::new(0))
        .map_err(|e| e.to_string())?;
    let loss = tape
        .dice_loss(fwd.output, &target.to_grid(), eps)
        .map_err(|e| e.to_string())?;
    tape.backward(loss).map_err(|e| e.to_string())?;
    let params: Vec<T> = model.params().iter().map(T::from_grid).collect();
    let (out, base_pattern) = unet_reference(&cfg, &params, &x, None);
    let ref_loss = r::dice_loss(&out, &target, eps);
    let lib_loss = tape.value(loss).data()[0] as f64;
    if (ref_loss - lib_loss).abs() > 1e-5 {
        return Err(format!("forward loss {lib_loss} vs reference {ref_loss}"));
    }
    let mut stats = GradStats::default();
    for (j, var) in fwd.params.iter().enumerate() {
        let grad = tape
            .grad(*var)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; params[j].data.len()]);
        for i in sample_coords(&mut rng, params[j].data.len(), GRAD_SAMPLES) {
            let smooth = std::cell::Cell::new(true);
            let mut numeric = central_difference(|d| {
                let mut ps = params.clone();
                ps[j].data[i] += d;
                let (out, pattern) = unet_reference(&cfg, &ps, &x, None);
                if pattern != base_pattern {
                    smooth.set(false);
                }
                r::dice_loss(&out, &target, eps)
            });
            if !smooth.get() {
                stats.pinned += 1;
                numeric = central_difference(|d| {
                    let mut ps = params.clone();
                    ps[j].data[i] += d;
                    r::dice_loss(
                        &unet_reference(&cfg, &ps, &x, Some(&base_pattern)).0,
                        &target,
                        eps,
                    )
                });
            }
            let e = rel_err(grad[i] as f64, numeric, GRAD_FLOOR);
            if !(e <= GRAD_TOL) {
                return Err(format!(
                    "{} coord {i}: autodiff {} vs numeric {numeric} (rel {e:.2e})",
                    model.names()[j],
                    grad[i]
                ));
            }
            stats.coords += 1;
            stats.worst = stats.worst.max(e);
        }
    }
    Ok(stats)
}

fn rand_dim(rng: &mut RngState, lo: usize, hi: usize) -> usize {
    lo + (rng.next_u64() % (hi - lo + 1) as u64) as usize
}

fn max_abs_diff(a: &[f32], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y).abs())
        .fold(0.0, f64::max)
}

/// Forward outputs of conv3d, transposed_conv3d and maxpool3d against the
/// loop references on `cases` random shapes each; returns the worst error.
pub fn forward_oracles(seed: u64, cases: usize) -> Result<f64, String> {
    let mut rng = RngState::new(seed);
    let mut worst: f64 = 0.0;
    for c in 0..cases {
        let n = rand_dim(&mut rng, 1, 2);
        let cin = rand_dim(&mut rng, 1, 3);
        let cout = rand_dim(&mut rng, 1, 3);
        let k = [1, 3, 3, 5][c % 4];
        let dims = [
            rand_dim(&mut rng, 1, 6),
            rand_dim(&mut rng, 1, 7),
            rand_dim(&mut rng, 1, 19),
        ];
        let x = rand_t(&mut rng, &[n, cin, dims[0], dims[1], dims[2]], -1.0, 1.0);
        let w = rand_t(&mut rng, &[cout, cin, k, k, k], -0.5, 0.5);
        let b = rand_t(&mut rng, &[cout], -0.5, 0.5);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (
            tape.constant(x.to_grid()),
            tape.constant(w.to_grid()),
            tape.constant(b.to_grid()),
        );
        let y = tape.conv3d(xv, wv, bv).map_err(|e| e.to_string())?;
        let e = max_abs_diff(tape.value(y).data(), &r::conv3d(&x, &w, &b).data);
        if e > ORACLE_TOL {
            return Err(format!(
                "conv3d case {c} (k={k}, dims {dims:?}): error {e:.2e}"
            ));
        }
        worst = worst.max(e);

        let w = rand_t(&mut rng, &[cin, cout, 2, 2, 2], -0.5, 0.5);
        let y = {
            let (wv, bv) = (tape.constant(w.to_grid()), tape.constant(b.to_grid()));
            tape.transposed_conv3d(xv, wv, bv)
                .map_err(|e| e.to_string())?
        };
        let e = max_abs_diff(tape.value(y).data(), &r::upconv3d(&x, &w, &b).data);
        if e > ORACLE_TOL {
            return Err(format!(
                "transposed_conv3d case {c} (dims {dims:?}): error {e:.2e}"
            ));
        }
        worst = worst.max(e);

        let even = dims.map(|d| 2 * d.div_ceil(2));
        let xp = rand_t(&mut rng, &[n, cin, even[0], even[1], even[2]], -1.0, 1.0);
        let pv = tape.constant(xp.to_grid());
        let y = tape.maxpool3d(pv).map_err(|e| e.to_string())?;
        let e = max_abs_diff(tape.value(y).data(), &r::maxpool3d(&xp).data);
        if e > 0.0 {
            return Err(format!("maxpool3d case {c} (dims {even:?}): error {e:.2e}"));
        }
    }
    Ok(worst)
}

/// Trilinear resampling of linear fields `f = c0 + c·p` on random
/// geometries; each output must equal `f` at its (hull-clamped) position.
pub fn trilinear_linear_fields(seed: u64, cases: usize) -> Result<f64, String> {
    let mut rng = RngState::new(seed);
    let mut worst: f64 = 0.0;
    for c in 0..cases {
        let dims = [
            rand_dim(&mut rng, 2, 9),
            rand_dim(&mut rng, 2, 9),
            rand_dim(&mut rng, 2, 9),
        ];
        let spacing: [f32; 3] = std::array::from_fn(|_| rng.uniform_range(0.5, 2.0) as f32);
        let origin: [f32; 3] = std::array::from_fn(|_| rng.uniform_range(-5.0, 5.0) as f32);
        let coef: [f64; 4] = std::array::from_fn(|_| rng.uniform_range(-1.0, 1.0));
        let g = Geometry::new(dims, spacing, origin).map_err(|e| e.to_string())?;
        let f = |p: [f64; 3]| coef[0] + coef[1] * p[0] + coef[2] * p[1] + coef[3] * p[2];
        let data = (0..g.len())
            .map(|i| {
                f(g.voxel_center([
                    i / (dims[1] * dims[2]),
                    (i / dims[2]) % dims[1],
                    i % dims[2],
                ])) as f32
            })
            .collect();
        let v = Image3::new(g, data).map_err(|e| e.to_string())?;
        let target: [f64; 3] = std::array::from_fn(|_| rng.uniform_range(0.4, 2.5));
        let out = resample_trilinear(&v, target).map_err(|e| e.to_string())?;
        for (idx, val) in out.indexed() {
            let p = out.geom.voxel_center(idx);
            let u = g.continuous_index(p);
            let clamped: [f64; 3] = std::array::from_fn(|a| {
                let ua = u[a].clamp(0.0, (dims[a] - 1) as f64);
                origin[a] as f64 + (ua + 0.5) * spacing[a] as f64
            });
            let e = (val as f64 - f(clamped)).abs();
            if e > ORACLE_TOL {
                return Err(format!(
                    "trilinear case {c} voxel {idx:?}: {val} vs {}",
                    f(clamped)
                ));
            }
            worst = worst.max(e);
        }
    }
    Ok(worst)
}
