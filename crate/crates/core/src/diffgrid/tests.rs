use super::*;
use crate::rng::RngState;

fn g5(shape: [usize; 5], f: impl FnMut(usize) -> f32) -> Grid {
    let n = shape.iter().product();
    Grid::from_vec(&shape, (0..n).map(f).collect()).unwrap()
}

fn conv_weight(cout: usize, cin: usize, k: usize, f: impl Fn(usize) -> f32) -> Grid {
    g5([cout, cin, k, k, k], f)
}

#[test]
fn conv_delta_kernel_is_identity() {
    let mut t = Tape::new();
    let x = t.constant(g5([1, 1, 3, 4, 5], |i| (i as f32 * 0.37).sin()));
    let w = t.leaf(conv_weight(1, 1, 3, |i| if i == 13 { 1.0 } else { 0.0 }));
    let b = t.leaf(Grid::zeros(&[1]));
    let y = t.conv3d(x, w, b).unwrap();
    assert_eq!(t.value(y).data(), t.value(x).data());
}

#[test]
fn conv_ones_kernel_counts_taps() {
    let mut t = Tape::new();
    let x = t.constant(Grid::full(&[1, 1, 4, 4, 4], 1.0));
    let w = t.leaf(Grid::full(&[1, 1, 3, 3, 3], 1.0));
    let b = t.leaf(Grid::zeros(&[1]));
    let y = t.conv3d(x, w, b).unwrap();
    let v = t.value(y).data();
    assert_eq!(v[0], 8.0);
    assert_eq!(v[(16 + 4 + 1) as usize], 27.0);
    assert_eq!(v[63], 8.0);
}

#[test]
fn conv_rejects_channel_mismatch() {
    let mut t = Tape::new();
    let x = t.constant(Grid::zeros(&[1, 2, 2, 2, 2]));
    let w = t.leaf(Grid::zeros(&[1, 3, 3, 3, 3]));
    let b = t.leaf(Grid::zeros(&[1]));
    assert!(matches!(t.conv3d(x, w, b), Err(crate::Error::Contract(_))));
}

#[test]
fn upconv_single_voxel_scatters() {
    let mut t = Tape::new();
    let x = t.constant(Grid::full(&[1, 1, 1, 1, 1], 2.5));
    let w = t.leaf(Grid::full(&[1, 1, 2, 2, 2], 1.0));
    let b = t.leaf(Grid::zeros(&[1]));
    let y = t.transposed_conv3d(x, w, b).unwrap();
    assert_eq!(t.value(y).shape(), &[1, 1, 2, 2, 2]);
    assert!(t.value(y).data().iter().all(|&v| v == 2.5));
}

#[test]
fn upconv_zero_input_gives_bias() {
    let mut t = Tape::new();
    let x = t.constant(Grid::zeros(&[1, 2, 2, 3, 1]));
    let w = t.leaf(g5([2, 3, 2, 2, 2], |i| i as f32));
    let b = t.leaf(Grid::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap());
    let y = t.transposed_conv3d(x, w, b).unwrap();
    assert_eq!(t.value(y).shape(), &[1, 3, 4, 6, 2]);
    for (c, chunk) in t.value(y).data().chunks(48).enumerate() {
        assert!(chunk.iter().all(|&v| v == [0.5, -1.0, 2.0][c]));
    }
}

#[test]
fn maxpool_block_and_constant() {
    let mut t = Tape::new();
    let x = t.constant(g5([1, 1, 2, 2, 2], |i| (i + 1) as f32));
    let y = t.maxpool3d(x).unwrap();
    assert_eq!(t.value(y).data(), &[8.0]);

    let c = t.constant(Grid::full(&[1, 2, 4, 6, 2], 3.0));
    let p = t.maxpool3d(c).unwrap();
    assert_eq!(t.value(p).shape(), &[1, 2, 2, 3, 1]);
    assert!(t.value(p).data().iter().all(|&v| v == 3.0));
}

#[test]
fn maxpool_rejects_odd_extent() {
    let mut t = Tape::new();
    let x = t.constant(Grid::zeros(&[1, 1, 2, 3, 2]));
    let err = t.maxpool3d(x).unwrap_err().to_string();
    assert!(err.contains("axis H"), "{err}");
}

#[test]
fn maxpool_ties_route_to_first() {
    let mut t = Tape::new();
    let x = t.leaf(Grid::full(&[1, 1, 2, 2, 2], 1.0));
    let y = t.maxpool3d(x).unwrap();
    let s = t.sum(y);
    t.backward(s).unwrap();
    let g = t.grad(x).unwrap().data();
    assert_eq!(g[0], 1.0);
    assert!(g[1..].iter().all(|&v| v == 0.0));
}

#[test]
fn batchnorm_constant_channel_is_zero() {
    let mut t = Tape::new();
    let mut stats = RunningStats::new(1);
    let x = t.constant(Grid::full(&[1, 1, 2, 2, 2], 4.0));
    let g = t.leaf(Grid::full(&[1], 1.0));
    let b = t.leaf(Grid::zeros(&[1]));
    let y = t.batchnorm3d(x, g, b, &mut stats, Mode::Train).unwrap();
    assert!(t.value(y).data().iter().all(|&v| v == 0.0));
    assert!((stats.mean[0] - 0.4).abs() < 1e-6);
}

#[test]
fn batchnorm_eval_unit_stats_is_identity() {
    let mut t = Tape::new();
    let mut stats = RunningStats::new(2);
    let x = t.constant(g5([1, 2, 2, 2, 2], |i| i as f32 - 7.0));
    let g = t.leaf(Grid::full(&[2], 1.0));
    let b = t.leaf(Grid::zeros(&[2]));
    let y = t.batchnorm3d(x, g, b, &mut stats, Mode::Eval).unwrap();
    for (a, b) in t.value(y).data().iter().zip(t.value(x).data()) {
        assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0));
    }
    assert_eq!(stats, RunningStats::new(2));
}

#[test]
fn batchnorm_train_standardizes() {
    let mut rng = RngState::new(3);
    let mut t = Tape::new();
    let mut stats = RunningStats::new(3);
    let x = t.constant(g5([2, 3, 4, 4, 4], |_| (rng.normal() * 3.0 + 5.0) as f32));
    let g = t.leaf(Grid::full(&[3], 1.0));
    let b = t.leaf(Grid::zeros(&[3]));
    let y = t.batchnorm3d(x, g, b, &mut stats, Mode::Train).unwrap();
    let v = t.value(y).data();
    for ch in 0..3 {
        let vals: Vec<f64> = (0..2)
            .flat_map(|n| {
                v[(n * 3 + ch) * 64..(n * 3 + ch + 1) * 64]
                    .iter()
                    .map(|&x| x as f64)
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() <= 1e-5, "mean {mean}");
        assert!((var - 1.0).abs() <= 1e-3, "var {var}");
    }
}

#[test]
fn sigmoid_values_and_saturation() {
    assert_eq!(sigmoid(0.0), 0.5);
    assert!((1.0 - sigmoid(20.0) as f64).abs() <= 1e-8);
    assert!((sigmoid(-20.0) as f64).abs() <= 1e-8);
    assert!(sigmoid_open(1e4) < 1.0 && sigmoid_open(-1e4) > 0.0);
    assert_eq!(sigmoid_open(0.3), sigmoid(0.3));
}

#[test]
fn dropout_identity_cases() {
    let mut rng = RngState::new(9);
    let mut t = Tape::new();
    let x = t.constant(g5([1, 4, 2, 2, 2], |i| i as f32));
    for (rate, mode) in [(0.0, Mode::Train), (0.0, Mode::Eval), (0.2, Mode::Eval)] {
        let y = t.spatial_dropout3d(x, rate, &mut rng, mode).unwrap();
        assert_eq!(t.value(y), t.value(x));
    }
    assert!(t.spatial_dropout3d(x, 1.0, &mut rng, Mode::Train).is_err());
}

#[test]
fn dropout_zeroes_whole_channels() {
    let mut rng = RngState::new(11);
    let mut t = Tape::new();
    let x = t.constant(Grid::full(&[2, 8, 2, 2, 2], 1.0));
    let y = t.spatial_dropout3d(x, 0.5, &mut rng, Mode::Train).unwrap();
    for block in t.value(y).data().chunks(8) {
        assert!(block.iter().all(|&v| v == 0.0) || block.iter().all(|&v| v == 2.0));
    }
}

#[test]
fn concat_shape_and_slices() {
    let mut t = Tape::new();
    let a = t.leaf(g5([1, 2, 4, 4, 4], |i| i as f32));
    let b = t.leaf(g5([1, 3, 4, 4, 4], |i| -(i as f32)));
    let c = t.concat_channels(a, b).unwrap();
    assert_eq!(t.value(c).shape(), &[1, 5, 4, 4, 4]);
    assert_eq!(&t.value(c).slice_channels(0, 2).unwrap(), t.value(a));
    assert_eq!(&t.value(c).slice_channels(2, 3).unwrap(), t.value(b));
    let s = t.sum(c);
    t.backward(s).unwrap();
    assert!(t.grad(a).unwrap().data().iter().all(|&g| g == 1.0));
    assert!(t.grad(b).unwrap().data().iter().all(|&g| g == 1.0));
}

#[test]
fn concat_rejects_spatial_mismatch() {
    let mut t = Tape::new();
    let a = t.leaf(Grid::zeros(&[1, 2, 4, 4, 4]));
    let b = t.leaf(Grid::zeros(&[1, 2, 4, 4, 2]));
    assert!(t.concat_channels(a, b).is_err());
}

#[test]
fn backward_sum_and_square() {
    let mut t = Tape::new();
    let x = t.leaf(Grid::from_vec(&[5], vec![1.0, -2.0, 0.5, 3.0, 0.0]).unwrap());
    let s = t.sum(x);
    t.backward(s).unwrap();
    assert!(t.grad(x).unwrap().data().iter().all(|&g| g == 1.0));

    let mut t = Tape::new();
    let data = vec![1.0, -2.0, 0.5, 3.0, 0.0];
    let x = t.leaf(Grid::from_vec(&[5], data.clone()).unwrap());
    let sq = t.mul(x, x).unwrap();
    let s = t.sum(sq);
    t.backward(s).unwrap();
    let expect: Vec<f32> = data.iter().map(|v| 2.0 * v).collect();
    assert_eq!(t.grad(x).unwrap().data(), expect.as_slice());
}

#[test]
fn backward_contracts() {
    let mut t = Tape::new();
    let x = t.leaf(Grid::zeros(&[3]));
    assert!(t.backward(x).is_err());
    let s = t.sum(x);
    t.backward(s).unwrap();
    assert!(t.backward(s).is_err());
}

#[test]
fn constants_receive_no_gradient() {
    let mut t = Tape::new();
    let x = t.constant(Grid::full(&[1, 1, 2, 2, 2], 1.0));
    let w = t.leaf(Grid::full(&[1, 1, 3, 3, 3], 0.1));
    let b = t.leaf(Grid::zeros(&[1]));
    let y = t.conv3d(x, w, b).unwrap();
    let s = t.sum(y);
    t.backward(s).unwrap();
    assert!(t.grad(x).is_none());
    assert!(t.grad(w).is_some());
}

#[test]
fn dice_loss_worked_values() {
    let mut t = Tape::new();
    let target = Grid::from_vec(&[1, 1, 8], vec![1., 1., 1., 1., 0., 0., 0., 0.]).unwrap();
    let p = t.leaf(Grid::full(&[1, 1, 8], 0.5));
    let l = t.dice_loss(p, &target, 0.0).unwrap();
    assert!((t.value(l).data()[0] as f64 - 1.0 / 3.0).abs() <= f32::EPSILON as f64);

    let same = t.leaf(target.clone());
    let l = t.dice_loss(same, &target, 1e-6).unwrap();
    assert!(t.value(l).data()[0] <= 1e-6);

    let disjoint =
        t.leaf(Grid::from_vec(&[1, 1, 8], vec![0., 0., 0., 0., 1., 1., 0., 0.]).unwrap());
    let l = t.dice_loss(disjoint, &target, 1e-6).unwrap();
    assert_eq!(t.value(l).data()[0], 1.0);
}

#[test]
fn dice_loss_contracts() {
    let mut t = Tape::new();
    let p = t.leaf(Grid::full(&[1, 1, 4], 0.5));
    assert!(t.dice_loss(p, &Grid::zeros(&[1, 1, 5]), 1e-6).is_err());
    assert!(t.dice_loss(p, &Grid::full(&[1, 1, 4], 0.5), 1e-6).is_err());
}
