use super::check::max_relative_grad_error;
use super::image::{image_param, to_channel_major, to_pixels};
use super::{FeatureMap, Tape, Value};
use ndarray::{Array, Array2, Array3, ArrayD, IxDyn};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> =
        (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    Array::from_shape_vec(IxDyn(shape), data).unwrap()
}

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-6;

#[test]
fn forward_values() {
    let tape = Tape::new();
    let a = tape.constant(ndarray::array![[1.0, 2.0], [3.0, 4.0]].into_dyn());
    let b = tape.constant(ndarray::array![[5.0], [6.0]].into_dyn());
    let c = a.matmul(b);
    assert_eq!(c.value(), ndarray::array![[17.0], [39.0]].into_dyn());
    assert_eq!(c.sum().scalar_value(), 56.0);
    assert_eq!(c.mean().scalar_value(), 28.0);
}

#[test]
fn requires_grad_propagation() {
    let tape = Tape::new();
    let frozen = tape.constant(randn(&[3, 3], &mut ChaCha8Rng::seed_from_u64(0)));
    let trainable = tape.param(randn(&[3, 3], &mut ChaCha8Rng::seed_from_u64(1)));
    let loss = (frozen.matmul(trainable)).sum();
    let grads = tape.backward(loss);
    assert!(grads.reached(trainable));
    assert!(!grads.reached(frozen));
    assert_eq!(grads.get(frozen), ArrayD::zeros(IxDyn(&[3, 3])));
}

#[test]
fn elementwise_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = randn(&[3, 4], &mut rng);
    let b = randn(&[3, 4], &mut rng).mapv(|x| x + 3.0); // keep divisors away from 0
    let cases: Vec<(&str, Box<dyn for<'t> Fn(&'t Tape, &[Value<'t>]) -> Value<'t>>)> = vec![
        ("add", Box::new(|_, v| (v[0] + v[1]).sum())),
        ("sub", Box::new(|_, v| (v[0] - v[1]).mean())),
        ("mul", Box::new(|_, v| (v[0] * v[1]).sum())),
        ("div", Box::new(|_, v| (v[0] / v[1]).sum())),
        ("maximum", Box::new(|_, v| v[0].maximum(v[1]).sum())),
        ("minimum", Box::new(|_, v| v[0].minimum(v[1]).mean())),
    ];
    for (name, build) in cases {
        let err = max_relative_grad_error(build.as_ref(), &[a.clone(), b.clone()], STEP);
        assert!(err < TOL, "{name}: rel err {err}");
    }
}

#[test]
fn scalar_broadcast_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = randn(&[4, 2], &mut rng);
    let s = randn(&[], &mut rng).mapv(|x| x + 2.5);
    let err = max_relative_grad_error(
        &|_, v| ((v[0] * v[1]) / v[1] + v[1]).sum(),
        &[a, s],
        STEP,
    );
    assert!(err < TOL, "broadcast: rel err {err}");
}

#[test]
fn unary_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pos = randn(&[3, 3], &mut rng).mapv(|x| x.abs() + 0.5);
    let any = randn(&[3, 3], &mut rng);
    let pos_cases: Vec<(&str, Box<dyn for<'t> Fn(&'t Tape, &[Value<'t>]) -> Value<'t>>)> = vec![
        ("ln", Box::new(|_, v| v[0].ln().sum())),
        ("sqrt", Box::new(|_, v| v[0].sqrt().sum())),
    ];
    for (name, build) in pos_cases {
        let err = max_relative_grad_error(build.as_ref(), &[pos.clone()], STEP);
        assert!(err < TOL, "{name}: rel err {err}");
    }
    let any_cases: Vec<(&str, Box<dyn for<'t> Fn(&'t Tape, &[Value<'t>]) -> Value<'t>>)> = vec![
        ("exp", Box::new(|_, v| v[0].exp().sum())),
        ("atan", Box::new(|_, v| v[0].atan().sum())),
        ("sigmoid", Box::new(|_, v| v[0].sigmoid().sum())),
        ("softplus", Box::new(|_, v| v[0].softplus().sum())),
        ("abs", Box::new(|_, v| v[0].abs().sum())),
        ("relu", Box::new(|_, v| v[0].relu().sum())),
        ("neg", Box::new(|_, v| (-v[0]).sum())),
        ("square", Box::new(|_, v| v[0].square().mean())),
        ("affine", Box::new(|_, v| v[0].mul_scalar(3.0).add_scalar(1.0).rsub_scalar(2.0).sum())),
    ];
    for (name, build) in any_cases {
        let err = max_relative_grad_error(build.as_ref(), &[any.clone()], STEP);
        assert!(err < TOL, "{name}: rel err {err}");
    }
}

#[test]
fn matrix_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let a = randn(&[3, 4], &mut rng);
    let b = randn(&[4, 2], &mut rng);
    let err = max_relative_grad_error(
        &|_, v| v[0].matmul(v[1]).square().sum(),
        &[a.clone(), b],
        STEP,
    );
    assert!(err < TOL, "matmul: rel err {err}");

    let err = max_relative_grad_error(
        &|_, v| v[0].transpose().matmul(v[0]).sum(),
        &[a.clone()],
        STEP,
    );
    assert!(err < TOL, "transpose: rel err {err}");

    let err = max_relative_grad_error(&|_, v| v[0].reshape(&[2, 6]).square().mean(), &[a], STEP);
    assert!(err < TOL, "reshape: rel err {err}");
}

#[test]
fn softmax_and_normalize_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = randn(&[4, 5], &mut rng);
    let err = max_relative_grad_error(
        &|_, v| (v[0].softmax_rows().square()).sum(),
        &[a.clone()],
        STEP,
    );
    assert!(err < TOL, "softmax_rows: rel err {err}");

    let err = max_relative_grad_error(
        &|t, v| {
            let w = t.constant(randn(&[4, 5], &mut ChaCha8Rng::seed_from_u64(3)));
            (v[0].l2_normalize_rows(1e-12) * w).sum()
        },
        &[a],
        STEP,
    );
    assert!(err < TOL, "l2_normalize_rows: rel err {err}");
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let tape = Tape::new();
    let x = tape.constant(randn(&[6, 9], &mut rng).mapv(|v| v * 50.0));
    let s = x.softmax_rows().value();
    for row in s.view().into_dimensionality::<ndarray::Ix2>().unwrap().rows() {
        assert!((row.sum() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&p| p >= 0.0));
    }
}

#[test]
fn gather_and_concat_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let a = randn(&[5, 3], &mut rng);
    let b = randn(&[2, 3], &mut rng);
    let err = max_relative_grad_error(
        &|_, v| v[0].gather_rows(&[4, 0, 0, 2]).square().sum(),
        &[a.clone()],
        STEP,
    );
    assert!(err < TOL, "gather_rows: rel err {err}");

    let err = max_relative_grad_error(
        &|_, v| v[0].gather_flat(&[0, 7, 7, 14]).square().sum(),
        &[a.clone()],
        STEP,
    );
    assert!(err < TOL, "gather_flat: rel err {err}");

    let err = max_relative_grad_error(
        &|_, v| v[0].concat_rows(v[1]).square().mean(),
        &[a, b],
        STEP,
    );
    assert!(err < TOL, "concat_rows: rel err {err}");
}

#[test]
fn bias_and_clamp_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let a = randn(&[3, 6], &mut rng);
    let bias = randn(&[3], &mut rng);
    let err = max_relative_grad_error(
        &|_, v| v[0].bias_add(v[1]).square().sum(),
        &[a.clone(), bias],
        STEP,
    );
    assert!(err < TOL, "bias_add: rel err {err}");

    // Keep samples away from the clamp breakpoints so FD is valid.
    let c = a.mapv(|x| if x.abs() < 0.55 && x.abs() > 0.45 { 0.3 } else { x });
    let err = max_relative_grad_error(&|_, v| v[0].clamp(-0.5, 0.5).square().sum(), &[c], STEP);
    assert!(err < TOL, "clamp: rel err {err}");
}

#[test]
fn spatial_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let img = Array3::from_shape_fn((4, 6, 2), |_| rng.gen_range(0.0..1.0));
    let weight = randn(&[3, 2 * 9], &mut rng);
    let flat = to_channel_major(&img).into_dyn();

    let err = max_relative_grad_error(
        &|t, v| {
            let fm = FeatureMap::new(v[0], 4, 6);
            let w = t.param(randn(&[3, 18], &mut ChaCha8Rng::seed_from_u64(16)));
            fm.conv(w, None, 3).val.square().sum()
        },
        &[flat.clone()],
        STEP,
    );
    assert!(err < TOL, "conv image grad: rel err {err}");

    let err = max_relative_grad_error(
        &|t, v| {
            let img_c = t.constant(flat.clone());
            let fm = FeatureMap::new(img_c, 4, 6);
            fm.conv(v[0], None, 3).val.square().sum()
        },
        &[weight.into_dyn()],
        STEP,
    );
    assert!(err < TOL, "conv weight grad: rel err {err}");

    let err = max_relative_grad_error(
        &|_, v| {
            let fm = FeatureMap::new(v[0], 4, 6);
            fm.avg_pool2().upsample2().val.square().sum()
        },
        &[flat.clone()],
        STEP,
    );
    assert!(err < TOL, "pool/upsample grad: rel err {err}");

    let err = max_relative_grad_error(
        &|_, v| {
            let fm = FeatureMap::new(v[0], 4, 6);
            fm.avg_pool_to(2, 3).val.square().sum()
        },
        &[flat],
        STEP,
    );
    assert!(err < TOL, "avg_pool_to grad: rel err {err}");
}

#[test]
fn image_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let img = Array3::from_shape_fn((5, 7, 3), |_| rng.gen_range(0.0..1.0));
    let back = to_pixels(&to_channel_major(&img).into_dyn(), 5, 7);
    assert_eq!(img, back);

    let tape = Tape::new();
    let fm = image_param(&tape, &img);
    assert_eq!(fm.channels(), 3);
    assert_eq!((fm.h, fm.w), (5, 7));
}

#[test]
fn concat_channels_matches_layout() {
    let tape = Tape::new();
    let a = FeatureMap::new(tape.constant(Array2::from_elem((2, 6), 1.0).into_dyn()), 2, 3);
    let b = FeatureMap::new(tape.constant(Array2::from_elem((1, 6), 2.0).into_dyn()), 2, 3);
    let c = a.concat_channels(&b);
    assert_eq!(c.channels(), 3);
    assert_eq!(c.val.value()[[2, 0]], 2.0);
}
