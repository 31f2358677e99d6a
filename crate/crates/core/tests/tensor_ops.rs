use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crosssrn::tensor::{kernels, Shape, Tape, Tensor};

fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

/// Zero-padded same-size correlation, written as the literal definition.
fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>) -> Tensor<f64> {
    let xs = x.shape();
    let ws = w.shape();
    let (ph, pw) = (ws.h as isize / 2, ws.w as isize / 2);
    Tensor::from_fn(Shape::new(xs.n, ws.n, xs.h, xs.w), |n, o, y, xx| {
        let mut acc = b.map_or(0.0, |b| b.at(0, o, 0, 0));
        for i in 0..xs.c {
            for ky in 0..ws.h {
                for kx in 0..ws.w {
                    let sy = y as isize + ky as isize - ph;
                    let sx = xx as isize + kx as isize - pw;
                    if sy >= 0 && sx >= 0 && (sy as usize) < xs.h && (sx as usize) < xs.w {
                        acc += w.at(o, i, ky, kx) * x.at(n, i, sy as usize, sx as usize);
                    }
                }
            }
        }
        acc
    })
}

#[test]
fn conv_matches_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut kernels_hw = vec![(3, 3), (1, 1)];
    for m in [3, 5, 7] {
        kernels_hw.push((1, m));
        kernels_hw.push((m, 1));
    }
    for (kh, kw) in kernels_hw {
        let x = random(Shape::new(2, 3, 9, 7), &mut rng);
        let w = random(Shape::new(4, 3, kh, kw), &mut rng);
        let b = random(Shape::vector(4), &mut rng);
        let got = kernels::conv2d(&x, &w, Some(&b)).unwrap();
        let want = conv_oracle(&x, &w, Some(&b));
        assert!(got.max_abs_diff(&want) < 1e-12, "{kh}x{kw}");
    }
}

#[test]
fn conv_rejects_channel_mismatch_and_even_kernels() {
    let x = Tensor::<f64>::zeros(Shape::new(1, 3, 5, 5));
    assert!(kernels::conv2d(&x, &Tensor::zeros(Shape::new(2, 4, 3, 3)), None).is_err());
    assert!(kernels::conv2d(&x, &Tensor::zeros(Shape::new(2, 3, 2, 2)), None).is_err());
}

#[test]
fn depthwise_matches_per_channel_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(Shape::new(2, 3, 6, 8), &mut rng);
    let w = random(Shape::new(3, 1, 3, 3), &mut rng);
    let b = random(Shape::vector(3), &mut rng);
    let got = kernels::depthwise_conv2d(&x, &w, Some(&b)).unwrap();
    for c in 0..3 {
        let xc = Tensor::from_fn(Shape::new(2, 1, 6, 8), |n, _, y, xx| x.at(n, c, y, xx));
        let wc = Tensor::from_fn(Shape::new(1, 1, 3, 3), |_, _, y, xx| w.at(c, 0, y, xx));
        let bc = Tensor::from_fn(Shape::vector(1), |_, _, _, _| b.at(0, c, 0, 0));
        let want = conv_oracle(&xc, &wc, Some(&bc));
        for n in 0..2 {
            for y in 0..6 {
                for xx in 0..8 {
                    assert!((got.at(n, c, y, xx) - want.at(n, 0, y, xx)).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn pixel_shuffle_layout() {
    let r = 2;
    let x = Tensor::<f64>::from_fn(Shape::new(1, 8, 3, 2), |_, c, y, xx| (c * 100 + y * 10 + xx) as f64);
    let out = kernels::pixel_shuffle(&x, r).unwrap();
    assert_eq!(out.shape(), Shape::new(1, 2, 6, 4));
    for c in 0..2 {
        for y in 0..6 {
            for xx in 0..4 {
                let src_c = c * 4 + (y % r) * r + xx % r;
                assert_eq!(out.at(0, c, y, xx), x.at(0, src_c, y / r, xx / r));
            }
        }
    }
    assert!(kernels::pixel_shuffle(&x, 3).is_err());
}

#[test]
fn weighted_sum_gradient_is_the_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(Shape::new(1, 2, 3, 3), &mut rng);
    let w = random(Shape::new(1, 2, 3, 3), &mut rng);
    let mut tape = Tape::<f64>::new();
    let xv = tape.leaf(x.clone(), true);
    let loss = tape.weighted_sum(xv, w.clone()).unwrap();
    tape.backward(loss).unwrap();
    assert!(tape.grad(xv).unwrap().max_abs_diff(&w) < 1e-15);
}

#[test]
fn unused_leaf_gets_zero_gradient() {
    let mut tape = Tape::<f64>::new();
    let a = tape.leaf(Tensor::full(Shape::new(1, 1, 2, 2), 2.0), true);
    let unused = tape.leaf(Tensor::full(Shape::new(1, 3, 1, 1), 5.0), true);
    let loss = tape.sum(a);
    tape.backward(loss).unwrap();
    let g = tape.grad(unused).unwrap();
    assert_eq!(g.shape(), Shape::new(1, 3, 1, 1));
    assert!(g.data().iter().all(|&v| v == 0.0));
    assert!(tape.grad(a).unwrap().data().iter().all(|&v| v == 1.0));
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::<f64>::new();
    let a = tape.leaf(Tensor::zeros(Shape::new(1, 1, 2, 2)), true);
    let r = tape.relu(a);
    assert!(tape.backward(r).is_err());
}

#[test]
fn conv_gradient_through_tape_matches_kernel_adjoint() {
    // <conv(x, w), g> is linear in x; its gradient is the adjoint applied to g.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(Shape::new(1, 2, 5, 5), &mut rng);
    let w = random(Shape::new(3, 2, 1, 5), &mut rng);
    let g = random(Shape::new(1, 3, 5, 5), &mut rng);
    let mut tape = Tape::<f64>::new();
    let xv = tape.leaf(x.clone(), true);
    let wv = tape.leaf(w.clone(), true);
    let y = tape.conv2d(xv, wv, None).unwrap();
    let loss = tape.weighted_sum(y, g.clone()).unwrap();
    tape.backward(loss).unwrap();
    let (gx, gw, _) = kernels::conv2d_backward(&x, &w, &g, true);
    assert!(tape.grad(xv).unwrap().max_abs_diff(&gx.unwrap()) < 1e-12);
    assert!(tape.grad(wv).unwrap().max_abs_diff(&gw) < 1e-12);
    // Adjoint identity: <conv(x), g> == <x, conv^T(g)>.
    let lhs: f64 = kernels::conv2d(&x, &w, None)
        .unwrap()
        .data()
        .iter()
        .zip(g.data())
        .map(|(a, b)| a * b)
        .sum();
    let rhs: f64 = x.data().iter().zip(tape.grad(xv).unwrap().data()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn shuffle_then_unshuffle_is_identity(c in 1usize..4, r in 1usize..4, h in 1usize..5, w in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(Shape::new(1, c * r * r, h, w), &mut rng);
        let back = kernels::pixel_unshuffle(&kernels::pixel_shuffle(&x, r).unwrap(), r).unwrap();
        prop_assert_eq!(back.data(), x.data());
    }

    #[test]
    fn conv_is_linear_in_input(m in prop::sample::select(vec![1usize, 3, 5]), seed in any::<u64>(), a in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x1 = random(Shape::new(1, 2, 6, 5), &mut rng);
        let x2 = random(Shape::new(1, 2, 6, 5), &mut rng);
        let w = random(Shape::new(2, 2, m, m), &mut rng);
        let mix = Tensor::from_fn(x1.shape(), |n, c, y, x| a * x1.at(n, c, y, x) + x2.at(n, c, y, x));
        let lhs = kernels::conv2d(&mix, &w, None).unwrap();
        let y1 = kernels::conv2d(&x1, &w, None).unwrap();
        let y2 = kernels::conv2d(&x2, &w, None).unwrap();
        let rhs = Tensor::from_fn(y1.shape(), |n, c, y, x| a * y1.at(n, c, y, x) + y2.at(n, c, y, x));
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn concat_split_round_trip(a in 1usize..4, b in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(Shape::new(2, a, 3, 3), &mut rng);
        let y = random(Shape::new(2, b, 3, 3), &mut rng);
        let cat = kernels::concat_channels(&[&x, &y]).unwrap();
        let parts = kernels::split_channels(&cat, &[a, b]).unwrap();
        prop_assert_eq!(parts[0].data(), x.data());
        prop_assert_eq!(parts[1].data(), y.data());
    }

    #[test]
    fn sigmoid_stays_in_open_interval(v in -30.0f64..30.0) {
        let t = kernels::sigmoid(&Tensor::full(Shape::scalar(), v));
        let s = t.data()[0];
        prop_assert!(s > 0.0 && s < 1.0);
    }
}
