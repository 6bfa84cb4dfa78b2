use super::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape.to_vec(), data).unwrap()
}

#[test]
fn leaky_relu_with_reference_slope() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2], &[-1.0, 2.0]));
    let y = tape.leaky_relu(x, 0.1).unwrap();
    assert_eq!(tape.value(y).data(), &[-0.1, 2.0]);
}

#[test]
fn concat_noise_and_labels() {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::zeros(&[1, 8]));
    let l = tape.constant(Tensor::full(&[1, 4], 1.0));
    let c = tape.concat(&[z, l]).unwrap();
    assert_eq!(tape.shape(c), &[1, 12]);
    assert_eq!(&tape.value(c).data()[8..], &[1.0; 4]);
}

/// Direct sum over the zero-padded neighborhood, independent of the
/// primitive's index arithmetic.
fn brute_conv_same_3x3(img: &[[f64; 4]; 4], kernel: &[[f64; 3]; 3]) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            for dr in -1i32..=1 {
                for dc in -1i32..=1 {
                    let (rr, cc) = (r as i32 + dr, c as i32 + dc);
                    if (0..4).contains(&rr) && (0..4).contains(&cc) {
                        *cell += img[rr as usize][cc as usize]
                            * kernel[(dr + 1) as usize][(dc + 1) as usize];
                    }
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_same_matches_brute_force_neighborhood_sum() {
    let img = [
        [1.0, 2.0, 3.0, 4.0],
        [5.0, 6.0, 7.0, 8.0],
        [9.0, 10.0, 11.0, 12.0],
        [13.0, 14.0, 15.0, 16.0],
    ];
    let ones = [[1.0; 3]; 3];
    let expect = brute_conv_same_3x3(&img, &ones);
    // Interior sums for this image, by hand: 54, 63, 90, 99.
    assert_eq!(expect[1][1], 54.0);
    assert_eq!(expect[2][2], 99.0);

    let flat: Vec<f64> = img.iter().flatten().copied().collect();
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 4, 4, 1], &flat));
    let w = tape.constant(Tensor::full(&[3, 3, 1, 1], 1.0));
    let y = tape.conv2d(x, w, 1, Padding::Same).unwrap();
    assert_eq!(tape.shape(y), &[1, 4, 4, 1]);
    let got = tape.value(y).data();
    for r in 0..4 {
        for c in 0..4 {
            assert_eq!(got[r * 4 + c], expect[r][c], "at ({r},{c})");
        }
    }
}

#[test]
fn conv_shape_rules() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[2, 8, 8, 3]));
    let w5 = tape.constant(Tensor::zeros(&[5, 5, 3, 4]));
    let y = tape.conv2d(x, w5, 2, Padding::Same).unwrap();
    assert_eq!(tape.shape(y), &[2, 4, 4, 4]);
    let v = tape.conv2d(x, w5, 1, Padding::Valid).unwrap();
    assert_eq!(tape.shape(v), &[2, 4, 4, 4]);
    let wt = tape.constant(Tensor::zeros(&[5, 5, 3, 2]));
    let up = tape.conv_transpose2d(x, wt, 2, Padding::Same).unwrap();
    assert_eq!(tape.shape(up), &[2, 16, 16, 2]);
    let p = tape.avg_pool2d(x, 2).unwrap();
    assert_eq!(tape.shape(p), &[2, 4, 4, 3]);
}

#[test]
fn shape_mismatch_names_extents() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[4, 5]));
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
    let x = tape.constant(Tensor::zeros(&[1, 4, 4, 2]));
    let w = tape.constant(Tensor::zeros(&[3, 3, 3, 1]));
    assert!(matches!(
        tape.conv2d(x, w, 1, Padding::Same),
        Err(DiffError::Shape { .. })
    ));
}

#[test]
fn unknown_primitive_rejected() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2]));
    assert_eq!(
        tape.apply_named("softplus", &[a], Attrs::None).unwrap_err(),
        DiffError::UnknownPrimitive("softplus".into())
    );
    assert!(tape.apply_named("sigmoid", &[a], Attrs::None).is_ok());
}

#[test]
fn backward_square() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::scalar(3.0));
    let y = tape.mul(x, x).unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[6.0]);
}

#[test]
fn backward_mean() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[4], &[1.0, -2.0, 3.0, 0.5]));
    let y = tape.mean(x).unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[0.25; 4]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[2], &[1.0, 2.0]));
    let y = tape.sigmoid(x).unwrap();
    assert_eq!(
        tape.backward(y).unwrap_err(),
        DiffError::NonScalarLoss(vec![2])
    );
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::scalar(2.0));
    let c = tape.constant(Tensor::scalar(5.0));
    let y = tape.mul(x, c).unwrap();
    let g = tape.backward(y).unwrap();
    assert!(g.get(c).is_none());
    assert_eq!(g.get(x).unwrap().data(), &[5.0]);
}

#[test]
fn fan_out_accumulates() {
    // y = x*x + x  ->  dy/dx = 2x + 1
    let mut tape = Tape::new();
    let x = tape.param(Tensor::scalar(1.5));
    let sq = tape.mul(x, x).unwrap();
    let y = tape.add(sq, x).unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[4.0]);
}

#[test]
fn concat_gradient_splits_without_leakage() {
    let mut tape = Tape::new();
    let a = tape.param(t(&[2, 2], &[1., 2., 3., 4.]));
    let b = tape.param(t(&[2, 1], &[5., 6.]));
    let c = tape.concat(&[a, b]).unwrap();
    let w = tape.constant(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
    let p = tape.mul(c, w).unwrap();
    let s = tape.sum(p).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(a).unwrap().data(), &[1., 2., 4., 5.]);
    assert_eq!(g.get(b).unwrap().data(), &[3., 6.]);
}

#[test]
fn fd_of_square() {
    let x = Tensor::scalar(3.0);
    let g = finite_difference_gradient(|t| t.data()[0] * t.data()[0], &x, 1e-4);
    assert!((g[0] - 6.0).abs() < 1e-6);
}

#[test]
fn fd_of_constant_is_zero() {
    let x = t(&[3], &[1.0, -4.0, 2.5]);
    let g = finite_difference_gradient(|_| 7.25, &x, 1e-4);
    assert_eq!(g, vec![0.0; 3]);
}

fn sigmoid_bce(x: &Tensor<f64>, target: &Tensor<f64>, requires: bool) -> (f64, Option<Vec<f64>>) {
    let mut tape = Tape::new();
    let xv = if requires {
        tape.param(x.clone())
    } else {
        tape.constant(x.clone())
    };
    let tv = tape.constant(target.clone());
    let one_minus_t = tape.constant(target.map(|v| 1.0 - v));
    let p = tape.sigmoid(xv).unwrap();
    let p = tape.clamp(p, 1e-7, 1.0 - 1e-7).unwrap();
    let lp = tape.log(p).unwrap();
    let q = tape.affine(p, -1.0, 1.0).unwrap();
    let lq = tape.log(q).unwrap();
    let a = tape.mul(tv, lp).unwrap();
    let b = tape.mul(one_minus_t, lq).unwrap();
    let s = tape.add(a, b).unwrap();
    let m = tape.mean(s).unwrap();
    let loss = tape.scale(m, -1.0).unwrap();
    let value = tape.value(loss).item();
    let grad = requires.then(|| tape.backward(loss).unwrap().get(xv).unwrap().to_f64_vec());
    (value, grad)
}

#[test]
fn sigmoid_bce_composite_matches_finite_differences() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let xs: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let ts: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..1.0)).collect();
        let x = t(&[6], &xs);
        let target = t(&[6], &ts);
        let (_, analytic) = sigmoid_bce(&x, &target, true);
        let numeric = finite_difference_gradient(|p| sigmoid_bce(p, &target, false).0, &x, 1e-6);
        assert!(
            gradients_agree(&analytic.unwrap(), &numeric, 1e-4, 1e-7),
            "analytic and numeric gradients disagree"
        );
    }
}

#[test]
fn backward_is_bitwise_deterministic() {
    let run = || {
        let mut tape = Tape::new();
        let x = tape.param(t(
            &[1, 4, 4, 2],
            &(0..32).map(|i| (i as f64).sin()).collect::<Vec<_>>(),
        ));
        let w = tape.param(t(
            &[3, 3, 2, 2],
            &(0..36).map(|i| (i as f64 * 0.7).cos()).collect::<Vec<_>>(),
        ));
        let y = tape.conv2d(x, w, 2, Padding::Same).unwrap();
        let y = tape.tanh(y).unwrap();
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        (g.get(x).unwrap().clone(), g.get(w).unwrap().clone())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.checksum(), b.0.checksum());
    assert_eq!(a.1.checksum(), b.1.checksum());
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    // <conv(x), y> == <x, conv_t(y)> for matching geometry.
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let mut rand_t = |shape: &[usize]| {
        let n: usize = shape.iter().product();
        t(
            shape,
            &(0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>(),
        )
    };
    for &(k, s) in &[(3, 1), (5, 2), (3, 2)] {
        let x = rand_t(&[1, 8, 8, 2]);
        let w = rand_t(&[k, k, 2, 3]);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.constant(w.clone());
        let cx = tape.conv2d(xv, wv, s, Padding::Same).unwrap();
        let y = rand_t(tape.shape(cx));
        let lhs: f64 = tape
            .value(cx)
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| a * b)
            .sum();

        // Kernel for the transpose maps 3 -> 2 channels: swap the channel axes.
        let mut wt = Tensor::zeros(&[k, k, 3, 2]);
        for ky in 0..k {
            for kx in 0..k {
                for ci in 0..2 {
                    for co in 0..3 {
                        wt.data_mut()[((ky * k + kx) * 3 + co) * 2 + ci] =
                            w.data()[((ky * k + kx) * 2 + ci) * 3 + co];
                    }
                }
            }
        }
        let yv = tape.constant(y);
        let wtv = tape.constant(wt);
        let ty = tape.conv_transpose2d(yv, wtv, s, Padding::Same).unwrap();
        assert_eq!(tape.shape(ty), x.shape());
        let rhs: f64 = tape
            .value(ty)
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-10, "k={k} s={s}: {lhs} vs {rhs}");
    }
}
