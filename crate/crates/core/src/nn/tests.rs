use super::*;
use crate::diffcore::{Tape, Tensor};

fn small_image(role: Role, scale: usize) -> ModelSpec {
    ModelSpec {
        base_channels: 4,
        head_width: 8,
        residual_counts: [1, 1, 1],
        ..ModelSpec::image(role, scale, 1, 6, 2)
    }
}

/// Closed-form parameter count, written out layer by layer.
fn expected_param_count(s: &ModelSpec) -> usize {
    let c = s.base_channels;
    let blocks: usize = s.residual_counts.iter().sum();
    match (s.role, s.layout) {
        (Role::Generator, Layout::Vector) => {
            let d = s.spatial_scale;
            let input = s.z_dim + s.label_dim;
            (input * c + c) + blocks * 2 * (c * c + c) + 2 * (c * c + c) + (c * d + d)
        }
        (Role::Generator, Layout::Image { channels }) => {
            let (k, r) = (s.conv_kernel, s.residual_kernel);
            let s4 = s.spatial_scale / 4;
            let input = s.z_dim + s.label_dim;
            (input * s4 * s4 * c + s4 * s4 * c)
                + blocks * 2 * (r * r * c * c + c)
                + 2 * (k * k * c * c + c)
                + (k * k * c * channels + channels)
        }
        (role, layout) => {
            let width = if role == Role::Discriminator {
                1
            } else {
                s.label_dim
            };
            let (stem, block, features) = match layout {
                Layout::Vector => (s.spatial_scale * c + c, c * c + c, c),
                Layout::Image { channels } => {
                    let (k, r) = (s.conv_kernel, s.residual_kernel);
                    let mut side = s.spatial_scale / 2;
                    for _ in 0..3 {
                        if side >= 2 {
                            side /= 2;
                        }
                    }
                    (k * k * channels * c + c, r * r * c * c + c, side * side * c)
                }
            };
            let h = s.head_width;
            stem + blocks * 2 * block + ((features + s.cond_dim) * h + h) + (h * width + width)
        }
    }
}

#[test]
fn discriminator_head_width_is_one() {
    let spec = ModelSpec::vector(Role::Discriminator, 2, 32, 2);
    let p = build_model::<f64>(&spec, 1).unwrap();
    assert_eq!(p.get("out.w").unwrap().shape(), &[128, 1]);
    assert_eq!(spec.output_shape(), vec![1]);
}

#[test]
fn classifier_head_width_is_label_count() {
    let spec = ModelSpec::vector(Role::Classifier, 2, 32, 40);
    let p = build_model::<f64>(&spec, 1).unwrap();
    assert_eq!(p.get("out.w").unwrap().shape(), &[128, 40]);
}

#[test]
fn full_scale_generator_shapes() {
    let spec = ModelSpec {
        base_channels: 64,
        ..ModelSpec::image(Role::Generator, 128, 3, 500, 40)
    };
    spec.validate().unwrap();
    assert_eq!(spec.output_shape(), vec![128, 128, 3]);
    let shapes = spec.param_shapes();
    let fc = shapes.iter().find(|p| p.name == "fc.w").unwrap();
    assert_eq!(fc.shape, vec![540, 32 * 32 * 64]);
    let out = shapes.iter().find(|p| p.name == "out.w").unwrap();
    assert_eq!(out.shape, vec![5, 5, 64, 3]);
    // 1 projection, 8 residual blocks of two layers, three deconvolutions.
    assert_eq!(shapes.iter().filter(|p| !p.is_bias).count(), 1 + 16 + 3);
}

#[test]
fn full_scale_encoder_layer_counts() {
    let spec = ModelSpec {
        base_channels: 64,
        ..ModelSpec::image(Role::Classifier, 128, 3, 0, 40)
    };
    let weights = spec
        .param_shapes()
        .into_iter()
        .filter(|p| !p.is_bias)
        .count();
    // stem, 10 residual blocks of two, two heads.
    assert_eq!(weights, 1 + 20 + 2);
    assert_eq!(spec.encoder_sides(), [64, 32, 16, 8]);
}

#[test]
fn param_count_matches_closed_form() {
    let mut specs = vec![
        ModelSpec::vector(Role::Generator, 2, 32, 2),
        ModelSpec::vector(Role::Discriminator, 2, 32, 2),
        ModelSpec::vector(Role::Classifier, 2, 32, 2),
        ModelSpec {
            cond_dim: 2,
            ..ModelSpec::vector(Role::Discriminator, 2, 32, 2)
        },
        ModelSpec::image(Role::Generator, 32, 1, 32, 3),
        ModelSpec::image(Role::Discriminator, 32, 3, 32, 3),
        ModelSpec::image(Role::Classifier, 8, 1, 32, 3),
    ];
    specs.push(ModelSpec {
        base_channels: 64,
        ..ModelSpec::image(Role::Generator, 128, 3, 500, 40)
    });
    for s in &specs {
        assert_eq!(s.param_count(), expected_param_count(s), "{s:?}");
    }
    let built = build_model::<f64>(&specs[0], 3).unwrap();
    assert_eq!(built.param_count(), expected_param_count(&specs[0]));
}

#[test]
fn same_seed_gives_identical_params() {
    let spec = ModelSpec::vector(Role::Generator, 2, 8, 2);
    let a = build_model::<f64>(&spec, 42).unwrap();
    let b = build_model::<f64>(&spec, 42).unwrap();
    let c = build_model::<f64>(&spec, 43).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.checksum(), b.checksum());
    assert_ne!(a.checksum(), c.checksum());
}

#[test]
fn glorot_bounds_respected() {
    let spec = ModelSpec::vector(Role::Generator, 2, 8, 2);
    let p = build_model::<f64>(&spec, 5).unwrap();
    for shape in spec.param_shapes() {
        let t = p.get(&shape.name).unwrap();
        let s = (6.0 / (shape.fan_in + shape.fan_out) as f64).sqrt();
        if shape.is_bias {
            assert!(t.data().iter().all(|&v| v == 0.0));
        } else {
            assert!(t.data().iter().all(|&v| v.abs() <= s));
        }
    }
}

#[test]
fn invalid_specs_rejected_with_reason() {
    let mut s = ModelSpec::image(Role::Generator, 24, 1, 8, 2);
    let err = build_model::<f64>(&s, 0).unwrap_err().to_string();
    assert!(err.contains("power of two"), "{err}");
    s.spatial_scale = 4;
    assert!(build_model::<f64>(&s, 0).is_err());
    let mut v = ModelSpec::vector(Role::Classifier, 2, 8, 2);
    v.residual_counts = [1, 0, 1];
    let err = build_model::<f64>(&v, 0).unwrap_err().to_string();
    assert!(err.contains("residual_counts"), "{err}");
}

#[test]
fn zero_noise_gives_finite_output() {
    let spec = ModelSpec::vector(Role::Generator, 2, 8, 2);
    let p = build_model::<f64>(&spec, 9).unwrap();
    let z = Tensor::zeros(&[3, 8]);
    let l = Tensor::from_f64(vec![3, 2], &[1., 0., 0., 1., 1., 1.]).unwrap();
    let y = generator_forward(&p, &z, &l).unwrap();
    assert_eq!(y.shape(), &[3, 2]);
    assert!(y.all_finite());
    assert!(y.data().iter().all(|v| v.abs() <= 1.0));
    assert_eq!(generator_forward(&p, &z, &l).unwrap(), y);
}

#[test]
fn image_generator_batch_shape() {
    let spec = small_image(Role::Generator, 32);
    let p = build_model::<f64>(&spec, 2).unwrap();
    let z = Tensor::full(&[16, 6], 0.3);
    let l = Tensor::zeros(&[16, 2]);
    let y = generator_forward(&p, &z, &l).unwrap();
    assert_eq!(y.shape(), &[16, 32, 32, 1]);
    assert!(y.data().iter().all(|v| v.is_finite() && v.abs() <= 1.0));
}

#[test]
fn generator_rejects_wrong_dimensions() {
    let spec = ModelSpec::vector(Role::Generator, 2, 8, 2);
    let p = build_model::<f64>(&spec, 9).unwrap();
    let err = generator_forward(&p, &Tensor::zeros(&[2, 7]), &Tensor::zeros(&[2, 2])).unwrap_err();
    assert!(matches!(err, ModelError::Dimension { what: "noise", .. }));
    let err = generator_forward(&p, &Tensor::zeros(&[2, 8]), &Tensor::zeros(&[2, 3])).unwrap_err();
    assert!(matches!(err, ModelError::Dimension { what: "labels", .. }));
}

#[test]
fn discriminator_scores_in_open_unit_interval() {
    for spec in [
        ModelSpec::vector(Role::Discriminator, 2, 8, 2),
        small_image(Role::Discriminator, 8),
    ] {
        let p = build_model::<f64>(&spec, 4).unwrap();
        let mut shape = vec![8];
        shape.extend(spec.sample_shape());
        let n: usize = shape.iter().product();
        let x = Tensor::from_f64(
            shape,
            &(0..n)
                .map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0)
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let s = discriminator_forward(&p, &x, None).unwrap();
        assert_eq!(s.shape(), &[8, 1]);
        assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn discriminator_duplicated_sample_duplicated_score() {
    let spec = ModelSpec::vector(Role::Discriminator, 2, 8, 2);
    let p = build_model::<f64>(&spec, 4).unwrap();
    let x = Tensor::from_f64(vec![3, 2], &[0.3, -0.2, 0.9, 0.1, 0.3, -0.2]).unwrap();
    let s = discriminator_forward(&p, &x, None).unwrap();
    assert_eq!(s.data()[0], s.data()[2]);
}

#[test]
fn classifier_rows_follow_batch_permutation() {
    let spec = ModelSpec {
        label_dim: 4,
        ..ModelSpec::vector(Role::Classifier, 2, 0, 4)
    };
    let p = build_model::<f64>(&spec, 8).unwrap();
    let rows = [[0.1, 0.2], [-0.7, 0.4], [0.9, -0.9]];
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let x = Tensor::from_f64(vec![3, 2], &flat).unwrap();
    let probs = classifier_forward(&p, &x).unwrap();
    assert_eq!(probs.shape(), &[3, 4]);
    assert!(probs.data().iter().all(|&v| v > 0.0 && v < 1.0));
    let perm = [2, 0, 1];
    let permuted = classifier_forward(&p, &x.select_rows(&perm)).unwrap();
    assert_eq!(permuted, probs.select_rows(&perm));
}

#[test]
fn conditioned_discriminator_requires_condition() {
    let spec = ModelSpec {
        cond_dim: 2,
        ..ModelSpec::vector(Role::Discriminator, 2, 8, 2)
    };
    let p = build_model::<f64>(&spec, 4).unwrap();
    let x = Tensor::zeros(&[2, 2]);
    assert!(discriminator_forward(&p, &x, None).is_err());
    let l = Tensor::from_f64(vec![2, 2], &[1., 0., 0., 1.]).unwrap();
    let s = discriminator_forward(&p, &x, Some(&l)).unwrap();
    assert_eq!(s.shape(), &[2, 1]);
    // Same sample, different label: the score must depend on the condition.
    assert_ne!(s.data()[0], s.data()[1]);
}

fn all_grads_nonzero(spec: &ModelSpec) {
    let p = build_model::<f64>(spec, 17).unwrap();
    let mut tape = Tape::new();
    let bound = p.bind(&mut tape, true);
    let batch = 4;
    let out = match spec.role {
        Role::Generator => {
            let z = Tensor::from_f64(
                vec![batch, spec.z_dim],
                &(0..batch * spec.z_dim)
                    .map(|i| ((i * 7919) % 13) as f64 / 6.5 - 1.0)
                    .collect::<Vec<_>>(),
            )
            .unwrap();
            let l = Tensor::from_f64(
                vec![batch, spec.label_dim],
                &(0..batch * spec.label_dim)
                    .map(|i| (i % 2) as f64)
                    .collect::<Vec<_>>(),
            )
            .unwrap();
            let z = tape.constant(z);
            let l = tape.constant(l);
            generator_graph(&mut tape, &bound, z, l).unwrap()
        }
        role => {
            let mut shape = vec![batch];
            shape.extend(spec.sample_shape());
            let n: usize = shape.iter().product();
            let x = Tensor::from_f64(
                shape,
                &(0..n)
                    .map(|i| ((i * 31) % 17) as f64 / 8.5 - 1.0)
                    .collect::<Vec<_>>(),
            )
            .unwrap();
            let x = tape.constant(x);
            if role == Role::Discriminator {
                discriminator_graph(&mut tape, &bound, x, None).unwrap()
            } else {
                classifier_graph(&mut tape, &bound, x).unwrap()
            }
        }
    };
    // Random projection so every output coordinate carries signal.
    let n = tape.value(out).numel();
    let w = Tensor::from_f64(
        tape.shape(out).to_vec(),
        &(0..n)
            .map(|i| ((i * 13) % 7) as f64 - 3.1)
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let w = tape.constant(w);
    let prod = tape.mul(out, w).unwrap();
    let loss = tape.sum(prod).unwrap();
    let grads = tape.backward(loss).unwrap();
    for (name, g) in bound.collect_grads(&tape, &grads) {
        assert!(
            g.data().iter().any(|&v| v != 0.0),
            "{name} got an all-zero gradient"
        );
    }
}

#[test]
fn gradient_reaches_every_parameter() {
    all_grads_nonzero(&ModelSpec::vector(Role::Generator, 2, 8, 2));
    all_grads_nonzero(&ModelSpec::vector(Role::Discriminator, 2, 8, 2));
    all_grads_nonzero(&ModelSpec::vector(Role::Classifier, 2, 8, 2));
    all_grads_nonzero(&small_image(Role::Generator, 8));
    all_grads_nonzero(&small_image(Role::Discriminator, 16));
    all_grads_nonzero(&small_image(Role::Classifier, 8));
}

#[test]
fn forwards_are_pure() {
    let spec = ModelSpec::vector(Role::Classifier, 2, 0, 2);
    let p = build_model::<f64>(&spec, 1).unwrap();
    let before = p.checksum();
    let x = Tensor::from_f64(vec![2, 2], &[0.1, 0.2, 0.3, 0.4]).unwrap();
    let a = classifier_forward(&p, &x).unwrap();
    let b = classifier_forward(&p, &x).unwrap();
    assert_eq!(a, b);
    assert_eq!(p.checksum(), before);
}

#[test]
fn fast_mode_forward_tracks_reference_precision() {
    let spec = ModelSpec::vector(Role::Generator, 2, 8, 2);
    let p64 = build_model::<f64>(&spec, 3).unwrap();
    let p32: ParamSet<f32> = p64.cast();
    let z = Tensor::from_f64(vec![2, 8], &[0.5; 16]).unwrap();
    let l = Tensor::from_f64(vec![2, 2], &[1., 0., 0., 1.]).unwrap();
    let y64 = generator_forward(&p64, &z, &l).unwrap();
    let y32 = generator_forward(&p32, &z.cast(), &l.cast()).unwrap();
    for (a, b) in y64.data().iter().zip(y32.data()) {
        assert!((a - *b as f64).abs() < 1e-4);
    }
}
