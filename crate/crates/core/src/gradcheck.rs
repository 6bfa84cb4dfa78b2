//! Finite-difference audit of every tape primitive and both losses.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diffcore::{
    finite_difference_gradient, relative_error, Padding, PrimitiveKind, Tape, Tensor, Var,
};
use crate::losses::{loss_c, loss_d};
use crate::trainer::derive_seed;

pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-7;
pub const FD_EPS: f64 = 1e-6;
pub const DEFAULT_TRIALS: usize = 20;
/// Inputs are kept this far from kinks and clamp bounds.
const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRow {
    pub name: String,
    pub trials: usize,
    pub passed: usize,
    /// Worst elementwise relative error over all trials.
    pub max_rel_error: f64,
}

impl GradcheckRow {
    pub fn ok(&self) -> bool {
        self.passed == self.trials
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub rows: Vec<GradcheckRow>,
}

impl GradcheckReport {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(GradcheckRow::ok)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("check              trials passed max_rel_error status\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<18} {:>6} {:>6} {:>13.3e} {}",
                r.name,
                r.trials,
                r.passed,
                r.max_rel_error,
                if r.ok() { "PASS" } else { "FAIL" }
            );
        }
        s
    }
}

type Build = fn(&mut Tape<f64>, &[Var], &Params) -> Var;

/// Per-trial non-differentiable settings.
#[derive(Debug, Clone)]
struct Params {
    stride: usize,
    padding: Padding,
    scale: f64,
    shift: f64,
    target: f64,
    labels: Tensor<f64>,
}

struct Case {
    name: &'static str,
    inputs: fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>,
    build: Build,
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.sample(StandardNormal)).collect(),
    )
    .expect("shape")
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .expect("shape")
}

/// Normal samples kept at least `KINK_MARGIN` from every point in `kinks`.
fn away_from(rng: &mut ChaCha8Rng, shape: &[usize], kinks: &[f64]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v: f64 = rng.sample(StandardNormal);
            if kinks.iter().all(|k| (v - k).abs() > KINK_MARGIN) {
                break v;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

fn cases() -> Vec<Case> {
    vec![
        Case {
            name: PrimitiveKind::MatMul.id(),
            inputs: |r| vec![normal(r, &[3, 4]), normal(r, &[4, 2])],
            build: |t, v, _| t.matmul(v[0], v[1]).unwrap(),
        },
        Case {
            name: PrimitiveKind::Conv2d.id(),
            inputs: |r| vec![normal(r, &[2, 5, 5, 2]), normal(r, &[3, 3, 2, 3])],
            build: |t, v, p| t.conv2d(v[0], v[1], p.stride, p.padding).unwrap(),
        },
        Case {
            name: PrimitiveKind::ConvTranspose2d.id(),
            inputs: |r| vec![normal(r, &[2, 3, 3, 3]), normal(r, &[3, 3, 3, 2])],
            build: |t, v, p| t.conv_transpose2d(v[0], v[1], p.stride, p.padding).unwrap(),
        },
        Case {
            name: PrimitiveKind::AvgPool2d.id(),
            inputs: |r| vec![normal(r, &[2, 4, 4, 3])],
            build: |t, v, _| t.avg_pool2d(v[0], 2).unwrap(),
        },
        Case {
            name: PrimitiveKind::LeakyRelu.id(),
            inputs: |r| vec![away_from(r, &[4, 5], &[0.0])],
            build: |t, v, _| t.leaky_relu(v[0], 0.1).unwrap(),
        },
        Case {
            name: PrimitiveKind::Sigmoid.id(),
            inputs: |r| vec![normal(r, &[4, 5])],
            build: |t, v, _| t.sigmoid(v[0]).unwrap(),
        },
        Case {
            name: PrimitiveKind::Tanh.id(),
            inputs: |r| vec![normal(r, &[4, 5])],
            build: |t, v, _| t.tanh(v[0]).unwrap(),
        },
        Case {
            name: PrimitiveKind::Log.id(),
            inputs: |r| vec![uniform(r, &[4, 5], 0.2, 2.0)],
            build: |t, v, _| t.log(v[0]).unwrap(),
        },
        Case {
            name: PrimitiveKind::Concat.id(),
            inputs: |r| vec![normal(r, &[3, 2]), normal(r, &[3, 4])],
            build: |t, v, _| t.concat(&[v[0], v[1]]).unwrap(),
        },
        Case {
            name: PrimitiveKind::Add.id(),
            inputs: |r| vec![normal(r, &[3, 4]), normal(r, &[3, 4])],
            build: |t, v, _| t.add(v[0], v[1]).unwrap(),
        },
        Case {
            name: PrimitiveKind::AddBias.id(),
            inputs: |r| vec![normal(r, &[2, 3, 4]), normal(r, &[4])],
            build: |t, v, _| t.add_bias(v[0], v[1]).unwrap(),
        },
        Case {
            name: PrimitiveKind::Mul.id(),
            inputs: |r| vec![normal(r, &[3, 4]), normal(r, &[3, 4])],
            build: |t, v, _| t.mul(v[0], v[1]).unwrap(),
        },
        Case {
            name: PrimitiveKind::Affine.id(),
            inputs: |r| vec![normal(r, &[3, 4])],
            build: |t, v, p| t.affine(v[0], p.scale, p.shift).unwrap(),
        },
        Case {
            name: PrimitiveKind::Clamp.id(),
            inputs: |r| vec![away_from(r, &[3, 4], &[-0.5, 0.5])],
            build: |t, v, _| t.clamp(v[0], -0.5, 0.5).unwrap(),
        },
        Case {
            name: PrimitiveKind::Reshape.id(),
            inputs: |r| vec![normal(r, &[2, 6])],
            build: |t, v, _| t.reshape(v[0], &[3, 4]).unwrap(),
        },
        Case {
            name: PrimitiveKind::Sum.id(),
            inputs: |r| vec![normal(r, &[3, 4])],
            build: |t, v, _| t.sum(v[0]).unwrap(),
        },
        Case {
            name: PrimitiveKind::Mean.id(),
            inputs: |r| vec![normal(r, &[3, 4])],
            build: |t, v, _| t.mean(v[0]).unwrap(),
        },
        Case {
            name: "loss_d",
            inputs: |r| vec![uniform(r, &[6, 1], 0.05, 0.95)],
            build: |t, v, p| loss_d(t, p.target, v[0]).unwrap(),
        },
        Case {
            name: "loss_c",
            inputs: |r| vec![uniform(r, &[5, 3], 0.05, 0.95)],
            build: |t, v, p| {
                let l = t.constant(p.labels.clone());
                loss_c(t, l, v[0]).unwrap()
            },
        },
    ]
}

/// Scalar objective: the case output contracted with a fixed random weight
/// tensor, so every output element contributes to the gradient.
fn objective(
    case: &Case,
    inputs: &[Tensor<f64>],
    p: &Params,
    weights: &mut Option<Tensor<f64>>,
    rng: &mut ChaCha8Rng,
    with_grad: bool,
) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|x| {
            if with_grad {
                tape.param(x.clone())
            } else {
                tape.constant(x.clone())
            }
        })
        .collect();
    let out = (case.build)(&mut tape, &vars, p);
    let w = weights
        .get_or_insert_with(|| normal(rng, tape.shape(out)))
        .clone();
    let w = tape.constant(w);
    let prod = tape.mul(out, w).expect("weight shape");
    let loss = tape.sum(prod).expect("sum");
    let value = tape.value(loss).item();
    if !with_grad {
        return (value, Vec::new());
    }
    let grads = tape.backward(loss).expect("backward");
    let g = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| grads.get_or_zeros(v, x.shape()).data().to_vec())
        .collect();
    (value, g)
}

fn run_case(case: &Case, seed: u64, trials: usize) -> GradcheckRow {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, case.name));
    let mut passed = 0;
    let mut max_rel_error: f64 = 0.0;
    for _ in 0..trials {
        let inputs = (case.inputs)(&mut rng);
        let params = Params {
            stride: rng.gen_range(1..=2),
            padding: if rng.gen_bool(0.5) {
                Padding::Same
            } else {
                Padding::Valid
            },
            scale: rng.sample(StandardNormal),
            shift: rng.sample(StandardNormal),
            target: if rng.gen_bool(0.5) { 1.0 } else { 0.0 },
            labels: Tensor::new(
                vec![5, 3],
                (0..15)
                    .map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
                    .collect(),
            )
            .expect("shape"),
        };
        let mut weights = None;
        let (_, analytic) = objective(case, &inputs, &params, &mut weights, &mut rng, true);
        let mut ok = true;
        for (i, a) in analytic.iter().enumerate() {
            let numeric = finite_difference_gradient(
                |xi| {
                    let mut probe = inputs.clone();
                    probe[i] = xi.clone();
                    objective(
                        case,
                        &probe,
                        &params,
                        &mut weights.clone(),
                        &mut rng.clone(),
                        false,
                    )
                    .0
                },
                &inputs[i],
                FD_EPS,
            );
            for (&an, &nu) in a.iter().zip(&numeric) {
                let rel = relative_error(an, nu);
                max_rel_error = max_rel_error.max(rel);
                ok &= (an - nu).abs() <= ABS_FLOOR || rel <= REL_TOL;
            }
        }
        passed += ok as usize;
    }
    GradcheckRow {
        name: case.name.to_string(),
        trials,
        passed,
        max_rel_error,
    }
}

/// Runs every check at 64-bit precision with `trials` random draws each.
pub fn gradcheck(seed: u64, trials: usize) -> GradcheckReport {
    GradcheckReport {
        rows: cases().iter().map(|c| run_case(c, seed, trials)).collect(),
    }
}
