//! Generator, discriminator and classifier builders.

mod spec;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diffcore::{fnv1a, DiffError, Gradients, Padding, Real, Tape, Tensor, Var};

pub use spec::{Layout, ModelSpec, ParamShape, Role};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("{what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: String,
        got: String,
    },
    #[error("model has role {actual:?} but {expected:?} was required")]
    Role { expected: Role, actual: Role },
    #[error("parameter `{0}` missing from parameter set")]
    MissingParam(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Named gradient table, keyed like the [`ParamSet`] it belongs to.
pub type ParamGrads<T> = BTreeMap<String, Tensor<T>>;

/// Trainable tensors of one model plus the spec and seed that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T: Real = f64> {
    pub spec: ModelSpec,
    pub init_seed: u64,
    pub tensors: BTreeMap<String, Tensor<T>>,
}

/// Builds a freshly initialized model. Weights are uniform in
/// `[-s, s]` with `s = sqrt(6 / (fan_in + fan_out))`; biases start at zero.
pub fn build_model<T: Real>(spec: &ModelSpec, seed: u64) -> Result<ParamSet<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = BTreeMap::new();
    for p in spec.param_shapes() {
        let n: usize = p.shape.iter().product();
        let data: Vec<T> = if p.is_bias {
            vec![T::zero(); n]
        } else {
            let s = (6.0 / (p.fan_in + p.fan_out) as f64).sqrt();
            (0..n).map(|_| T::lit(rng.gen_range(-s..=s))).collect()
        };
        tensors.insert(p.name, Tensor::new(p.shape, data)?);
    }
    Ok(ParamSet {
        spec: spec.clone(),
        init_seed: seed,
        tensors,
    })
}

impl<T: Real> ParamSet<T> {
    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(|t| t.numel()).sum()
    }

    /// Order-stable digest of every tensor.
    pub fn checksum(&self) -> u64 {
        let mut bytes = Vec::new();
        for (name, t) in &self.tensors {
            bytes.extend_from_slice(name.as_bytes());
            bytes.extend_from_slice(&t.checksum().to_le_bytes());
        }
        fnv1a(&bytes)
    }

    /// Records every tensor on `tape`, trainable or constant.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        Bound {
            spec: self.spec.clone(),
            vars,
        }
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            spec: self.spec.clone(),
            init_seed: self.init_seed,
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }
}

/// A [`ParamSet`] recorded on a particular tape.
#[derive(Debug, Clone)]
pub struct Bound {
    pub spec: ModelSpec,
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn vars(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Gradient for every parameter; zeros where the loss did not reach one.
    pub fn collect_grads<T: Real>(&self, tape: &Tape<T>, grads: &Gradients<T>) -> ParamGrads<T> {
        self.vars
            .iter()
            .map(|(name, &v)| (name.clone(), grads.get_or_zeros(v, tape.shape(v))))
            .collect()
    }
}

fn dense<T: Real>(tape: &mut Tape<T>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let w = p.var(&format!("{name}.w"))?;
    let b = p.var(&format!("{name}.b"))?;
    let y = tape.matmul(x, w)?;
    Ok(tape.add_bias(y, b)?)
}

fn conv<T: Real>(tape: &mut Tape<T>, p: &Bound, name: &str, x: Var, stride: usize) -> Result<Var> {
    let w = p.var(&format!("{name}.w"))?;
    let b = p.var(&format!("{name}.b"))?;
    let y = tape.conv2d(x, w, stride, Padding::Same)?;
    Ok(tape.add_bias(y, b)?)
}

fn deconv<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    name: &str,
    x: Var,
    stride: usize,
) -> Result<Var> {
    let w = p.var(&format!("{name}.w"))?;
    let b = p.var(&format!("{name}.b"))?;
    let y = tape.conv_transpose2d(x, w, stride, Padding::Same)?;
    Ok(tape.add_bias(y, b)?)
}

#[derive(Clone, Copy)]
enum LayerKind {
    Dense,
    Conv,
    Deconv,
}

fn layer<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    kind: LayerKind,
    name: &str,
    x: Var,
    stride: usize,
) -> Result<Var> {
    match kind {
        LayerKind::Dense => dense(tape, p, name, x),
        LayerKind::Conv => conv(tape, p, name, x, stride),
        LayerKind::Deconv => deconv(tape, p, name, x, stride),
    }
}

/// `lrelu(x + B(lrelu(A(x))))`
fn residual<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    kind: LayerKind,
    prefix: &str,
    x: Var,
) -> Result<Var> {
    let slope = p.spec.leaky_slope;
    let h = layer(tape, p, kind, &format!("{prefix}.a"), x, 1)?;
    let h = tape.leaky_relu(h, slope)?;
    let h = layer(tape, p, kind, &format!("{prefix}.b"), h, 1)?;
    let s = tape.add(x, h)?;
    Ok(tape.leaky_relu(s, slope)?)
}

fn check_batch(what: &'static str, got: &[usize], row: &[usize]) -> Result<usize> {
    if got.len() != row.len() + 1 || got[1..] != *row {
        return Err(ModelError::Dimension {
            what,
            expected: format!(
                "[batch, {}]",
                row.iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
            got: format!("{got:?}"),
        });
    }
    Ok(got[0])
}

fn expect_role(spec: &ModelSpec, role: Role) -> Result<()> {
    if spec.role != role {
        return Err(ModelError::Role {
            expected: role,
            actual: spec.role,
        });
    }
    Ok(())
}

/// Records `G(z, l)` on `tape`. `z` is `[batch, z_dim]`, `l` is
/// `[batch, label_dim]`; the result has shape `[batch, ..sample_shape]` and
/// lies in `[-1, 1]`.
pub fn generator_graph<T: Real>(tape: &mut Tape<T>, p: &Bound, z: Var, l: Var) -> Result<Var> {
    let spec = &p.spec;
    expect_role(spec, Role::Generator)?;
    let batch = check_batch("noise", tape.shape(z), &[spec.z_dim])?;
    let lb = check_batch("labels", tape.shape(l), &[spec.label_dim])?;
    if lb != batch {
        return Err(ModelError::Dimension {
            what: "label batch",
            expected: batch.to_string(),
            got: lb.to_string(),
        });
    }
    let slope = spec.leaky_slope;
    let input = if spec.label_dim > 0 {
        tape.concat(&[z, l])?
    } else {
        z
    };
    let mut h = dense(tape, p, "fc", input)?;
    let kind = match spec.layout {
        Layout::Image { .. } => {
            let s4 = spec.spatial_scale / 4;
            h = tape.reshape(h, &[batch, s4, s4, spec.base_channels])?;
            LayerKind::Deconv
        }
        Layout::Vector => LayerKind::Dense,
    };
    h = tape.leaky_relu(h, slope)?;
    for (stage, &count) in spec.residual_counts.iter().enumerate() {
        for blk in 0..count {
            h = residual(tape, p, kind, &format!("res{}.{blk}", stage + 1), h)?;
        }
        if stage < 2 {
            h = layer(tape, p, kind, &format!("up{}", stage + 1), h, 2)?;
            h = tape.leaky_relu(h, slope)?;
        }
    }
    let out = layer(tape, p, kind, "out", h, 1)?;
    Ok(tape.tanh(out)?)
}

/// Shared encoder of the discriminator and classifier: stem, residual stages
/// with pooling, and the width-`head_width` layer. `cond` is concatenated to
/// the flattened features when the spec carries a `cond_dim`.
fn encoder<T: Real>(tape: &mut Tape<T>, p: &Bound, x: Var, cond: Option<Var>) -> Result<Var> {
    let spec = &p.spec;
    let batch = check_batch("sample", tape.shape(x), &spec.sample_shape())?;
    let slope = spec.leaky_slope;
    let (kind, stride) = match spec.layout {
        Layout::Image { .. } => (LayerKind::Conv, 2),
        Layout::Vector => (LayerKind::Dense, 1),
    };
    let mut h = layer(tape, p, kind, "stem", x, stride)?;
    h = tape.leaky_relu(h, slope)?;
    for (stage, &count) in spec.residual_counts.iter().enumerate() {
        for blk in 0..count {
            h = residual(tape, p, kind, &format!("res{}.{blk}", stage + 1), h)?;
        }
        if matches!(spec.layout, Layout::Image { .. }) && tape.shape(h)[1] >= 2 {
            h = tape.avg_pool2d(h, 2)?;
        }
    }
    h = tape.reshape(h, &[batch, spec.encoder_features()])?;
    match (spec.cond_dim, cond) {
        (0, None) => {}
        (d, Some(c)) if d > 0 => {
            check_batch("condition", tape.shape(c), &[d])?;
            h = tape.concat(&[h, c])?;
        }
        (d, c) => {
            return Err(ModelError::Dimension {
                what: "condition",
                expected: if d == 0 {
                    "none".into()
                } else {
                    format!("[batch, {d}]")
                },
                got: match c {
                    Some(c) => format!("{:?}", tape.shape(c)),
                    None => "none".into(),
                },
            })
        }
    }
    h = dense(tape, p, "head", h)?;
    Ok(tape.leaky_relu(h, slope)?)
}

/// Records `D(x)` (or `D(x, l)` for a conditioned discriminator); one score
/// in `(0, 1)` per sample, shape `[batch, 1]`.
pub fn discriminator_graph<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    x: Var,
    cond: Option<Var>,
) -> Result<Var> {
    expect_role(&p.spec, Role::Discriminator)?;
    let h = encoder(tape, p, x, cond)?;
    let out = dense(tape, p, "out", h)?;
    Ok(tape.sigmoid(out)?)
}

/// Records `C(x)`: per-label probabilities, shape `[batch, label_dim]`.
pub fn classifier_graph<T: Real>(tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
    expect_role(&p.spec, Role::Classifier)?;
    let h = encoder(tape, p, x, None)?;
    let out = dense(tape, p, "out", h)?;
    Ok(tape.sigmoid(out)?)
}

/// Inference-only `G(z, l)`.
pub fn generator_forward<T: Real>(
    params: &ParamSet<T>,
    z: &Tensor<T>,
    l: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let z = tape.constant(z.clone());
    let l = tape.constant(l.clone());
    let y = generator_graph(&mut tape, &p, z, l)?;
    Ok(tape.value(y).clone())
}

/// Inference-only `D(x)`.
pub fn discriminator_forward<T: Real>(
    params: &ParamSet<T>,
    x: &Tensor<T>,
    cond: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let x = tape.constant(x.clone());
    let c = cond.map(|c| tape.constant(c.clone()));
    let y = discriminator_graph(&mut tape, &p, x, c)?;
    Ok(tape.value(y).clone())
}

/// Inference-only `C(x)`.
pub fn classifier_forward<T: Real>(params: &ParamSet<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let x = tape.constant(x.clone());
    let y = classifier_graph(&mut tape, &p, x)?;
    Ok(tape.value(y).clone())
}

#[cfg(test)]
mod tests;
