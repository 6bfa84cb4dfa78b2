use super::primitives::{self, Attrs, Padding, PrimitiveKind};
use super::{DiffError, Real, Result, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Origin {
    Leaf,
    Op {
        kind: PrimitiveKind,
        attrs: Attrs,
        inputs: Vec<Var>,
    },
}

#[derive(Debug)]
struct Node<T: Real> {
    value: Tensor<T>,
    origin: Origin,
    requires_grad: bool,
}

/// Linear record of a forward computation. Inputs of every node precede it,
/// so creation order is a topological order.
#[derive(Debug, Default)]
pub struct Tape<T: Real = f64> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by one [`Tape::backward`] call.
#[derive(Debug, Clone)]
pub struct Gradients<T: Real = f64> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to `v`, if `v` requires grad and the
    /// loss depends on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Like [`Gradients::get`] but returns zeros for a trainable leaf the loss
    /// does not reach.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, origin: Origin, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            origin,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Origin::Leaf, true)
    }

    /// Leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Origin::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(DiffError::ForeignVar(v.0))
        }
    }

    /// Applies a primitive by kind and records it.
    pub fn apply(&mut self, kind: PrimitiveKind, inputs: &[Var], attrs: Attrs) -> Result<Var> {
        for &v in inputs {
            self.check(v)?;
        }
        let values: Vec<&Tensor<T>> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let out = primitives::forward(kind, &values, &attrs)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(
            out,
            Origin::Op {
                kind,
                attrs,
                inputs: inputs.to_vec(),
            },
            requires_grad,
        ))
    }

    /// Applies a primitive named by its string id, e.g. `"conv2d"`.
    pub fn apply_named(&mut self, id: &str, inputs: &[Var], attrs: Attrs) -> Result<Var> {
        let kind: PrimitiveKind = id.parse()?;
        self.apply(kind, inputs, attrs)
    }

    /// Reverse sweep from a scalar loss. Fan-out contributions accumulate
    /// additively in node order, so identical tapes give bit-identical
    /// gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check(loss)?;
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(DiffError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut acc: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            acc[loss.0] = Some(vec![T::one()]);
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Origin::Op {
                kind,
                ref attrs,
                ref inputs,
            } = node.origin
            else {
                continue;
            };
            let Some(grad) = acc[idx].take() else {
                continue;
            };
            let needs: Vec<bool> = inputs
                .iter()
                .map(|v| self.nodes[v.0].requires_grad)
                .collect();
            let in_vals: Vec<&Tensor<T>> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let local = primitives::backward(kind, attrs, &in_vals, &node.value, &grad, &needs);
            for (v, g) in inputs.iter().zip(local) {
                let Some(g) = g else { continue };
                match &mut acc[v.0] {
                    Some(existing) => {
                        for (e, d) in existing.iter_mut().zip(&g) {
                            *e = *e + *d;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
            // Interior gradients are not retained; only leaves are reported.
        }
        let grads = acc
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match (&node.origin, g) {
                (Origin::Leaf, Some(g)) if node.requires_grad => {
                    Some(Tensor::from_parts_unchecked(node.value.shape().to_vec(), g))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    // Typed wrappers.

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(PrimitiveKind::MatMul, &[a, b], Attrs::None)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: Padding) -> Result<Var> {
        self.apply(
            PrimitiveKind::Conv2d,
            &[x, w],
            Attrs::Conv { stride, padding },
        )
    }

    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        self.apply(
            PrimitiveKind::ConvTranspose2d,
            &[x, w],
            Attrs::Conv { stride, padding },
        )
    }

    pub fn avg_pool2d(&mut self, x: Var, size: usize) -> Result<Var> {
        self.apply(PrimitiveKind::AvgPool2d, &[x], Attrs::Pool { size })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.apply(PrimitiveKind::LeakyRelu, &[x], Attrs::Slope(slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.apply(PrimitiveKind::Sigmoid, &[x], Attrs::None)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.apply(PrimitiveKind::Tanh, &[x], Attrs::None)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.apply(PrimitiveKind::Log, &[x], Attrs::None)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(PrimitiveKind::Concat, parts, Attrs::None)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(PrimitiveKind::Add, &[a, b], Attrs::None)
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        self.apply(PrimitiveKind::AddBias, &[x, b], Attrs::None)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(PrimitiveKind::Mul, &[a, b], Attrs::None)
    }

    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        self.apply(PrimitiveKind::Affine, &[x], Attrs::Affine { scale, shift })
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Result<Var> {
        self.affine(x, scale, 0.0)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.apply(PrimitiveKind::Clamp, &[x], Attrs::Clamp { lo, hi })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.apply(PrimitiveKind::Reshape, &[x], Attrs::Shape(shape.to_vec()))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.apply(PrimitiveKind::Sum, &[x], Attrs::None)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.apply(PrimitiveKind::Mean, &[x], Attrs::None)
    }
}
