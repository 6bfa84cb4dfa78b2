use std::fmt;
use std::str::FromStr;

use super::{DiffError, Real, Result, Tensor};

/// The closed set of differentiable operations a tape can record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrimitiveKind {
    /// `[m, k] x [k, n] -> [m, n]`
    MatMul,
    /// NHWC input `[n, h, w, ci]`, HWIO kernel `[k, k, ci, co]`.
    Conv2d,
    /// NHWC input `[n, h, w, ci]`, kernel `[k, k, ci, co]`; adjoint of `Conv2d`.
    ConvTranspose2d,
    /// Non-overlapping mean pooling over `size x size` windows, NHWC.
    AvgPool2d,
    LeakyRelu,
    Sigmoid,
    Tanh,
    Log,
    /// Concatenation along the last axis; leading extents must agree.
    Concat,
    Add,
    /// `x[..., j] + b[j]`
    AddBias,
    Mul,
    /// `scale * x + shift`
    Affine,
    Clamp,
    Reshape,
    Sum,
    Mean,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 17] = [
        PrimitiveKind::MatMul,
        PrimitiveKind::Conv2d,
        PrimitiveKind::ConvTranspose2d,
        PrimitiveKind::AvgPool2d,
        PrimitiveKind::LeakyRelu,
        PrimitiveKind::Sigmoid,
        PrimitiveKind::Tanh,
        PrimitiveKind::Log,
        PrimitiveKind::Concat,
        PrimitiveKind::Add,
        PrimitiveKind::AddBias,
        PrimitiveKind::Mul,
        PrimitiveKind::Affine,
        PrimitiveKind::Clamp,
        PrimitiveKind::Reshape,
        PrimitiveKind::Sum,
        PrimitiveKind::Mean,
    ];

    pub fn id(self) -> &'static str {
        match self {
            PrimitiveKind::MatMul => "matmul",
            PrimitiveKind::Conv2d => "conv2d",
            PrimitiveKind::ConvTranspose2d => "conv_transpose2d",
            PrimitiveKind::AvgPool2d => "avg_pool2d",
            PrimitiveKind::LeakyRelu => "leaky_relu",
            PrimitiveKind::Sigmoid => "sigmoid",
            PrimitiveKind::Tanh => "tanh",
            PrimitiveKind::Log => "log",
            PrimitiveKind::Concat => "concat",
            PrimitiveKind::Add => "add",
            PrimitiveKind::AddBias => "add_bias",
            PrimitiveKind::Mul => "mul",
            PrimitiveKind::Affine => "affine",
            PrimitiveKind::Clamp => "clamp",
            PrimitiveKind::Reshape => "reshape",
            PrimitiveKind::Sum => "sum",
            PrimitiveKind::Mean => "mean",
        }
    }
}

impl fmt::Display for PrimitiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for PrimitiveKind {
    type Err = DiffError;

    fn from_str(s: &str) -> Result<Self> {
        PrimitiveKind::ALL
            .iter()
            .copied()
            .find(|k| k.id() == s)
            .ok_or_else(|| DiffError::UnknownPrimitive(s.to_string()))
    }
}

/// Zero-padding convention for the convolution primitives.
///
/// `Same` with stride `s` maps side `n` to `ceil(n / s)` for `Conv2d` and
/// `n * s` for `ConvTranspose2d`; the total padding `max((out-1)*s + k - n, 0)`
/// is split with the smaller half on the leading edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Attrs {
    None,
    Slope(f64),
    Conv { stride: usize, padding: Padding },
    Pool { size: usize },
    Affine { scale: f64, shift: f64 },
    Clamp { lo: f64, hi: f64 },
    Shape(Vec<usize>),
}

fn bad_attrs(op: &'static str, attrs: &Attrs) -> DiffError {
    DiffError::BadAttrs {
        op,
        attrs: format!("{attrs:?}"),
    }
}

fn shape_err(op: &'static str, detail: String) -> DiffError {
    DiffError::Shape { op, detail }
}

fn arity(op: PrimitiveKind, inputs: usize, expected: usize) -> Result<()> {
    if inputs != expected {
        return Err(DiffError::Arity {
            op: op.id(),
            expected,
            got: inputs,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    n: usize,
    h: usize,
    w: usize,
    ci: usize,
    k: usize,
    co: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad_h: usize,
    pad_w: usize,
}

fn same_pad(out: usize, stride: usize, k: usize, inp: usize) -> usize {
    ((out - 1) * stride + k).saturating_sub(inp) / 2
}

fn conv_geom(
    op: PrimitiveKind,
    x: &[usize],
    w: &[usize],
    stride: usize,
    padding: Padding,
) -> Result<ConvGeom> {
    let name = op.id();
    if x.len() != 4 {
        return Err(shape_err(
            name,
            format!("input must be NHWC rank 4, got {x:?}"),
        ));
    }
    if w.len() != 4 || w[0] != w[1] {
        return Err(shape_err(
            name,
            format!("kernel must be [k, k, ci, co], got {w:?}"),
        ));
    }
    if w[2] != x[3] {
        return Err(shape_err(
            name,
            format!(
                "kernel input channels {} != input channels {} ({w:?} vs {x:?})",
                w[2], x[3]
            ),
        ));
    }
    if stride == 0 {
        return Err(shape_err(name, "stride must be positive".into()));
    }
    let (n, h, wd, ci) = (x[0], x[1], x[2], x[3]);
    let (k, co) = (w[0], w[3]);
    let (oh, ow, pad_h, pad_w) = match (op, padding) {
        (PrimitiveKind::Conv2d, Padding::Same) => {
            let oh = h.div_ceil(stride);
            let ow = wd.div_ceil(stride);
            (
                oh,
                ow,
                same_pad(oh, stride, k, h),
                same_pad(ow, stride, k, wd),
            )
        }
        (PrimitiveKind::Conv2d, Padding::Valid) => {
            if h < k || wd < k {
                return Err(shape_err(
                    name,
                    format!("valid padding needs spatial extents >= kernel {k}, got {h}x{wd}"),
                ));
            }
            ((h - k) / stride + 1, (wd - k) / stride + 1, 0, 0)
        }
        (PrimitiveKind::ConvTranspose2d, Padding::Same) => {
            let oh = h * stride;
            let ow = wd * stride;
            (
                oh,
                ow,
                same_pad(h, stride, k, oh),
                same_pad(wd, stride, k, ow),
            )
        }
        (PrimitiveKind::ConvTranspose2d, Padding::Valid) => {
            ((h - 1) * stride + k, (wd - 1) * stride + k, 0, 0)
        }
        _ => unreachable!("conv_geom called for {op}"),
    };
    Ok(ConvGeom {
        n,
        h,
        w: wd,
        ci,
        k,
        co,
        oh,
        ow,
        stride,
        pad_h,
        pad_w,
    })
}

/// Maps an index on the strided side to the dense side, `i * s + kk - pad`.
#[inline]
fn tap(i: usize, s: usize, kk: usize, pad: usize, limit: usize) -> Option<usize> {
    let p = i * s + kk;
    if p < pad || p - pad >= limit {
        None
    } else {
        Some(p - pad)
    }
}

/// Output shape of a primitive applied to inputs of the given shapes.
pub(crate) fn output_shape(
    kind: PrimitiveKind,
    shapes: &[&[usize]],
    attrs: &Attrs,
) -> Result<Vec<usize>> {
    use PrimitiveKind as P;
    let name = kind.id();
    match kind {
        P::MatMul => {
            arity(kind, shapes.len(), 2)?;
            let (a, b) = (shapes[0], shapes[1]);
            if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
                return Err(shape_err(name, format!("cannot multiply {a:?} by {b:?}")));
            }
            Ok(vec![a[0], b[1]])
        }
        P::Conv2d | P::ConvTranspose2d => {
            arity(kind, shapes.len(), 2)?;
            let Attrs::Conv { stride, padding } = *attrs else {
                return Err(bad_attrs(name, attrs));
            };
            let g = conv_geom(kind, shapes[0], shapes[1], stride, padding)?;
            Ok(vec![g.n, g.oh, g.ow, g.co])
        }
        P::AvgPool2d => {
            arity(kind, shapes.len(), 1)?;
            let Attrs::Pool { size } = *attrs else {
                return Err(bad_attrs(name, attrs));
            };
            let x = shapes[0];
            if x.len() != 4 || size == 0 || !x[1].is_multiple_of(size) || !x[2].is_multiple_of(size) {
                return Err(shape_err(
                    name,
                    format!("input {x:?} is not NHWC with spatial extents divisible by {size}"),
                ));
            }
            Ok(vec![x[0], x[1] / size, x[2] / size, x[3]])
        }
        P::LeakyRelu | P::Sigmoid | P::Tanh | P::Log | P::Affine | P::Clamp => {
            arity(kind, shapes.len(), 1)?;
            let ok = matches!(
                (kind, attrs),
                (P::LeakyRelu, Attrs::Slope(_))
                    | (P::Affine, Attrs::Affine { .. })
                    | (P::Clamp, Attrs::Clamp { .. })
                    | (P::Sigmoid | P::Tanh | P::Log, Attrs::None)
            );
            if !ok {
                return Err(bad_attrs(name, attrs));
            }
            if let Attrs::Clamp { lo, hi } = *attrs {
                if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
                    return Err(bad_attrs(name, attrs));
                }
            }
            Ok(shapes[0].to_vec())
        }
        P::Concat => {
            if shapes.is_empty() {
                return Err(DiffError::Arity {
                    op: name,
                    expected: 1,
                    got: 0,
                });
            }
            let first = shapes[0];
            let lead = &first[..first.len() - 1];
            let mut last = 0;
            for s in shapes {
                if s.len() != first.len() || &s[..s.len() - 1] != lead {
                    return Err(shape_err(
                        name,
                        format!("leading extents differ: {first:?} vs {s:?}"),
                    ));
                }
                last += s[s.len() - 1];
            }
            let mut out = lead.to_vec();
            out.push(last);
            Ok(out)
        }
        P::Add | P::Mul => {
            arity(kind, shapes.len(), 2)?;
            if shapes[0] != shapes[1] {
                return Err(shape_err(
                    name,
                    format!("operands differ: {:?} vs {:?}", shapes[0], shapes[1]),
                ));
            }
            Ok(shapes[0].to_vec())
        }
        P::AddBias => {
            arity(kind, shapes.len(), 2)?;
            let (x, b) = (shapes[0], shapes[1]);
            if b.len() != 1 || x[x.len() - 1] != b[0] {
                return Err(shape_err(
                    name,
                    format!("bias {b:?} does not match trailing extent of {x:?}"),
                ));
            }
            Ok(x.to_vec())
        }
        P::Reshape => {
            arity(kind, shapes.len(), 1)?;
            let Attrs::Shape(target) = attrs else {
                return Err(bad_attrs(name, attrs));
            };
            let from: usize = shapes[0].iter().product();
            let to: usize = target.iter().product();
            if from != to || target.contains(&0) {
                return Err(shape_err(
                    name,
                    format!("cannot view {:?} as {target:?}", shapes[0]),
                ));
            }
            Ok(target.clone())
        }
        P::Sum | P::Mean => {
            arity(kind, shapes.len(), 1)?;
            Ok(vec![1])
        }
    }
}

pub(crate) fn forward<T: Real>(
    kind: PrimitiveKind,
    inputs: &[&Tensor<T>],
    attrs: &Attrs,
) -> Result<Tensor<T>> {
    use PrimitiveKind as P;
    let shapes: Vec<&[usize]> = inputs.iter().map(|t| t.shape()).collect();
    let out_shape = output_shape(kind, &shapes, attrs)?;
    let data: Vec<T> = match kind {
        P::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut out = vec![T::zero(); m * n];
            matmul_acc(a.data(), b.data(), &mut out, m, k, n);
            out
        }
        P::Conv2d | P::ConvTranspose2d => {
            let Attrs::Conv { stride, padding } = *attrs else {
                unreachable!()
            };
            let g = conv_geom(kind, shapes[0], shapes[1], stride, padding)?;
            let mut out = vec![T::zero(); g.n * g.oh * g.ow * g.co];
            if kind == P::Conv2d {
                conv_forward(&g, inputs[0].data(), inputs[1].data(), &mut out);
            } else {
                deconv_forward(&g, inputs[0].data(), inputs[1].data(), &mut out);
            }
            out
        }
        P::AvgPool2d => {
            let Attrs::Pool { size } = *attrs else {
                unreachable!()
            };
            let x = inputs[0];
            let (n, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
            let (oh, ow) = (h / size, w / size);
            let scale = T::lit(1.0 / (size * size) as f64);
            let mut out = vec![T::zero(); n * oh * ow * c];
            let xd = x.data();
            for b in 0..n {
                for y in 0..h {
                    for xx in 0..w {
                        let src = ((b * h + y) * w + xx) * c;
                        let dst = ((b * oh + y / size) * ow + xx / size) * c;
                        for ch in 0..c {
                            out[dst + ch] = out[dst + ch] + xd[src + ch] * scale;
                        }
                    }
                }
            }
            out
        }
        P::LeakyRelu => {
            let Attrs::Slope(s) = *attrs else {
                unreachable!()
            };
            let s = T::lit(s);
            inputs[0]
                .data()
                .iter()
                .map(|&v| if v > T::zero() { v } else { v * s })
                .collect()
        }
        P::Sigmoid => inputs[0].data().iter().map(|&v| sigmoid(v)).collect(),
        P::Tanh => inputs[0].data().iter().map(|v| v.tanh()).collect(),
        P::Log => {
            let d = inputs[0].data();
            if let Some(&bad) = d.iter().find(|&&v| !(v > T::zero())) {
                return Err(DiffError::Domain {
                    op: "log",
                    value: bad.as_f64(),
                });
            }
            d.iter().map(|v| v.ln()).collect()
        }
        P::Concat => {
            let last = *out_shape.last().unwrap();
            let rows: usize = out_shape[..out_shape.len() - 1].iter().product();
            let mut out = Vec::with_capacity(rows * last);
            for r in 0..rows {
                for t in inputs {
                    let w = *t.shape().last().unwrap();
                    out.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
                }
            }
            out
        }
        P::Add => zip_map(inputs[0], inputs[1], |a, b| a + b),
        P::Mul => zip_map(inputs[0], inputs[1], |a, b| a * b),
        P::AddBias => {
            let b = inputs[1].data();
            let mut out = inputs[0].data().to_vec();
            for row in out.chunks_exact_mut(b.len()) {
                for (o, &bv) in row.iter_mut().zip(b) {
                    *o = *o + bv;
                }
            }
            out
        }
        P::Affine => {
            let Attrs::Affine { scale, shift } = *attrs else {
                unreachable!()
            };
            let (a, c) = (T::lit(scale), T::lit(shift));
            inputs[0].data().iter().map(|&v| a * v + c).collect()
        }
        P::Clamp => {
            let Attrs::Clamp { lo, hi } = *attrs else {
                unreachable!()
            };
            let (lo, hi) = (T::lit(lo), T::lit(hi));
            inputs[0]
                .data()
                .iter()
                .map(|&v| v.max(lo).min(hi))
                .collect()
        }
        P::Reshape => inputs[0].data().to_vec(),
        P::Sum => vec![inputs[0].data().iter().copied().sum()],
        P::Mean => {
            let d = inputs[0].data();
            vec![d.iter().copied().sum::<T>() / T::lit(d.len() as f64)]
        }
    };
    Ok(Tensor::from_parts_unchecked(out_shape, data))
}

/// Input gradients given the upstream gradient; entries are `None` where
/// `needs[i]` is false.
pub(crate) fn backward<T: Real>(
    kind: PrimitiveKind,
    attrs: &Attrs,
    inputs: &[&Tensor<T>],
    output: &Tensor<T>,
    grad: &[T],
    needs: &[bool],
) -> Vec<Option<Vec<T>>> {
    use PrimitiveKind as P;
    let mut res: Vec<Option<Vec<T>>> = vec![None; inputs.len()];
    match kind {
        P::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            if needs[0] {
                // dA = G B^T
                let mut da = vec![T::zero(); m * k];
                T::gemm_acc(
                    m,
                    n,
                    k,
                    grad,
                    (n as isize, 1),
                    b.data(),
                    (1, n as isize),
                    &mut da,
                );
                res[0] = Some(da);
            }
            if needs[1] {
                // dB = A^T G
                let mut db = vec![T::zero(); k * n];
                T::gemm_acc(
                    k,
                    m,
                    n,
                    a.data(),
                    (1, k as isize),
                    grad,
                    (n as isize, 1),
                    &mut db,
                );
                res[1] = Some(db);
            }
        }
        P::Conv2d | P::ConvTranspose2d => {
            let Attrs::Conv { stride, padding } = *attrs else {
                unreachable!()
            };
            let g = conv_geom(kind, inputs[0].shape(), inputs[1].shape(), stride, padding)
                .expect("validated in forward");
            let (x, w) = (inputs[0].data(), inputs[1].data());
            let mut dx = needs[0].then(|| vec![T::zero(); x.len()]);
            let mut dw = needs[1].then(|| vec![T::zero(); w.len()]);
            if kind == P::Conv2d {
                conv_backward(&g, x, w, grad, dx.as_deref_mut(), dw.as_deref_mut());
            } else {
                deconv_backward(&g, x, w, grad, dx.as_deref_mut(), dw.as_deref_mut());
            }
            res[0] = dx;
            res[1] = dw;
        }
        P::AvgPool2d => {
            let Attrs::Pool { size } = *attrs else {
                unreachable!()
            };
            let s = inputs[0].shape();
            let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
            let (oh, ow) = (h / size, w / size);
            let scale = T::lit(1.0 / (size * size) as f64);
            let mut dx = vec![T::zero(); n * h * w * c];
            for b in 0..n {
                for y in 0..h {
                    for xx in 0..w {
                        let dst = ((b * h + y) * w + xx) * c;
                        let src = ((b * oh + y / size) * ow + xx / size) * c;
                        for ch in 0..c {
                            dx[dst + ch] = grad[src + ch] * scale;
                        }
                    }
                }
            }
            res[0] = Some(dx);
        }
        P::LeakyRelu => {
            let Attrs::Slope(s) = *attrs else {
                unreachable!()
            };
            let s = T::lit(s);
            res[0] = Some(
                inputs[0]
                    .data()
                    .iter()
                    .zip(grad)
                    .map(|(&v, &g)| if v > T::zero() { g } else { g * s })
                    .collect(),
            );
        }
        P::Sigmoid => {
            res[0] = Some(
                output
                    .data()
                    .iter()
                    .zip(grad)
                    .map(|(&y, &g)| g * y * (T::one() - y))
                    .collect(),
            );
        }
        P::Tanh => {
            res[0] = Some(
                output
                    .data()
                    .iter()
                    .zip(grad)
                    .map(|(&y, &g)| g * (T::one() - y * y))
                    .collect(),
            );
        }
        P::Log => {
            res[0] = Some(
                inputs[0]
                    .data()
                    .iter()
                    .zip(grad)
                    .map(|(&x, &g)| g / x)
                    .collect(),
            );
        }
        P::Concat => {
            let last = *output.shape().last().unwrap();
            let rows = output.numel() / last;
            let mut offset = 0;
            for (i, t) in inputs.iter().enumerate() {
                let w = *t.shape().last().unwrap();
                if needs[i] {
                    let mut d = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        d.extend_from_slice(&grad[r * last + offset..r * last + offset + w]);
                    }
                    res[i] = Some(d);
                }
                offset += w;
            }
        }
        P::Add => {
            for i in 0..2 {
                if needs[i] {
                    res[i] = Some(grad.to_vec());
                }
            }
        }
        P::Mul => {
            let (a, b) = (inputs[0].data(), inputs[1].data());
            if needs[0] {
                res[0] = Some(grad.iter().zip(b).map(|(&g, &v)| g * v).collect());
            }
            if needs[1] {
                res[1] = Some(grad.iter().zip(a).map(|(&g, &v)| g * v).collect());
            }
        }
        P::AddBias => {
            if needs[0] {
                res[0] = Some(grad.to_vec());
            }
            if needs[1] {
                let w = inputs[1].numel();
                let mut db = vec![T::zero(); w];
                for row in grad.chunks_exact(w) {
                    for (d, &g) in db.iter_mut().zip(row) {
                        *d = *d + g;
                    }
                }
                res[1] = Some(db);
            }
        }
        P::Affine => {
            let Attrs::Affine { scale, .. } = *attrs else {
                unreachable!()
            };
            let a = T::lit(scale);
            res[0] = Some(grad.iter().map(|&g| g * a).collect());
        }
        P::Clamp => {
            let Attrs::Clamp { lo, hi } = *attrs else {
                unreachable!()
            };
            let (lo, hi) = (T::lit(lo), T::lit(hi));
            res[0] = Some(
                inputs[0]
                    .data()
                    .iter()
                    .zip(grad)
                    .map(|(&v, &g)| if v >= lo && v <= hi { g } else { T::zero() })
                    .collect(),
            );
        }
        P::Reshape => res[0] = Some(grad.to_vec()),
        P::Sum => res[0] = Some(vec![grad[0]; inputs[0].numel()]),
        P::Mean => {
            let n = inputs[0].numel();
            res[0] = Some(vec![grad[0] / T::lit(n as f64); n]);
        }
    }
    for (r, &need) in res.iter_mut().zip(needs) {
        if !need {
            *r = None;
        }
    }
    res
}

#[inline]
fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Vec<T> {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect()
}

fn matmul_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    T::gemm_acc(m, k, n, a, (k as isize, 1), b, (n as isize, 1), out);
}

fn conv_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], out: &mut [T]) {
    let ConvGeom {
        n,
        h,
        w: wd,
        ci,
        k,
        co,
        oh,
        ow,
        stride,
        pad_h,
        pad_w,
    } = *g;
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let dst = ((b * oh + oy) * ow + ox) * co;
                for ky in 0..k {
                    let Some(iy) = tap(oy, stride, ky, pad_h, h) else {
                        continue;
                    };
                    for kx in 0..k {
                        let Some(ix) = tap(ox, stride, kx, pad_w, wd) else {
                            continue;
                        };
                        let src = ((b * h + iy) * wd + ix) * ci;
                        for c in 0..ci {
                            let xv = x[src + c];
                            let wrow = ((ky * k + kx) * ci + c) * co;
                            for o in 0..co {
                                out[dst + o] = out[dst + o] + xv * w[wrow + o];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    grad: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let ConvGeom {
        n,
        h,
        w: wd,
        ci,
        k,
        co,
        oh,
        ow,
        stride,
        pad_h,
        pad_w,
    } = *g;
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let gsrc = ((b * oh + oy) * ow + ox) * co;
                let grow = &grad[gsrc..gsrc + co];
                for ky in 0..k {
                    let Some(iy) = tap(oy, stride, ky, pad_h, h) else {
                        continue;
                    };
                    for kx in 0..k {
                        let Some(ix) = tap(ox, stride, kx, pad_w, wd) else {
                            continue;
                        };
                        let xs = ((b * h + iy) * wd + ix) * ci;
                        for c in 0..ci {
                            let wrow = ((ky * k + kx) * ci + c) * co;
                            if let Some(dx) = dx.as_deref_mut() {
                                let mut acc = T::zero();
                                for o in 0..co {
                                    acc = acc + grow[o] * w[wrow + o];
                                }
                                dx[xs + c] = dx[xs + c] + acc;
                            }
                            if let Some(dw) = dw.as_deref_mut() {
                                let xv = x[xs + c];
                                for o in 0..co {
                                    dw[wrow + o] = dw[wrow + o] + xv * grow[o];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn deconv_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], out: &mut [T]) {
    let ConvGeom {
        n,
        h,
        w: wd,
        ci,
        k,
        co,
        oh,
        ow,
        stride,
        pad_h,
        pad_w,
    } = *g;
    for b in 0..n {
        for iy in 0..h {
            for ix in 0..wd {
                let src = ((b * h + iy) * wd + ix) * ci;
                for ky in 0..k {
                    let Some(oy) = tap(iy, stride, ky, pad_h, oh) else {
                        continue;
                    };
                    for kx in 0..k {
                        let Some(ox) = tap(ix, stride, kx, pad_w, ow) else {
                            continue;
                        };
                        let dst = ((b * oh + oy) * ow + ox) * co;
                        for c in 0..ci {
                            let xv = x[src + c];
                            let wrow = ((ky * k + kx) * ci + c) * co;
                            for o in 0..co {
                                out[dst + o] = out[dst + o] + xv * w[wrow + o];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn deconv_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    grad: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let ConvGeom {
        n,
        h,
        w: wd,
        ci,
        k,
        co,
        oh,
        ow,
        stride,
        pad_h,
        pad_w,
    } = *g;
    for b in 0..n {
        for iy in 0..h {
            for ix in 0..wd {
                let xs = ((b * h + iy) * wd + ix) * ci;
                for ky in 0..k {
                    let Some(oy) = tap(iy, stride, ky, pad_h, oh) else {
                        continue;
                    };
                    for kx in 0..k {
                        let Some(ox) = tap(ix, stride, kx, pad_w, ow) else {
                            continue;
                        };
                        let gsrc = ((b * oh + oy) * ow + ox) * co;
                        let grow = &grad[gsrc..gsrc + co];
                        for c in 0..ci {
                            let wrow = ((ky * k + kx) * ci + c) * co;
                            if let Some(dx) = dx.as_deref_mut() {
                                let mut acc = T::zero();
                                for o in 0..co {
                                    acc = acc + grow[o] * w[wrow + o];
                                }
                                dx[xs + c] = dx[xs + c] + acc;
                            }
                            if let Some(dw) = dw.as_deref_mut() {
                                let xv = x[xs + c];
                                for o in 0..co {
                                    dw[wrow + o] = dw[wrow + o] + xv * grow[o];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}
