//! Discriminator and classifier objectives, both binary cross-entropy.
//!
//! Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before the
//! logarithm, so every loss value is finite.

use thiserror::Error;

use crate::diffcore::{DiffError, Real, Tape, Tensor, Var};

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("{what} value {value} outside [0, 1]")]
    Range { what: &'static str, value: f64 },
    #[error("label shape {labels:?} does not match probability shape {probs:?}")]
    Shape {
        labels: Vec<usize>,
        probs: Vec<usize>,
    },
    #[error(transparent)]
    Diff(#[from] DiffError),
}

fn check_unit<T: Real>(what: &'static str, values: &[T]) -> Result<(), LossError> {
    // NaN fails both comparisons and is rejected here too.
    match values
        .iter()
        .find(|v| !(**v >= T::zero() && **v <= T::one()))
    {
        Some(v) => Err(LossError::Range {
            what,
            value: v.as_f64(),
        }),
        None => Ok(()),
    }
}

/// `-mean(t log p + (1 - t) log(1 - p))` with `t` a tensor of targets the
/// same shape as `probs`.
pub fn bce<T: Real>(tape: &mut Tape<T>, targets: Var, probs: Var) -> Result<Var, LossError> {
    if tape.shape(targets) != tape.shape(probs) {
        return Err(LossError::Shape {
            labels: tape.shape(targets).to_vec(),
            probs: tape.shape(probs).to_vec(),
        });
    }
    let complement = tape.value(targets).map(|t| T::one() - t);
    let complement = tape.constant(complement);
    let p = tape.clamp(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let log_p = tape.log(p)?;
    let q = tape.affine(p, -1.0, 1.0)?;
    let log_q = tape.log(q)?;
    let pos = tape.mul(targets, log_p)?;
    let neg = tape.mul(complement, log_q)?;
    let sum = tape.add(pos, neg)?;
    let mean = tape.mean(sum)?;
    Ok(tape.scale(mean, -1.0)?)
}

/// Discriminator loss against a single scalar target for the whole batch.
pub fn loss_d<T: Real>(tape: &mut Tape<T>, target: f64, scores: Var) -> Result<Var, LossError> {
    if !(0.0..=1.0).contains(&target) {
        return Err(LossError::Range {
            what: "discriminator target",
            value: target,
        });
    }
    check_unit("discriminator score", tape.value(scores).data())?;
    let t = Tensor::full(tape.shape(scores), T::lit(target));
    let t = tape.constant(t);
    bce(tape, t, scores)
}

/// Multi-label classification loss: per-label BCE averaged over batch and
/// labels. `labels` must be a `[batch, label_dim]` constant.
pub fn loss_c<T: Real>(tape: &mut Tape<T>, labels: Var, probs: Var) -> Result<Var, LossError> {
    check_unit("label", tape.value(labels).data())?;
    check_unit("class probability", tape.value(probs).data())?;
    bce(tape, labels, probs)
}

/// Value-only [`loss_c`] for tensors already off the tape.
pub fn loss_c_value<T: Real>(labels: &Tensor<T>, probs: &Tensor<T>) -> Result<f64, LossError> {
    let mut tape = Tape::new();
    let l = tape.constant(labels.clone());
    let p = tape.constant(probs.clone());
    let loss = loss_c(&mut tape, l, p)?;
    Ok(tape.value(loss).item())
}

/// Value-only [`loss_d`].
pub fn loss_d_value<T: Real>(target: f64, scores: &Tensor<T>) -> Result<f64, LossError> {
    let mut tape = Tape::new();
    let s = tape.constant(scores.clone());
    let loss = loss_d(&mut tape, target, s)?;
    Ok(tape.value(loss).item())
}
