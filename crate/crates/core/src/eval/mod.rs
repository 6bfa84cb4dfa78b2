//! Evaluation against an independent oracle classifier, label sweeps, and
//! the raster/CSV emitters.

mod report;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{make_synthetic, sample_noise, DataError, LabeledDataset, SyntheticDescriptor};
use crate::diffcore::Tensor;
use crate::losses::{loss_c_value, LossError};
use crate::nn::{build_model, classifier_forward, generator_forward, ModelError, ParamSet, Role};
use crate::trainer::{derive_seed, fit_classifier, TrainConfig, TrainError};

pub use report::{emit_report, EvalReport, ReportRow, REPORT_HEADER};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0}")]
    Invalid(String),
    #[error("grid of {rows}x{cols} needs {expected} samples, got {got}")]
    Count {
        rows: usize,
        cols: usize,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// Evaluation-only classifier and its score on the held-out part of its data.
#[derive(Debug, Clone)]
pub struct Oracle {
    pub params: ParamSet<f64>,
    pub heldout_loss: f64,
    /// Accuracy per label at a 0.5 threshold.
    pub heldout_accuracy: Vec<f64>,
}

/// Fraction of `data` kept aside for scoring the oracle.
pub const ORACLE_HOLDOUT: f64 = 0.2;

/// Trains a classifier on `data` minus a seed-chosen held-out fifth and
/// scores it on that fifth. Pass data the generator never saw (for the
/// synthetic task, see [`independent_synthetic`]).
pub fn train_oracle(
    data: &LabeledDataset,
    config: &TrainConfig,
    epochs: f64,
    seed: u64,
) -> Result<Oracle> {
    if data.is_empty() {
        return Err(EvalError::Invalid("oracle needs data".into()));
    }
    let (train_idx, test_idx) = split(data.len(), seed);
    if train_idx.len() < config.batch_size || test_idx.is_empty() {
        return Err(EvalError::Invalid(format!(
            "{} samples too few for an oracle with batch size {}",
            data.len(),
            config.batch_size
        )));
    }
    let subset = |idx: &[usize]| LabeledDataset {
        samples: data.samples.select_rows(idx),
        labels: data.labels.select_rows(idx),
        descriptor: data.descriptor.clone(),
    };
    let train = subset(&train_idx);
    let test = subset(&test_idx);
    let oracle_config = TrainConfig {
        seed: derive_seed(seed, "oracle"),
        ..config.clone()
    };
    let [_, _, spec] = oracle_config.model_specs(data.sample_shape(), data.label_dim())?;
    let mut params = build_model::<f64>(&spec, derive_seed(seed, "oracle-init"))?;
    fit_classifier(
        &oracle_config,
        &train,
        &mut params,
        epochs,
        "oracle-batches",
    )?;
    let probs = classifier_forward(&params, &test.samples)?;
    Ok(Oracle {
        heldout_loss: loss_c_value(&test.labels, &probs)?,
        heldout_accuracy: per_label_accuracy(&test.labels, &probs),
        params,
    })
}

fn split(len: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        seed,
        "oracle-split",
    )));
    let n_test = ((len as f64) * ORACLE_HOLDOUT).round() as usize;
    let test = order.split_off(len - n_test);
    (order, test)
}

/// A fresh draw of the same synthetic task with its own seed.
pub fn independent_synthetic(desc: &SyntheticDescriptor, seed: u64) -> Result<LabeledDataset> {
    let mut spec = desc.spec.clone();
    spec.seed = derive_seed(seed, "oracle-data");
    Ok(make_synthetic(&spec)?)
}

fn per_label_accuracy(labels: &Tensor<f64>, probs: &Tensor<f64>) -> Vec<f64> {
    let k = labels.shape()[1];
    let n = labels.shape()[0];
    let mut hits = vec![0usize; k];
    for (l, p) in labels.data().chunks(k).zip(probs.data().chunks(k)) {
        for j in 0..k {
            if (p[j] >= 0.5) == (l[j] >= 0.5) {
                hits[j] += 1;
            }
        }
    }
    hits.into_iter().map(|h| h as f64 / n as f64).collect()
}

/// Oracle loss and accuracy of generated samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Fidelity {
    pub loss: f64,
    pub accuracy: f64,
    pub per_label_accuracy: Vec<f64>,
}

/// Generates `n_z` samples for each label vector and scores them with the
/// oracle (mean BCE, accuracy at 0.5).
pub fn label_fidelity(
    gen: &ParamSet<f64>,
    oracle: &ParamSet<f64>,
    labels: &[Vec<f64>],
    n_z: usize,
    seed: u64,
) -> Result<Fidelity> {
    fidelity_of(
        |z, l| Ok(generator_forward(gen, z, l)?),
        gen.spec.z_dim,
        oracle,
        labels,
        n_z,
        seed,
    )
}

/// [`label_fidelity`] over any sample source `f(z, l)`.
pub fn fidelity_of(
    f: impl Fn(&Tensor<f64>, &Tensor<f64>) -> Result<Tensor<f64>>,
    z_dim: usize,
    oracle: &ParamSet<f64>,
    labels: &[Vec<f64>],
    n_z: usize,
    seed: u64,
) -> Result<Fidelity> {
    expect(oracle, Role::Classifier)?;
    if labels.is_empty() || n_z == 0 {
        return Err(EvalError::Invalid(
            "need at least one label vector and n_z > 0".into(),
        ));
    }
    let k = oracle.spec.label_dim;
    if let Some(bad) = labels.iter().find(|l| l.len() != k) {
        return Err(EvalError::Invalid(format!(
            "label vector of length {} for an oracle with {k} labels",
            bad.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "fidelity"));
    let mut all_l = Vec::new();
    let mut all_p = Vec::new();
    for l in labels {
        let z = sample_noise::<f64, _>(&mut rng, n_z, z_dim);
        let lt = Tensor::new(vec![n_z, k], l.repeat(n_z)).expect("label batch shape");
        let x = f(&z, &lt)?;
        let p = classifier_forward(oracle, &x)?;
        all_l.extend_from_slice(lt.data());
        all_p.extend_from_slice(p.data());
    }
    let n = labels.len() * n_z;
    let lt = Tensor::new(vec![n, k], all_l).expect("label shape");
    let pt = Tensor::new(vec![n, k], all_p).expect("prob shape");
    let per_label = per_label_accuracy(&lt, &pt);
    Ok(Fidelity {
        loss: loss_c_value(&lt, &pt)?,
        accuracy: per_label.iter().sum::<f64>() / k as f64,
        per_label_accuracy: per_label,
    })
}

fn expect(p: &ParamSet<f64>, role: Role) -> Result<()> {
    if p.spec.role != role {
        return Err(EvalError::Invalid(format!(
            "expected a {role:?} parameter set, got {:?}",
            p.spec.role
        )));
    }
    Ok(())
}

pub const DEFAULT_SWEEP_VALUES: [f64; 7] = [-1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub label_index: usize,
    pub values: Vec<f64>,
    /// Label template; entry `label_index` is overwritten by each value.
    pub fixed_labels: Vec<f64>,
    pub n_z: usize,
    pub seed: u64,
}

impl SweepSpec {
    pub fn new(label_index: usize, fixed_labels: Vec<f64>, n_z: usize, seed: u64) -> Self {
        Self {
            label_index,
            values: DEFAULT_SWEEP_VALUES.to_vec(),
            fixed_labels,
            n_z,
            seed,
        }
    }

    pub fn validate(&self, label_dim: usize) -> Result<()> {
        if self.values.is_empty() {
            return Err(EvalError::Invalid("sweep needs at least one value".into()));
        }
        if let Some(w) = self.values.windows(2).find(|w| !(w[0] < w[1])) {
            return Err(EvalError::Invalid(format!(
                "sweep values must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(EvalError::Invalid("sweep values must be finite".into()));
        }
        if self.label_index >= label_dim {
            return Err(EvalError::Invalid(format!(
                "label index {} out of range for {label_dim} labels",
                self.label_index
            )));
        }
        if self.fixed_labels.len() != label_dim {
            return Err(EvalError::Invalid(format!(
                "label template has length {}, expected {label_dim}",
                self.fixed_labels.len()
            )));
        }
        if self.n_z == 0 {
            return Err(EvalError::Invalid("n_z must be positive".into()));
        }
        Ok(())
    }

    /// Label vector used for `value`.
    pub fn labels_at(&self, value: f64) -> Vec<f64> {
        let mut l = self.fixed_labels.clone();
        l[self.label_index] = value;
        l
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub samples: Tensor<f64>,
    /// Mean projection onto the swept label's direction (synthetic data only).
    pub mean_projection: Option<f64>,
}

/// The noise batch shared by every value of a sweep.
pub fn sweep_noise(spec: &SweepSpec, z_dim: usize) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "sweep"));
    sample_noise(&mut rng, spec.n_z, z_dim)
}

/// Generates `n_z` samples per value with one shared noise batch.
pub fn sweep(
    gen: &ParamSet<f64>,
    spec: &SweepSpec,
    truth: Option<&SyntheticDescriptor>,
) -> Result<Vec<SweepPoint>> {
    expect(gen, Role::Generator)?;
    spec.validate(gen.spec.label_dim)?;
    let z = sweep_noise(spec, gen.spec.z_dim);
    let k = gen.spec.label_dim;
    spec.values
        .iter()
        .map(|&value| {
            let l = Tensor::new(vec![spec.n_z, k], spec.labels_at(value).repeat(spec.n_z))
                .expect("label batch shape");
            let samples = generator_forward(gen, &z, &l)?;
            let mean_projection = truth.map(|d| {
                let w = samples.numel() / spec.n_z;
                samples
                    .data()
                    .chunks(w)
                    .map(|s| d.projection(s, spec.label_index))
                    .sum::<f64>()
                    / spec.n_z as f64
            });
            Ok(SweepPoint {
                value,
                samples,
                mean_projection,
            })
        })
        .collect()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Tiles `[n, h, w, c]` samples in `[-1, 1]` row-major into one 8-bit image
/// (`c` of 1 or 3) and writes it; the format follows the file extension.
pub fn emit_grid(samples: &Tensor<f64>, rows: usize, cols: usize, path: &Path) -> Result<()> {
    let img = grid_image(samples, rows, cols)?;
    img.save(path)?;
    Ok(())
}

pub fn grid_image(samples: &Tensor<f64>, rows: usize, cols: usize) -> Result<image::DynamicImage> {
    let shape = samples.shape();
    let &[n, h, w, c] = shape else {
        return Err(EvalError::Invalid(format!(
            "grid needs image samples [n, h, w, c], got {shape:?}"
        )));
    };
    if rows * cols != n {
        return Err(EvalError::Count {
            rows,
            cols,
            expected: rows * cols,
            got: n,
        });
    }
    if c != 1 && c != 3 {
        return Err(EvalError::Invalid(format!(
            "grid needs 1 or 3 channels, got {c}"
        )));
    }
    let (gw, gh) = (cols * w, rows * h);
    let mut buf = vec![0u8; gw * gh * c];
    for (i, s) in samples.data().chunks(h * w * c).enumerate() {
        let (ty, tx) = (i / cols, i % cols);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let v = s[(y * w + x) * c + ch];
                    let q = ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8;
                    buf[((ty * h + y) * gw + tx * w + x) * c + ch] = q;
                }
            }
        }
    }
    let (gw, gh) = (gw as u32, gh as u32);
    Ok(if c == 1 {
        image::DynamicImage::ImageLuma8(
            image::GrayImage::from_raw(gw, gh, buf).expect("buffer size"),
        )
    } else {
        image::DynamicImage::ImageRgb8(image::RgbImage::from_raw(gw, gh, buf).expect("buffer size"))
    })
}
