use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DataError, DatasetDescriptor, LabeledDataset};
use crate::diffcore::Tensor;

/// Gaussian clusters whose labels act as additive unit-vector offsets:
/// `x = base + sum_k l_k mu_k + N(0, sigma^2 I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub label_dim: usize,
    /// `label_dim` unit vectors of length `dim`.
    pub label_directions: Vec<Vec<f64>>,
    /// Samples cycle through these centers.
    pub base_centers: Vec<Vec<f64>>,
    pub noise_sigma: f64,
    pub samples_per_combo: usize,
    pub seed: u64,
}

const MAX_LABELS: usize = 16;

impl SyntheticSpec {
    /// Axis-aligned directions when `label_dim <= dim` (seeded random unit
    /// vectors otherwise) and one base center that puts the label hypercube's
    /// midpoint at the origin.
    pub fn standard(
        dim: usize,
        label_dim: usize,
        noise_sigma: f64,
        samples_per_combo: usize,
        seed: u64,
    ) -> Self {
        let label_directions: Vec<Vec<f64>> = if label_dim <= dim {
            (0..label_dim)
                .map(|k| (0..dim).map(|j| if j == k { 1.0 } else { 0.0 }).collect())
                .collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d1c0);
            let sphere = UnitSphereN(dim);
            (0..label_dim).map(|_| sphere.sample(&mut rng)).collect()
        };
        let base: Vec<f64> = (0..dim)
            .map(|j| -0.5 * label_directions.iter().map(|mu| mu[j]).sum::<f64>())
            .collect();
        Self {
            dim,
            label_dim,
            label_directions,
            base_centers: vec![base],
            noise_sigma,
            samples_per_combo,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidSpec(m));
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.label_dim == 0 || self.label_dim > MAX_LABELS {
            return bad(format!(
                "label_dim must be in 1..={MAX_LABELS}, got {}",
                self.label_dim
            ));
        }
        if self.label_directions.len() != self.label_dim {
            return bad(format!(
                "{} label directions for label_dim {}",
                self.label_directions.len(),
                self.label_dim
            ));
        }
        for (k, mu) in self.label_directions.iter().enumerate() {
            if mu.len() != self.dim {
                return bad(format!(
                    "direction {k} has length {}, expected {}",
                    mu.len(),
                    self.dim
                ));
            }
            let norm = mu.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return bad(format!("direction {k} has norm {norm}, expected 1"));
            }
        }
        if self.base_centers.is_empty() || self.base_centers.iter().any(|c| c.len() != self.dim) {
            return bad(format!(
                "base_centers must be non-empty vectors of length {}",
                self.dim
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            ));
        }
        if self.samples_per_combo == 0 {
            return bad("samples_per_combo must be positive".into());
        }
        Ok(())
    }

    /// Every binary label vector, in counting order (label 0 is the low bit).
    pub fn label_combos(&self) -> Vec<Vec<f64>> {
        label_combos(self.label_dim)
    }
}

pub(crate) fn label_combos(label_dim: usize) -> Vec<Vec<f64>> {
    (0..1usize << label_dim)
        .map(|c| (0..label_dim).map(|k| ((c >> k) & 1) as f64).collect())
        .collect()
}

struct UnitSphereN(usize);

impl Distribution<Vec<f64>> for UnitSphereN {
    fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let normal = Normal::new(0.0, 1.0).unwrap();
        loop {
            let v: Vec<f64> = (0..self.0).map(|_| normal.sample(rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-12 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    }
}

/// Ground truth retained with a synthetic dataset: the spec and the uniform
/// scale that mapped raw points into `[-1, 1]` (`normalized = raw / scale`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDescriptor {
    pub spec: SyntheticSpec,
    pub scale: f64,
}

impl SyntheticDescriptor {
    pub fn mean_base(&self) -> Vec<f64> {
        let n = self.spec.base_centers.len() as f64;
        (0..self.spec.dim)
            .map(|j| self.spec.base_centers.iter().map(|c| c[j]).sum::<f64>() / n)
            .collect()
    }

    /// Expected raw displacement `sum_k l_k mu_k` for a (possibly real-valued) label.
    pub fn expected_offset(&self, labels: &[f64]) -> Vec<f64> {
        (0..self.spec.dim)
            .map(|j| {
                labels
                    .iter()
                    .zip(&self.spec.label_directions)
                    .map(|(l, mu)| l * mu[j])
                    .sum()
            })
            .collect()
    }

    pub fn denormalize(&self, sample: &[f64]) -> Vec<f64> {
        sample.iter().map(|v| v * self.scale).collect()
    }

    /// Scalar projection of `(raw sample - base)` onto `mu_k`; its expectation
    /// over the data for label vector `l` is `l_k` (orthonormal directions).
    pub fn projection(&self, normalized_sample: &[f64], k: usize) -> f64 {
        let base = self.mean_base();
        normalized_sample
            .iter()
            .zip(&base)
            .zip(&self.spec.label_directions[k])
            .map(|((s, b), m)| (s * self.scale - b) * m)
            .sum()
    }
}

/// Draws `samples_per_combo` points for each binary label vector, ordered by
/// combination, then scales everything by `max(1, max |x|)`.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<LabeledDataset, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let combos = spec.label_combos();
    let n = combos.len() * spec.samples_per_combo;
    let mut raw = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n * spec.label_dim);
    let normal = (spec.noise_sigma > 0.0).then(|| Normal::new(0.0, spec.noise_sigma).unwrap());
    for combo in &combos {
        for i in 0..spec.samples_per_combo {
            let base = &spec.base_centers[i % spec.base_centers.len()];
            for j in 0..spec.dim {
                let mut v = base[j];
                for (l, mu) in combo.iter().zip(&spec.label_directions) {
                    v += l * mu[j];
                }
                if let Some(normal) = &normal {
                    v += normal.sample(&mut rng);
                }
                raw.push(v);
            }
            labels.extend_from_slice(combo);
        }
    }
    let max_abs = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = max_abs.max(1.0);
    let samples: Vec<f64> = raw.iter().map(|v| v / scale).collect();
    Ok(LabeledDataset {
        samples: Tensor::new(vec![n, spec.dim], samples).expect("consistent shape"),
        labels: Tensor::new(vec![n, spec.label_dim], labels).expect("consistent shape"),
        descriptor: DatasetDescriptor::Synthetic(SyntheticDescriptor {
            spec: spec.clone(),
            scale,
        }),
    })
}
