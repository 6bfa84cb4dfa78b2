use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::data::{load_image_dataset, make_synthetic, LabeledDataset, SyntheticSpec};
use crate::diffcore::DType;
use crate::trainer::{Mode, TrainConfig};

/// Value of `dataset` selecting the built-in synthetic task.
pub const SYNTHETIC: &str = "synthetic";

macro_rules! run_config {
    ($($field:ident : $ty:ty),* $(,)?) => {
        /// Flat run configuration: dataset keys, artifact keys, and one key per
        /// [`TrainConfig`] field. Every key but `dataset` has a default.
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct RunConfig {
            /// `synthetic`, or an image directory (relative to the config file).
            pub dataset: String,
            #[serde(skip_serializing_if = "Option::is_none")]
            pub label_file: Option<String>,
            pub image_scale: usize,
            pub image_channels: usize,
            pub synthetic_dim: usize,
            pub synthetic_labels: usize,
            pub synthetic_sigma: f64,
            pub synthetic_per_combo: usize,
            pub synthetic_seed: u64,
            pub precision: DType,
            /// Iterations between `latest.ckpt` refreshes; 0 disables them.
            pub checkpoint_every: u64,
            $(pub $field: $ty,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                let t = TrainConfig::default();
                Self {
                    dataset: String::new(),
                    label_file: None,
                    image_scale: 32,
                    image_channels: 3,
                    synthetic_dim: 2,
                    synthetic_labels: 2,
                    synthetic_sigma: 0.15,
                    synthetic_per_combo: 2000,
                    synthetic_seed: 1,
                    precision: DType::F64,
                    checkpoint_every: 1000,
                    $($field: t.$field,)*
                }
            }
        }

        impl RunConfig {
            pub fn train_config(&self) -> TrainConfig {
                TrainConfig { $($field: self.$field.clone(),)* }
            }

            pub fn set_train_config(&mut self, t: &TrainConfig) {
                $(self.$field = t.$field.clone();)*
            }
        }
    };
}

run_config! {
    mode: Mode,
    alpha: f64,
    t_d: f64,
    e_target: f64,
    r: f64,
    gamma_init: f64,
    lr_main: f64,
    lr_late: f64,
    epochs_before_decay: u64,
    beta1: f64,
    beta2: f64,
    adam_eps: f64,
    z_dim: usize,
    batch_size: usize,
    seed: u64,
    pretrain_epochs: f64,
    iterations: u64,
    log_every: u64,
    e_window: usize,
    simultaneous_classifier: bool,
    base_channels: usize,
    residual_counts_g: [usize; 3],
    residual_counts_dc: [usize; 3],
    head_width: usize,
}

impl RunConfig {
    /// Parses and validates a config file's text. Errors carry the line and
    /// the offending key.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string().trim_end().into()))?;
        if cfg.dataset.is_empty() {
            return Err(CliError::Config(
                "missing required key `dataset` (an image directory or `synthetic`)".into(),
            ));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.dataset != SYNTHETIC && self.label_file.is_none() {
            return Err(CliError::Config(
                "key `label_file` is required for an image dataset".into(),
            ));
        }
        Ok(())
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec::standard(
            self.synthetic_dim,
            self.synthetic_labels,
            self.synthetic_sigma,
            self.synthetic_per_combo,
            self.synthetic_seed,
        )
    }

    /// Builds or loads the dataset; relative paths resolve against `base`.
    pub fn load_dataset(&self, base: &Path) -> Result<LabeledDataset, CliError> {
        if self.dataset == SYNTHETIC {
            return Ok(make_synthetic(&self.synthetic_spec())?);
        }
        let resolve = |p: &str| -> PathBuf {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let label_file = self.label_file.as_deref().expect("validated");
        Ok(load_image_dataset(
            &resolve(&self.dataset),
            &resolve(label_file),
            self.image_scale,
            self.image_channels,
        )?)
    }
}
