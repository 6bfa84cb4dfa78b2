use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Generator,
    Discriminator,
    Classifier,
}

/// What a sample looks like: an NHWC image or a flat feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Layout {
    Image { channels: usize },
    Vector,
}

/// Architecture descriptor shared by the three players.
///
/// Image mode keeps the full topology: a strided stem or fully connected
/// projection, three residual stages separated by stride-2 (de)convolutions
/// or 2x2 average pooling, and two fully connected heads. Vector mode keeps
/// the same stage and block counts with fully connected layers in place of
/// every convolution, and pooling becomes the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub role: Role,
    pub layout: Layout,
    pub base_channels: usize,
    /// Image side length in pixels, or feature dimension in vector mode.
    pub spatial_scale: usize,
    pub residual_counts: [usize; 3],
    pub z_dim: usize,
    pub label_dim: usize,
    /// Kernel of the strided stem and the stage-transition deconvolutions.
    pub conv_kernel: usize,
    pub residual_kernel: usize,
    pub head_width: usize,
    /// Discriminator only: width of a label vector concatenated to the input
    /// of the first fully connected head (conditional-GAN baseline).
    pub cond_dim: usize,
    pub leaky_slope: f64,
}

/// One trainable tensor of a model: name, shape and Glorot fans.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamShape {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
    pub fan_out: usize,
    pub is_bias: bool,
}

impl ModelSpec {
    /// Desk-scale defaults for the given role in vector mode.
    pub fn vector(role: Role, dim: usize, z_dim: usize, label_dim: usize) -> Self {
        Self {
            role,
            layout: Layout::Vector,
            base_channels: 16,
            spatial_scale: dim,
            residual_counts: Self::default_residual_counts(role),
            z_dim,
            label_dim,
            conv_kernel: 5,
            residual_kernel: 3,
            head_width: 128,
            cond_dim: 0,
            leaky_slope: 0.1,
        }
    }

    pub fn image(
        role: Role,
        scale: usize,
        channels: usize,
        z_dim: usize,
        label_dim: usize,
    ) -> Self {
        Self {
            layout: Layout::Image { channels },
            spatial_scale: scale,
            ..Self::vector(role, scale, z_dim, label_dim)
        }
    }

    /// Block multipliers per stage: generator 2/4/2, discriminator and
    /// classifier 2/4/4.
    pub fn default_residual_counts(role: Role) -> [usize; 3] {
        match role {
            Role::Generator => [2, 4, 2],
            Role::Discriminator | Role::Classifier => [2, 4, 4],
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidSpec(m));
        if self.base_channels == 0 {
            return bad("base_channels must be positive".into());
        }
        if self.residual_counts.contains(&0) {
            return bad(format!(
                "residual_counts must all be >= 1, got {:?}",
                self.residual_counts
            ));
        }
        match self.layout {
            Layout::Image { channels } => {
                if self.spatial_scale < 8 || !self.spatial_scale.is_power_of_two() {
                    return bad(format!(
                        "spatial_scale in image mode must be a power of two >= 8, got {}",
                        self.spatial_scale
                    ));
                }
                if channels == 0 {
                    return bad("image channels must be positive".into());
                }
                if self.conv_kernel == 0 || self.residual_kernel == 0 {
                    return bad("kernel sizes must be positive".into());
                }
            }
            Layout::Vector => {
                if self.spatial_scale == 0 {
                    return bad("feature width must be positive".into());
                }
            }
        }
        if self.head_width == 0 {
            return bad("head_width must be positive".into());
        }
        match self.role {
            Role::Generator if self.z_dim == 0 => bad("generator needs z_dim > 0".into()),
            Role::Classifier if self.label_dim == 0 => bad("classifier needs label_dim > 0".into()),
            Role::Generator | Role::Classifier if self.cond_dim != 0 => {
                bad("cond_dim applies to the discriminator only".into())
            }
            _ => Ok(()),
        }
    }

    /// Per-sample data shape (generator output, discriminator/classifier input).
    pub fn sample_shape(&self) -> Vec<usize> {
        match self.layout {
            Layout::Image { channels } => vec![self.spatial_scale, self.spatial_scale, channels],
            Layout::Vector => vec![self.spatial_scale],
        }
    }

    /// Per-sample output shape of the model.
    pub fn output_shape(&self) -> Vec<usize> {
        match self.role {
            Role::Generator => self.sample_shape(),
            Role::Discriminator => vec![1],
            Role::Classifier => vec![self.label_dim],
        }
    }

    /// Side length after the stem and each pooling stage. Pooling is skipped
    /// once the side reaches 1.
    pub(crate) fn encoder_sides(&self) -> [usize; 4] {
        let stem = self.spatial_scale / 2;
        let p = |s: usize| if s >= 2 { s / 2 } else { s };
        let a = p(stem);
        let b = p(a);
        [stem, a, b, p(b)]
    }

    pub(crate) fn input_width(&self) -> usize {
        match self.role {
            Role::Generator => self.z_dim + self.label_dim,
            _ => self.sample_shape().iter().product(),
        }
    }

    /// Flattened feature width entering the first fully connected head.
    pub(crate) fn encoder_features(&self) -> usize {
        match self.layout {
            Layout::Image { .. } => {
                let side = self.encoder_sides()[3];
                side * side * self.base_channels
            }
            Layout::Vector => self.base_channels,
        }
    }

    /// Every trainable tensor in forward order.
    pub fn param_shapes(&self) -> Vec<ParamShape> {
        let c = self.base_channels;
        let mut out = Vec::new();
        let image = matches!(self.layout, Layout::Image { .. });
        let mut kernels: Vec<(String, usize, usize, usize)> = Vec::new();
        let mut layer = |name: String, k: usize, i: usize, o: usize| kernels.push((name, k, i, o));
        match self.role {
            Role::Generator => {
                let s4 = self.spatial_scale / 4;
                let fc_out = if image { s4 * s4 * c } else { c };
                layer("fc".into(), 0, self.input_width(), fc_out);
                for (stage, &count) in self.residual_counts.iter().enumerate() {
                    for blk in 0..count {
                        for half in ["a", "b"] {
                            layer(
                                format!("res{}.{blk}.{half}", stage + 1),
                                self.residual_kernel,
                                c,
                                c,
                            );
                        }
                    }
                    if stage < 2 {
                        layer(format!("up{}", stage + 1), self.conv_kernel, c, c);
                    }
                }
                let out_c = match self.layout {
                    Layout::Image { channels } => channels,
                    Layout::Vector => self.spatial_scale,
                };
                layer("out".into(), self.conv_kernel, c, out_c);
            }
            Role::Discriminator | Role::Classifier => {
                let in_c = match self.layout {
                    Layout::Image { channels } => channels,
                    Layout::Vector => self.spatial_scale,
                };
                layer("stem".into(), self.conv_kernel, in_c, c);
                for (stage, &count) in self.residual_counts.iter().enumerate() {
                    for blk in 0..count {
                        for half in ["a", "b"] {
                            layer(
                                format!("res{}.{blk}.{half}", stage + 1),
                                self.residual_kernel,
                                c,
                                c,
                            );
                        }
                    }
                }
                layer(
                    "head".into(),
                    0,
                    self.encoder_features() + self.cond_dim,
                    self.head_width,
                );
                let width = if self.role == Role::Discriminator {
                    1
                } else {
                    self.label_dim
                };
                layer("out".into(), 0, self.head_width, width);
            }
        }
        for (name, k, i, o) in kernels {
            let (shape, area) = if image && k > 0 {
                (vec![k, k, i, o], k * k)
            } else {
                (vec![i, o], 1)
            };
            out.push(ParamShape {
                name: format!("{name}.w"),
                shape,
                fan_in: area * i,
                fan_out: area * o,
                is_bias: false,
            });
            out.push(ParamShape {
                name: format!("{name}.b"),
                shape: vec![o],
                fan_in: area * i,
                fan_out: area * o,
                is_bias: true,
            });
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|p| p.shape.iter().product::<usize>())
            .sum()
    }
}
