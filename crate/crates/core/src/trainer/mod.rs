//! The three-player training loop: classifier pre-training, the
//! discriminator and generator steps, and the `gamma` controller.

mod gamma;
mod metrics;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{epoch_batches, sample_noise, DataError, LabeledDataset};
use crate::diffcore::{DiffError, Real, Tape, Tensor};
use crate::losses::{loss_c, loss_c_value, loss_d, LossError};
use crate::nn::{
    build_model, classifier_graph, discriminator_graph, generator_forward, generator_graph,
    ModelError, ModelSpec, ParamGrads, ParamSet, Role,
};
use crate::optim::{AdamState, OptimError};

pub use gamma::{update_gamma, GammaError, GammaState};
pub use metrics::{MetricsLog, MetricsRow, METRICS_HEADER};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite {what} at iteration {iteration}; state left at the last good iteration")]
    NonFinite { iteration: u64, what: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

impl From<DiffError> for TrainError {
    fn from(e: DiffError) -> Self {
        TrainError::Model(e.into())
    }
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Controlgan,
    Cgan,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "controlgan" => Ok(Mode::Controlgan),
            "cgan" => Ok(Mode::Cgan),
            other => Err(format!(
                "unknown mode `{other}` (expected controlgan or cgan)"
            )),
        }
    }
}

/// Hyperparameters of a run, including the architecture knobs shared by the
/// three models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub alpha: f64,
    pub t_d: f64,
    pub e_target: f64,
    pub r: f64,
    pub gamma_init: f64,
    pub lr_main: f64,
    pub lr_late: f64,
    pub epochs_before_decay: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub z_dim: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub pretrain_epochs: f64,
    /// Generator updates to run in total.
    pub iterations: u64,
    pub log_every: u64,
    /// Length of the `(lc_gen, lc_real)` history used for the measured ratio.
    pub e_window: usize,
    pub simultaneous_classifier: bool,
    pub base_channels: usize,
    pub residual_counts_g: [usize; 3],
    pub residual_counts_dc: [usize; 3],
    pub head_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Controlgan,
            alpha: 0.5,
            t_d: 1.0,
            e_target: 0.5,
            r: 0.01,
            gamma_init: 0.0,
            lr_main: 2e-4,
            lr_late: 5e-5,
            epochs_before_decay: 30,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            z_dim: 500,
            batch_size: 64,
            seed: 0,
            pretrain_epochs: 2.0,
            iterations: 5000,
            log_every: 100,
            e_window: 500,
            simultaneous_classifier: false,
            base_channels: 16,
            residual_counts_g: ModelSpec::default_residual_counts(Role::Generator),
            residual_counts_dc: ModelSpec::default_residual_counts(Role::Classifier),
            head_width: 128,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.t_d) {
            return bad(format!("t_d must lie in [0, 1], got {}", self.t_d));
        }
        for (name, v) in [
            ("e_target", self.e_target),
            ("r", self.r),
            ("lr_main", self.lr_main),
            ("lr_late", self.lr_late),
            ("adam_eps", self.adam_eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if !(self.gamma_init >= 0.0 && self.gamma_init.is_finite()) {
            return bad(format!("gamma_init must be >= 0, got {}", self.gamma_init));
        }
        if !(self.pretrain_epochs >= 0.0 && self.pretrain_epochs.is_finite()) {
            return bad(format!(
                "pretrain_epochs must be >= 0, got {}",
                self.pretrain_epochs
            ));
        }
        for (name, v) in [
            ("z_dim", self.z_dim),
            ("batch_size", self.batch_size),
            ("e_window", self.e_window),
            ("base_channels", self.base_channels),
            ("head_width", self.head_width),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.log_every == 0 {
            return bad("log_every must be positive".into());
        }
        Ok(())
    }

    /// Architectures of the generator, discriminator and classifier for data
    /// with the given per-sample shape: `[dim]` selects vector mode,
    /// `[side, side, channels]` image mode.
    pub fn model_specs(&self, sample_shape: &[usize], label_dim: usize) -> Result<[ModelSpec; 3]> {
        let make = |role: Role| -> Result<ModelSpec> {
            let mut spec = match *sample_shape {
                [dim] => ModelSpec::vector(role, dim, self.z_dim, label_dim),
                [h, w, c] if h == w => ModelSpec::image(role, h, c, self.z_dim, label_dim),
                _ => {
                    return Err(TrainError::Config(format!(
                        "unsupported sample shape {sample_shape:?}"
                    )))
                }
            };
            spec.base_channels = self.base_channels;
            spec.head_width = self.head_width;
            spec.residual_counts = match role {
                Role::Generator => self.residual_counts_g,
                _ => self.residual_counts_dc,
            };
            if role == Role::Discriminator && self.mode == Mode::Cgan {
                spec.cond_dim = label_dim;
            }
            spec.validate()?;
            Ok(spec)
        };
        Ok([
            make(Role::Generator)?,
            make(Role::Discriminator)?,
            make(Role::Classifier)?,
        ])
    }

    /// Learning rate in force during `epoch`.
    pub fn lr_at(&self, epoch: u64) -> f64 {
        if epoch >= self.epochs_before_decay {
            self.lr_late
        } else {
            self.lr_main
        }
    }
}

/// Independent sub-seed for the stream named `tag`.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T: Real = f64> {
    pub params_g: ParamSet<T>,
    pub params_d: ParamSet<T>,
    /// Frozen classifier; absent in the cGAN baseline.
    pub params_c: Option<ParamSet<T>>,
    pub adam_g: AdamState<T>,
    pub adam_d: AdamState<T>,
    /// Only used with `simultaneous_classifier`.
    pub adam_c: Option<AdamState<T>>,
    pub gamma_state: GammaState,
    pub iteration: u64,
    /// Noise source; advanced by every step.
    pub rng: ChaCha8Rng,
    pub classifier_evals: u64,
}

/// Losses of one discriminator update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DStep {
    pub loss_real: f64,
    pub loss_fake: f64,
    pub total: f64,
}

/// Losses of one generator update, unweighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GStep {
    pub loss_adv: f64,
    /// `None` without a classifier.
    pub loss_cls: Option<f64>,
}

/// Generator gradients together with the component losses they came from.
#[derive(Debug, Clone)]
pub struct GeneratorGrads<T: Real> {
    pub grads: ParamGrads<T>,
    pub loss_adv: f64,
    pub loss_cls: Option<f64>,
}

/// Observers of a running loop. They see the state read-only.
pub trait Callbacks<T: Real> {
    fn on_metrics(&mut self, _row: &MetricsRow) {}
    fn on_iteration(&mut self, _state: &TrainState<T>) {}
}

impl<T: Real> Callbacks<T> for () {}

impl<T: Real> Callbacks<T> for MetricsLog {
    fn on_metrics(&mut self, row: &MetricsRow) {
        self.rows.push(row.clone());
    }
}

fn check_binary(data: &LabeledDataset) -> Result<()> {
    if data.is_empty() {
        return Err(TrainError::Config("dataset is empty".into()));
    }
    if let Some(v) = data.labels.data().iter().find(|v| **v != 0.0 && **v != 1.0) {
        return Err(TrainError::Config(format!(
            "training labels must be binary, found {v}"
        )));
    }
    Ok(())
}

fn finite_grads<T: Real>(grads: &ParamGrads<T>) -> Option<&str> {
    grads
        .iter()
        .find(|(_, g)| !g.all_finite())
        .map(|(n, _)| n.as_str())
}

fn non_finite(iteration: u64, what: impl Into<String>) -> TrainError {
    TrainError::NonFinite {
        iteration,
        what: what.into(),
    }
}

/// Result of classifier pre-training.
#[derive(Debug, Clone)]
pub struct Pretrained<T: Real> {
    pub params: ParamSet<T>,
    /// Mean batch loss over the last epoch of updates (NaN without updates).
    pub final_loss: f64,
    pub iterations: u64,
}

/// Trains the classifier on real data for `pretrain_epochs` (fractional
/// epochs round to the nearest whole batch).
pub fn pretrain_classifier<T: Real>(
    config: &TrainConfig,
    data: &LabeledDataset,
) -> Result<Pretrained<T>> {
    check_binary(data)?;
    let [_, _, spec] = config.model_specs(data.sample_shape(), data.label_dim())?;
    let mut params = build_model::<T>(&spec, derive_seed(config.seed, "classifier"))?;
    let loss = fit_classifier(
        config,
        data,
        &mut params,
        config.pretrain_epochs,
        "classifier-batches",
    )?;
    Ok(Pretrained {
        params,
        final_loss: loss.0,
        iterations: loss.1,
    })
}

/// Minimizes the classification loss of `params` on `data`. Shared by
/// pre-training and the evaluation oracle.
pub(crate) fn fit_classifier<T: Real>(
    config: &TrainConfig,
    data: &LabeledDataset,
    params: &mut ParamSet<T>,
    epochs: f64,
    batch_tag: &str,
) -> Result<(f64, u64)> {
    let per_epoch = (data.len() / config.batch_size.max(1)) as u64;
    let total = (epochs * per_epoch as f64).round() as u64;
    if total == 0 {
        return Ok((f64::NAN, 0));
    }
    let batch_seed = derive_seed(config.seed, batch_tag);
    let mut adam = AdamState::new(
        params,
        config.lr_main,
        config.beta1,
        config.beta2,
        config.adam_eps,
    );
    let mut recent = Vec::new();
    let mut order = Vec::new();
    for it in 0..total {
        let (epoch, k) = (it / per_epoch, (it % per_epoch) as usize);
        if k == 0 {
            order = epoch_batches(data.len(), config.batch_size, batch_seed, epoch)?;
        }
        let (x, l) = data.batch::<T>(&order[k]);
        let (loss, grads) = classifier_grads(params, &x, &l)?;
        if !loss.is_finite() {
            return Err(non_finite(it, "classifier loss"));
        }
        if let Some(name) = finite_grads(&grads) {
            return Err(non_finite(it, format!("classifier gradient `{name}`")));
        }
        adam.apply(params, &grads)?;
        if total - it <= per_epoch {
            recent.push(loss);
        }
    }
    Ok((recent.iter().sum::<f64>() / recent.len() as f64, total))
}

fn classifier_grads<T: Real>(
    params: &ParamSet<T>,
    x: &Tensor<T>,
    l: &Tensor<T>,
) -> Result<(f64, ParamGrads<T>)> {
    let mut tape = Tape::new();
    let c = params.bind(&mut tape, true);
    let xv = tape.constant(x.clone());
    let lv = tape.constant(l.clone());
    let probs = classifier_graph(&mut tape, &c, xv)?;
    let loss = loss_c(&mut tape, lv, probs)?;
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss).item(), c.collect_grads(&tape, &grads)))
}

/// Fresh training state. `theta_c` is required in ControlGAN mode and
/// ignored in cGAN mode.
pub fn init_state<T: Real>(
    config: &TrainConfig,
    data: &LabeledDataset,
    theta_c: Option<ParamSet<T>>,
) -> Result<TrainState<T>> {
    config.validate()?;
    check_binary(data)?;
    if config.batch_size > data.len() {
        return Err(DataError::BatchTooLarge {
            batch: config.batch_size,
            len: data.len(),
        }
        .into());
    }
    let [gs, ds, cs] = config.model_specs(data.sample_shape(), data.label_dim())?;
    let params_c = match config.mode {
        Mode::Cgan => None,
        Mode::Controlgan => {
            let c = theta_c.ok_or_else(|| {
                TrainError::Config("controlgan mode needs a pretrained classifier".into())
            })?;
            if c.spec.sample_shape() != cs.sample_shape() || c.spec.label_dim != cs.label_dim {
                return Err(TrainError::Config(format!(
                    "classifier expects samples {:?} with {} labels, data has {:?} with {}",
                    c.spec.sample_shape(),
                    c.spec.label_dim,
                    cs.sample_shape(),
                    cs.label_dim
                )));
            }
            Some(c)
        }
    };
    let params_g = build_model::<T>(&gs, derive_seed(config.seed, "generator"))?;
    let params_d = build_model::<T>(&ds, derive_seed(config.seed, "discriminator"))?;
    let adam = |p: &ParamSet<T>| {
        AdamState::new(
            p,
            config.lr_main,
            config.beta1,
            config.beta2,
            config.adam_eps,
        )
    };
    let adam_c = match (&params_c, config.simultaneous_classifier) {
        (Some(c), true) => Some(adam(c)),
        _ => None,
    };
    Ok(TrainState {
        adam_g: adam(&params_g),
        adam_d: adam(&params_d),
        adam_c,
        params_g,
        params_d,
        params_c,
        gamma_state: GammaState::new(
            config.gamma_init,
            config.r,
            config.e_target,
            config.e_window,
        )?,
        iteration: 0,
        rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "noise")),
        classifier_evals: 0,
    })
}

/// Value of the discriminator objective for given scores.
pub fn discriminator_loss_value<T: Real>(
    alpha: f64,
    t_d: f64,
    real_scores: &Tensor<T>,
    fake_scores: &Tensor<T>,
) -> Result<f64> {
    let lr = crate::losses::loss_d_value(t_d, real_scores)?;
    let lf = crate::losses::loss_d_value(1.0 - t_d, fake_scores)?;
    Ok(alpha * lr + (1.0 - alpha) * lf)
}

fn cond_for<T: Real>(state: &TrainState<T>) -> bool {
    state.params_d.spec.cond_dim > 0
}

/// One Adam update of the discriminator on a real batch and a batch
/// generated from fresh noise with the same labels. The generator output is
/// a constant here.
pub fn discriminator_step<T: Real>(
    state: &mut TrainState<T>,
    config: &TrainConfig,
    x: &Tensor<T>,
    l: &Tensor<T>,
) -> Result<DStep> {
    let batch = x.shape()[0];
    let z = sample_noise::<T, _>(&mut state.rng, batch, config.z_dim);
    let fake = generator_forward(&state.params_g, &z, l)?;
    if !fake.all_finite() {
        return Err(non_finite(state.iteration, "generator output"));
    }
    let mut tape = Tape::new();
    let d = state.params_d.bind(&mut tape, true);
    let xv = tape.constant(x.clone());
    let fv = tape.constant(fake);
    let cond = cond_for(state).then(|| tape.constant(l.clone()));
    let sr = discriminator_graph(&mut tape, &d, xv, cond)?;
    let sf = discriminator_graph(&mut tape, &d, fv, cond)?;
    if !(tape.value(sr).all_finite() && tape.value(sf).all_finite()) {
        return Err(non_finite(state.iteration, "discriminator score"));
    }
    let lr = loss_d(&mut tape, config.t_d, sr)?;
    let lf = loss_d(&mut tape, 1.0 - config.t_d, sf)?;
    let wr = tape.scale(lr, config.alpha)?;
    let wf = tape.scale(lf, 1.0 - config.alpha)?;
    let total = tape.add(wr, wf)?;
    let out = DStep {
        loss_real: tape.value(lr).item(),
        loss_fake: tape.value(lf).item(),
        total: tape.value(total).item(),
    };
    if !out.total.is_finite() {
        return Err(non_finite(state.iteration, "discriminator loss"));
    }
    let grads = tape.backward(total)?;
    let grads = d.collect_grads(&tape, &grads);
    if let Some(name) = finite_grads(&grads) {
        return Err(non_finite(
            state.iteration,
            format!("discriminator gradient `{name}`"),
        ));
    }
    state.adam_d.apply(&mut state.params_d, &grads)?;
    Ok(out)
}

/// Gradient of `w_cls * L_C(l, C(G(z, l))) + w_adv * L_D(t_d, D(G(z, l)))`
/// with respect to the generator. The classification term is skipped when
/// `classifier` is `None`.
#[allow(clippy::too_many_arguments)]
pub fn generator_gradients<T: Real>(
    params_g: &ParamSet<T>,
    params_d: &ParamSet<T>,
    classifier: Option<&ParamSet<T>>,
    z: &Tensor<T>,
    l: &Tensor<T>,
    t_d: f64,
    w_cls: f64,
    w_adv: f64,
) -> Result<GeneratorGrads<T>> {
    let mut tape = Tape::new();
    let g = params_g.bind(&mut tape, true);
    let d = params_d.bind(&mut tape, false);
    let zv = tape.constant(z.clone());
    let lv = tape.constant(l.clone());
    let fake = generator_graph(&mut tape, &g, zv, lv)?;
    if !tape.value(fake).all_finite() {
        return Err(non_finite(0, "generator output"));
    }
    let cond = (params_d.spec.cond_dim > 0).then_some(lv);
    let score = discriminator_graph(&mut tape, &d, fake, cond)?;
    if !tape.value(score).all_finite() {
        return Err(non_finite(0, "discriminator score"));
    }
    let adv = loss_d(&mut tape, t_d, score)?;
    let mut total = tape.scale(adv, w_adv)?;
    let mut loss_cls = None;
    if let Some(c) = classifier {
        let c = c.bind(&mut tape, false);
        let probs = classifier_graph(&mut tape, &c, fake)?;
        let cls = loss_c(&mut tape, lv, probs)?;
        loss_cls = Some(tape.value(cls).item());
        let weighted = tape.scale(cls, w_cls)?;
        total = tape.add(weighted, total)?;
    }
    let grads = tape.backward(total)?;
    Ok(GeneratorGrads {
        grads: g.collect_grads(&tape, &grads),
        loss_adv: tape.value(adv).item(),
        loss_cls,
    })
}

/// One Adam update of the generator against
/// `gamma * L_C(l, C(G(z, l))) + L_D(t_d, D(G(z, l)))` with fresh noise.
/// The discriminator and classifier are constants.
pub fn generator_step<T: Real>(
    state: &mut TrainState<T>,
    config: &TrainConfig,
    l: &Tensor<T>,
) -> Result<GStep> {
    let z = sample_noise::<T, _>(&mut state.rng, l.shape()[0], config.z_dim);
    let out = generator_gradients(
        &state.params_g,
        &state.params_d,
        state.params_c.as_ref(),
        &z,
        l,
        config.t_d,
        state.gamma_state.gamma,
        1.0,
    )
    .map_err(|e| match e {
        TrainError::NonFinite { what, .. } => non_finite(state.iteration, what),
        other => other,
    })?;
    if out.loss_cls.is_some() {
        state.classifier_evals += 1;
    }
    let finite = out.loss_adv.is_finite() && out.loss_cls.is_none_or(f64::is_finite);
    if !finite {
        return Err(non_finite(state.iteration, "generator loss"));
    }
    if let Some(name) = finite_grads(&out.grads) {
        return Err(non_finite(
            state.iteration,
            format!("generator gradient `{name}`"),
        ));
    }
    state.adam_g.apply(&mut state.params_g, &out.grads)?;
    Ok(GStep {
        loss_adv: out.loss_adv,
        loss_cls: out.loss_cls,
    })
}

fn iterate<T: Real>(
    state: &mut TrainState<T>,
    config: &TrainConfig,
    x: &Tensor<T>,
    l: &Tensor<T>,
) -> Result<MetricsRow> {
    let dstep = discriminator_step(state, config, x, l)?;
    let lc_real = match &state.params_c {
        Some(c) => {
            let probs = crate::nn::classifier_forward(c, x)?;
            state.classifier_evals += 1;
            Some(loss_c_value(l, &probs)?)
        }
        None => None,
    };
    let gstep = generator_step(state, config, l)?;
    if let (Some(lc_gen), Some(lc_real)) = (gstep.loss_cls, lc_real) {
        if !lc_real.is_finite() {
            return Err(non_finite(state.iteration, "real-data classification loss"));
        }
        state.gamma_state.update(lc_gen, lc_real);
    }
    if let (Some(c), Some(adam)) = (state.params_c.as_mut(), state.adam_c.as_mut()) {
        let (loss, grads) = classifier_grads(c, x, l)?;
        if !loss.is_finite() || finite_grads(&grads).is_some() {
            return Err(non_finite(state.iteration, "classifier update"));
        }
        adam.apply(c, &grads)?;
    }
    state.iteration += 1;
    let classifier = state.params_c.is_some();
    let nan = f64::NAN;
    Ok(MetricsRow {
        iteration: state.iteration,
        loss_d_real: dstep.loss_real,
        loss_d_fake: dstep.loss_fake,
        loss_g_adv: gstep.loss_adv,
        loss_g_cls: gstep.loss_cls.unwrap_or(nan),
        gamma: if classifier {
            state.gamma_state.gamma
        } else {
            nan
        },
        lc_real: lc_real.unwrap_or(nan),
        measured_e: if classifier {
            let w = state.gamma_state.history.len().min(config.e_window);
            state.gamma_state.measured_e_ratio(w).unwrap_or(nan)
        } else {
            nan
        },
    })
}

/// Runs the loop from `state.iteration` up to `config.iterations`. On a
/// numerical failure `state` is restored to the start of the failing
/// iteration before the error is returned.
pub fn run<T: Real>(
    config: &TrainConfig,
    data: &LabeledDataset,
    state: &mut TrainState<T>,
    callbacks: &mut dyn Callbacks<T>,
) -> Result<()> {
    config.validate()?;
    let per_epoch = (data.len() / config.batch_size) as u64;
    if per_epoch == 0 {
        return Err(DataError::BatchTooLarge {
            batch: config.batch_size,
            len: data.len(),
        }
        .into());
    }
    let batch_seed = derive_seed(config.seed, "batches");
    let mut order: Option<(u64, Vec<Vec<usize>>)> = None;
    while state.iteration < config.iterations {
        let it = state.iteration;
        let (epoch, k) = (it / per_epoch, (it % per_epoch) as usize);
        if order.as_ref().is_none_or(|(e, _)| *e != epoch) {
            order = Some((
                epoch,
                epoch_batches(data.len(), config.batch_size, batch_seed, epoch)?,
            ));
        }
        let lr = config.lr_at(epoch);
        state.adam_d.lr = lr;
        state.adam_g.lr = lr;
        if let Some(a) = state.adam_c.as_mut() {
            a.lr = lr;
        }
        let (x, l) = data.batch::<T>(&order.as_ref().unwrap().1[k]);
        let backup = state.clone();
        let row = match iterate(state, config, &x, &l) {
            Ok(row) => row,
            Err(e) => {
                *state = backup;
                return Err(e);
            }
        };
        if state.iteration.is_multiple_of(config.log_every) || state.iteration == config.iterations {
            callbacks.on_metrics(&row);
        }
        callbacks.on_iteration(state);
    }
    Ok(())
}

/// Full ControlGAN run from a fresh state.
pub fn train<T: Real>(
    config: &TrainConfig,
    data: &LabeledDataset,
    theta_c: ParamSet<T>,
    callbacks: &mut dyn Callbacks<T>,
) -> Result<TrainState<T>> {
    if config.mode != Mode::Controlgan {
        return Err(TrainError::Config("train expects mode = controlgan".into()));
    }
    let mut state = init_state(config, data, Some(theta_c))?;
    run(config, data, &mut state, callbacks)?;
    Ok(state)
}

/// Conditional-GAN baseline: labels enter the generator input and the
/// discriminator's first fully connected layer; no classifier, no `gamma`.
pub fn train_cgan_baseline<T: Real>(
    config: &TrainConfig,
    data: &LabeledDataset,
    callbacks: &mut dyn Callbacks<T>,
) -> Result<TrainState<T>> {
    if config.mode != Mode::Cgan {
        return Err(TrainError::Config(
            "train_cgan_baseline expects mode = cgan".into(),
        ));
    }
    let mut state = init_state(config, data, None)?;
    run(config, data, &mut state, callbacks)?;
    Ok(state)
}
