use std::collections::VecDeque;

use thiserror::Error;

use super::TrainError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GammaError {
    #[error("window of {window} exceeds history of {len} entries")]
    Window { window: usize, len: usize },
    #[error("window must be positive")]
    EmptyWindow,
    #[error("mean real-data classification loss is zero; ratio undefined")]
    Undefined,
}

/// Weight on the generator's classification term and its controller.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaState {
    pub gamma: f64,
    pub r: f64,
    pub e_target: f64,
    /// Most recent `(lc_gen, lc_real)` pairs, oldest first.
    pub history: VecDeque<(f64, f64)>,
    pub capacity: usize,
}

impl GammaState {
    pub fn new(gamma: f64, r: f64, e_target: f64, capacity: usize) -> Result<Self, TrainError> {
        if !(r > 0.0 && e_target > 0.0 && gamma >= 0.0 && capacity > 0) {
            return Err(TrainError::Config(format!(
                "gamma state needs r > 0, e_target > 0, gamma >= 0 and capacity > 0 \
                 (got r={r}, e_target={e_target}, gamma={gamma}, capacity={capacity})"
            )));
        }
        Ok(Self {
            gamma,
            r,
            e_target,
            history: VecDeque::with_capacity(capacity),
            capacity,
        })
    }

    /// `gamma <- max(0, gamma + r (lc_gen - E lc_real))`, then records the pair.
    pub fn update(&mut self, lc_gen: f64, lc_real: f64) {
        self.gamma = (self.gamma + self.r * (lc_gen - self.e_target * lc_real)).max(0.0);
        if self.history.len() == self.capacity {
            self.history.pop_front();
        }
        self.history.push_back((lc_gen, lc_real));
    }

    /// `mean(lc_gen) / mean(lc_real)` over the newest `window` pairs.
    pub fn measured_e_ratio(&self, window: usize) -> Result<f64, GammaError> {
        if window == 0 {
            return Err(GammaError::EmptyWindow);
        }
        if window > self.history.len() {
            return Err(GammaError::Window {
                window,
                len: self.history.len(),
            });
        }
        let (g, r) = self
            .history
            .iter()
            .skip(self.history.len() - window)
            .fold((0.0, 0.0), |(a, b), (g, r)| (a + g, b + r));
        if r == 0.0 {
            return Err(GammaError::Undefined);
        }
        Ok(g / r)
    }
}

/// Functional form of [`GammaState::update`].
pub fn update_gamma(mut gs: GammaState, lc_gen: f64, lc_real: f64) -> GammaState {
    gs.update(lc_gen, lc_real);
    gs
}
