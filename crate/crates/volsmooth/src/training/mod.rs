//! Loss suite and training loops for the smoothing operator.
//!
//! The training objective is a weighted sum of
//!
//! - a Vega-weighted root-mean-square relative fit error at the input
//!   quotes, `L_fit = √((1/|π|) Σ w_𝒱 ((v̂−v)/v)²)` with
//!   `w_𝒱 = (𝒱/mean 𝒱) ∨ 1`,
//! - a butterfly penalty `(1/|π|) Σ (But(x) − ε)⁻` over a rectilinear
//!   `(ρ, z)` grid, with strike derivatives formed by finite differences
//!   in `z` chain-ruled through `k = z·ρ`,
//! - a scale-invariant calendar penalty on the ratio
//!   `v̂(ρ_{i+1}, z) / v̂(ρ_i, ρ_{i+1} z / ρ_i)` between consecutive grid
//!   maturities, which must stay above `ρ_i/ρ_{i+1} + ε`,
//! - curvature regularizers: the RMS of second finite differences of `v̂`
//!   along `ρ` and along `z`.
//!
//! All penalties use the training margin `ε = 1e−3`; validation proper
//! (threshold 0) lives in [`crate::arbitrage`]. Gradients with respect to
//! model parameters flow analytically through every term via
//! [`crate::gno::gno_backward`]; the optimizer is AdamW with decoupled
//! weight decay. Training subsamples the input quotes of each surface and
//! jitters the penalty-grid nodes every visit so the operator never sees
//! the same discretization twice.

mod losses;
mod optimizer;
mod trainer;

pub use losses::{
    butterfly_loss, calendar_loss, fit_loss, reg_losses, total_loss, LossTerms,
};
pub use optimizer::{adamw_step, AdamWState};
pub use trainer::{finetune, train, EpochRecord};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::black_scholes::BsError;
use crate::gno::GnoError;
use crate::market_data::Domain;

/// Training margin for the butterfly and calendar penalties.
pub const TRAIN_EPSILON: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("length mismatch: got {got}, want {want}")]
    ShapeError { got: usize, want: usize },
    #[error("non-finite gradient; optimizer step aborted")]
    NonFiniteGradient,
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Gno(#[from] GnoError),
    #[error(transparent)]
    BlackScholes(#[from] BsError),
}

/// Weights of the loss terms.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_fit: f64,
    pub lambda_cal: f64,
    pub lambda_but: f64,
    pub lambda_reg_rho: f64,
    pub lambda_reg_z: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_fit: 1.0,
            lambda_cal: 10.0,
            lambda_but: 10.0,
            lambda_reg_rho: 0.01,
            lambda_reg_z: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), TrainError> {
        let all = [
            self.lambda_fit,
            self.lambda_cal,
            self.lambda_but,
            self.lambda_reg_rho,
            self.lambda_reg_z,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(TrainError::InvalidConfig(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Hyperparameters of the training loop.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Surfaces whose gradients are accumulated into one optimizer step.
    pub pseudo_batch: usize,
    /// Subsample fraction of input quotes, drawn uniformly per surface.
    pub subsample_range: [f64; 2],
    /// Penalty grid resolution `(m ρ-lines, n z-nodes)`.
    pub arb_grid: (usize, usize),
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1,
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            pseudo_batch: 64,
            subsample_range: [0.5, 1.0],
            arb_grid: (40, 40),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.pseudo_batch < 1 {
            return Err(TrainError::InvalidConfig("pseudo_batch must be >= 1".into()));
        }
        let [lo, hi] = self.subsample_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(TrainError::InvalidConfig(
                "subsample_range must satisfy 0 < lo <= hi <= 1".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(TrainError::InvalidConfig("weight_decay must be >= 0".into()));
        }
        if self.arb_grid.0 < 3 || self.arb_grid.1 < 3 {
            return Err(TrainError::InvalidConfig("arb_grid must be at least 3x3".into()));
        }
        Ok(())
    }
}

/// A rectilinear `(ρ, z)` grid for the arbitrage penalties, possibly with
/// non-uniform node spacing (from jittering).
#[derive(Debug, Clone)]
pub struct ArbGrid {
    pub rho: Vec<f64>,
    pub z: Vec<f64>,
}

impl ArbGrid {
    /// Uniform grid spanning the domain.
    pub fn regular(domain: &Domain, m: usize, n: usize) -> Self {
        assert!(m >= 3 && n >= 3, "penalty grid must be at least 3x3");
        let lin = |lo: f64, hi: f64, count: usize| -> Vec<f64> {
            let step = (hi - lo) / (count - 1) as f64;
            (0..count).map(|i| lo + step * i as f64).collect()
        };
        ArbGrid {
            rho: lin(domain.rho_min, domain.rho_max, m),
            z: lin(domain.z_min, domain.z_max, n),
        }
    }

    /// All `m·n` nodes in row-major order (`ρ` outer, `z` inner).
    pub fn nodes(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(self.rho.len() * self.z.len());
        for &r in &self.rho {
            for &z in &self.z {
                out.push([r, z]);
            }
        }
        out
    }

    /// Calendar cross-evaluation points `(ρ_i, ρ_{i+1}·z_j/ρ_i)` for
    /// consecutive `ρ`-pairs, `z` clamped to the domain. `(m−1)·n` points
    /// in the same row-major order as the pair index.
    pub fn calendar_cross_points(&self, domain: &Domain) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity((self.rho.len() - 1) * self.z.len());
        for i in 0..self.rho.len() - 1 {
            for &z in &self.z {
                let zc = domain.clamp_z(self.rho[i + 1] * z / self.rho[i]);
                out.push([self.rho[i], zc]);
            }
        }
        out
    }
}
