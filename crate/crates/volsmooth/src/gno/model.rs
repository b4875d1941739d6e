//! Parameter layout, initialization, and configuration of the operator.
//!
//! All parameters live in one flat `Vec<f64>`; the [`Layout`] records where
//! each block sits. Per layer `j` the blocks are: a lift `𝒫ⱼ` (scalar input
//! for `j = 0`, `c`-dimensional otherwise), a kernel net producing the
//! `c×c` matrix and `c`-vector of the integral kernel in one trunk, a
//! constant bias `bⱼ`, and (for `j ≥ 1`) a local matrix `Wⱼ`. A final
//! projection `𝒬` maps the last hidden state to a scalar, squashed through
//! Softplus into a strictly positive vol.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ffn::Ffn;
use super::GnoError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GnoConfig {
    /// Number of kernel layers `J`.
    pub layers: usize,
    /// Hidden channel count `c`.
    pub channels: usize,
    /// Hidden width of lifts and the projection.
    pub lift_hidden: usize,
    /// Hidden width of the kernel nets (two hidden layers).
    pub kernel_hidden: usize,
    /// Neighbor cap `K`.
    pub neighbor_cap: usize,
    /// Truncation radius in `ρ`.
    pub rho_bar: f64,
    /// Arbitrage-loss margin `ε`.
    pub epsilon_arb: f64,
}

impl Default for GnoConfig {
    fn default() -> Self {
        GnoConfig {
            layers: 4,
            channels: 16,
            lift_hidden: 64,
            kernel_hidden: 64,
            neighbor_cap: 50,
            rho_bar: 0.3,
            epsilon_arb: 1e-3,
        }
    }
}

impl GnoConfig {
    pub fn validate(&self) -> Result<(), GnoError> {
        if self.layers < 2 {
            return Err(GnoError::InvalidConfig(format!(
                "need at least 2 layers, got {}",
                self.layers
            )));
        }
        if self.neighbor_cap < 1 {
            return Err(GnoError::InvalidConfig("neighbor cap must be >= 1".into()));
        }
        if !(self.rho_bar > 0.0) {
            return Err(GnoError::InvalidConfig(format!(
                "rho_bar must be positive, got {}",
                self.rho_bar
            )));
        }
        if self.channels == 0 || self.lift_hidden == 0 || self.kernel_hidden == 0 {
            return Err(GnoError::InvalidConfig("zero width".into()));
        }
        Ok(())
    }

    /// Kernel-net input dimension: `(ρ_y, z_y, ρ_x, z_x, h̃ⱼ(x) ∈ R^c, v(x))`.
    pub fn kernel_input_dim(&self) -> usize {
        5 + self.channels
    }
}

/// Offsets of every parameter block inside the flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub lifts: Vec<(usize, Ffn)>,
    pub kernels: Vec<(usize, Ffn)>,
    /// `(offset, c)` per layer `j ≥ 1`; index 0 is unused (`None`).
    pub locals: Vec<Option<usize>>,
    pub biases: Vec<usize>,
    pub projection: (usize, Ffn),
    pub total: usize,
}

impl Layout {
    pub fn new(config: &GnoConfig) -> Self {
        let c = config.channels;
        let mut offset = 0;
        let mut lifts = Vec::with_capacity(config.layers);
        let mut kernels = Vec::with_capacity(config.layers);
        let mut locals = Vec::with_capacity(config.layers);
        let mut biases = Vec::with_capacity(config.layers);
        for j in 0..config.layers {
            let lift_in = if j == 0 { 1 } else { c };
            let lift = Ffn::new(&[lift_in, config.lift_hidden, c]);
            let lift_len = lift.param_len;
            lifts.push((offset, lift));
            offset += lift_len;

            let kernel = Ffn::new(&[
                config.kernel_input_dim(),
                config.kernel_hidden,
                config.kernel_hidden,
                c * c + c,
            ]);
            let kernel_len = kernel.param_len;
            kernels.push((offset, kernel));
            offset += kernel_len;

            if j == 0 {
                locals.push(None);
            } else {
                locals.push(Some(offset));
                offset += c * c;
            }
            biases.push(offset);
            offset += c;
        }
        let projection = Ffn::new(&[c, config.lift_hidden, 1]);
        let proj_len = projection.param_len;
        let projection = (offset, projection);
        offset += proj_len;
        Layout {
            lifts,
            kernels,
            locals,
            biases,
            projection,
            total: offset,
        }
    }
}

/// The operator: a config, its parameter layout, and the flat parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GnoModel {
    pub config: GnoConfig,
    pub layout: Layout,
    pub params: Vec<f64>,
}

/// Flat per-parameter gradients mirroring [`GnoModel::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientRecord {
    pub values: Vec<f64>,
}

impl GradientRecord {
    pub fn zeros(model: &GnoModel) -> Self {
        GradientRecord { values: vec![0.0; model.params.len()] }
    }

    pub fn add(&mut self, other: &GradientRecord) {
        assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl GnoModel {
    /// Seeded Kaiming-uniform `[−√(6/fan_in), √(6/fan_in)]` weight
    /// initialization with zero biases; the local matrices use
    /// `fan_in = c` and the per-layer constant biases start at zero.
    pub fn new(config: GnoConfig, seed: u64) -> Result<Self, GnoError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.channels;
        let scale = (6.0 / c as f64).sqrt();
        for j in 0..config.layers {
            let (off, ffn) = &layout.lifts[j];
            ffn.init(&mut params[*off..off + ffn.param_len], &mut rng);
            let (off, ffn) = &layout.kernels[j];
            ffn.init(&mut params[*off..off + ffn.param_len], &mut rng);
            if let Some(off) = layout.locals[j] {
                for p in &mut params[off..off + c * c] {
                    *p = rand::Rng::gen_range(&mut rng, -scale..scale);
                }
            }
            // Constant biases start at zero (params is zero-filled).
        }
        let (off, ffn) = &layout.projection;
        ffn.init(&mut params[*off..off + ffn.param_len], &mut rng);
        Ok(GnoModel { config, layout, params })
    }

    /// All-zero parameters (the forward pass then outputs ln 2 everywhere).
    pub fn zeroed(config: GnoConfig) -> Result<Self, GnoError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let params = vec![0.0; layout.total];
        Ok(GnoModel { config, layout, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_parameter_count() {
        let model = GnoModel::zeroed(GnoConfig::default()).unwrap();
        assert_eq!(model.param_count(), 102_529);
    }

    #[test]
    fn parameter_count_breakdown() {
        // lifts: 1168 + 3×2128; kernels: 4×23248; locals: 3×256;
        // biases: 4×16; projection: 1153.
        let layout = Layout::new(&GnoConfig::default());
        assert_eq!(layout.lifts[0].1.param_len, 1168);
        assert_eq!(layout.lifts[1].1.param_len, 2128);
        assert_eq!(layout.kernels[0].1.param_len, 23248);
        assert_eq!(layout.projection.1.param_len, 1153);
        assert_eq!(
            layout.total,
            1168 + 3 * 2128 + 4 * 23248 + 3 * 256 + 4 * 16 + 1153
        );
    }

    #[test]
    fn init_is_seeded_and_reproducible() {
        let a = GnoModel::new(GnoConfig::default(), 7).unwrap();
        let b = GnoModel::new(GnoConfig::default(), 7).unwrap();
        let c = GnoModel::new(GnoConfig::default(), 8).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
        assert!(a.params.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = GnoConfig { layers: 1, ..GnoConfig::default() };
        assert!(bad.validate().is_err());
        let bad = GnoConfig { rho_bar: 0.0, ..GnoConfig::default() };
        assert!(bad.validate().is_err());
        let bad = GnoConfig { neighbor_cap: 0, ..GnoConfig::default() };
        assert!(bad.validate().is_err());
    }
}
