//! Static-arbitrage validation of volatility surfaces.
//!
//! The pointwise butterfly term is
//!
//! ```text
//! But(τ, k, v0, v1, v2) = (1 + d1·v1·√τ)(1 + d2·v1·√τ) + v0·v2·τ
//! ```
//!
//! with `v1 = ∂k v`, `v2 = ∂²k v`. Nonnegativity of `But` is equivalent to a
//! nonnegative implied density; monotonicity of `v·√τ` in `τ` at fixed `k`
//! rules out calendar arbitrage. Asymptotic (large-`k`, small-`τ`) conditions
//! are not checked: the working domain is bounded.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::black_scholes::{d1, d2, norm_pdf};
use crate::market_data::Domain;

#[derive(Debug, Error)]
pub enum ArbitrageError {
    #[error("non-finite surface value at (rho={rho}, z={z})")]
    EvaluationError { rho: f64, z: f64 },
    #[error("grid must be at least 3x3, got {0}x{1}")]
    GridTooSmall(usize, usize),
}

/// A volatility slice value with its first two strike derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceJet {
    pub tau: f64,
    pub k: f64,
    pub v0: f64,
    pub v1: f64,
    pub v2: f64,
}

/// Anything that can evaluate vols at a batch of `(ρ, z)` points.
pub trait SurfaceEval {
    fn eval_batch(&self, points: &[[f64; 2]]) -> Vec<f64>;
}

impl<F: Fn(f64, f64) -> f64> SurfaceEval for F {
    fn eval_batch(&self, points: &[[f64; 2]]) -> Vec<f64> {
        points.iter().map(|p| self(p[0], p[1])).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViolationKind {
    Butterfly,
    Calendar,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArbitrageReport {
    pub min_butterfly: f64,
    pub min_calendar_increment: f64,
    pub violation_points: Vec<(f64, f64, ViolationKind)>,
    pub butterfly_grid: (usize, usize),
    pub calendar_grid: (usize, usize),
}

impl ArbitrageReport {
    pub fn is_free(&self) -> bool {
        self.violation_points.is_empty()
    }
}

/// The butterfly term of the validation theorem.
pub fn butterfly_term(jet: &SliceJet) -> f64 {
    let sq = jet.tau.sqrt();
    let a = 1.0 + d1(jet.tau, jet.k, jet.v0) * jet.v1 * sq;
    let b = 1.0 + d2(jet.tau, jet.k, jet.v0) * jet.v1 * sq;
    a * b + jet.v0 * jet.v2 * jet.tau
}

/// Partial derivatives of [`butterfly_term`] in `(v0, v1, v2)`.
///
/// Used by the training losses to chain gradients through the finite
/// difference stencils.
pub fn butterfly_term_grad(jet: &SliceJet) -> (f64, f64, f64) {
    let sq = jet.tau.sqrt();
    let d1v = d1(jet.tau, jet.k, jet.v0);
    let d2v = d2(jet.tau, jet.k, jet.v0);
    let a = 1.0 + d1v * jet.v1 * sq;
    let b = 1.0 + d2v * jet.v1 * sq;
    // ∂d1/∂v0 = k/(v0²√τ) + √τ/2, ∂d2/∂v0 = k/(v0²√τ) − √τ/2
    let dd_common = jet.k / (jet.v0 * jet.v0 * sq);
    let dd1 = dd_common + 0.5 * sq;
    let dd2 = dd_common - 0.5 * sq;
    let g0 = dd1 * jet.v1 * sq * b + a * dd2 * jet.v1 * sq + jet.v2 * jet.tau;
    let g1 = d1v * sq * b + a * d2v * sq;
    let g2 = jet.v0 * jet.tau;
    (g0, g1, g2)
}

/// Implied probability density of log-moneyness:
/// `φ(−d2) / (v0·√τ) · But`.
pub fn implied_density(jet: &SliceJet) -> f64 {
    let sq = jet.tau.sqrt();
    norm_pdf(-d2(jet.tau, jet.k, jet.v0)) / (jet.v0 * sq) * butterfly_term(jet)
}

/// Three-point finite-difference weights for the first and second derivative
/// at `x1` on the (possibly non-uniform) stencil `x0 < x1 < x2`. Exact for
/// quadratics.
pub fn stencil_weights(x0: f64, x1: f64, x2: f64) -> ([f64; 3], [f64; 3]) {
    let hl = x1 - x0;
    let hr = x2 - x1;
    let first = [
        -hr / (hl * (hl + hr)),
        (hr - hl) / (hl * hr),
        hl / (hr * (hl + hr)),
    ];
    let second = [
        2.0 / (hl * (hl + hr)),
        -2.0 / (hl * hr),
        2.0 / (hr * (hl + hr)),
    ];
    (first, second)
}

/// Validate a surface on an `m×n` rectilinear `(ρ, z)` grid.
///
/// Butterfly terms use central finite differences in `z` at fixed `τ`,
/// chain-ruled to `k` via `k = z·ρ`. Calendar increments of `v·√τ` are
/// checked at fixed `k` between consecutive `ρ` grid lines, with the
/// cross-evaluation `z`-coordinate clamped to the domain. Threshold is 0.
pub fn validate_surface(
    surface: &dyn SurfaceEval,
    domain: &Domain,
    grid: (usize, usize),
) -> Result<ArbitrageReport, ArbitrageError> {
    let (m, n) = grid;
    if m < 3 || n < 3 {
        return Err(ArbitrageError::GridTooSmall(m, n));
    }
    let rho_step = (domain.rho_max - domain.rho_min) / (m - 1) as f64;
    let z_step = (domain.z_max - domain.z_min) / (n - 1) as f64;
    let rhos: Vec<f64> = (0..m).map(|i| domain.rho_min + i as f64 * rho_step).collect();
    let zs: Vec<f64> = (0..n).map(|j| domain.z_min + j as f64 * z_step).collect();

    // One evaluation batch: the rectilinear grid, then the calendar
    // cross points (ρ_i, clamp(ρ_{i+1}·z_j / ρ_i)).
    let mut points: Vec<[f64; 2]> = Vec::with_capacity(m * n + (m - 1) * n);
    for &rho in &rhos {
        for &z in &zs {
            points.push([rho, z]);
        }
    }
    for i in 0..m - 1 {
        for &z in &zs {
            let k = rhos[i + 1] * z;
            points.push([rhos[i], domain.clamp_z(k / rhos[i])]);
        }
    }
    let values = surface.eval_batch(&points);
    for (p, &v) in points.iter().zip(&values) {
        if !v.is_finite() || v <= 0.0 {
            return Err(ArbitrageError::EvaluationError { rho: p[0], z: p[1] });
        }
    }
    let grid_vals = &values[..m * n];
    let cross_vals = &values[m * n..];

    let mut min_butterfly = f64::INFINITY;
    let mut min_calendar = f64::INFINITY;
    let mut violations = Vec::new();

    for i in 0..m {
        let rho = rhos[i];
        let tau = rho * rho;
        for j in 1..n - 1 {
            let v0 = grid_vals[i * n + j];
            let vl = grid_vals[i * n + j - 1];
            let vr = grid_vals[i * n + j + 1];
            let v1 = (vr - vl) / (2.0 * z_step) / rho;
            let v2 = (vr - 2.0 * v0 + vl) / (z_step * z_step) / (rho * rho);
            let jet = SliceJet { tau, k: zs[j] * rho, v0, v1, v2 };
            let but = butterfly_term(&jet);
            if but < min_butterfly {
                min_butterfly = but;
            }
            if but < 0.0 {
                violations.push((rho, zs[j], ViolationKind::Butterfly));
            }
        }
    }

    for i in 0..m - 1 {
        for (j, &z) in zs.iter().enumerate() {
            let upper = grid_vals[(i + 1) * n + j] * rhos[i + 1];
            let lower = cross_vals[i * n + j] * rhos[i];
            let increment = upper - lower;
            if increment < min_calendar {
                min_calendar = increment;
            }
            if increment < 0.0 {
                violations.push((rhos[i + 1], z, ViolationKind::Calendar));
            }
        }
    }

    Ok(ArbitrageReport {
        min_butterfly,
        min_calendar_increment: min_calendar,
        violation_points: violations,
        butterfly_grid: (m, n),
        calendar_grid: (m - 1, n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn flat_slice_butterfly_is_one() {
        for &(tau, k, v0) in &[(1.0, 0.0, 0.2), (0.3, -0.7, 0.5), (2.0, 0.4, 0.1)] {
            let jet = SliceJet { tau, k, v0, v1: 0.0, v2: 0.0 };
            assert_abs_diff_eq!(butterfly_term(&jet), 1.0);
        }
    }

    #[test]
    fn butterfly_direct_evaluation() {
        // d1 = 0.1, d2 = −0.1 at (1, 0, 0.2): (1.01)(0.99) = 0.9999.
        let jet = SliceJet { tau: 1.0, k: 0.0, v0: 0.2, v1: 0.1, v2: 0.0 };
        assert_abs_diff_eq!(butterfly_term(&jet), 0.9999, epsilon = 1e-12);
    }

    #[test]
    fn butterfly_matches_price_curvature() {
        // Cross-check: But relates to the second strike-derivative of the
        // call price through the implied density. For a surface v(k)
        // (here linear in k), f(k) = φ(−d2)/(v√τ)·But must equal
        // ∂²C/∂κ² · e^κ evaluated at κ = k (density of log-moneyness),
        // with the second derivative taken numerically in κ = log-strike.
        let (tau, v_at, slope) = (1.0, 0.25, 0.05);
        let vol = |k: f64| v_at + slope * k;
        let price = |k: f64| crate::black_scholes::bs_call(tau, k, vol(k)).unwrap();
        let k = 0.1;
        let h = 1e-4;
        // density in strike κ: ∂²C/∂K² with K = e^k; d/dK = (1/K) d/dk
        let dk2 = (price(k + h) - 2.0 * price(k) + price(k - h)) / (h * h);
        let dk1 = (price(k + h) - price(k - h)) / (2.0 * h);
        let strike = k.exp();
        let density_in_strike = (dk2 - dk1) / (strike * strike);
        let jet = SliceJet { tau, k, v0: vol(k), v1: slope, v2: 0.0 };
        // f_logm(k) = K · f_strike(K)
        assert_abs_diff_eq!(implied_density(&jet), strike * density_in_strike, epsilon = 1e-6);
    }

    #[test]
    fn butterfly_grad_matches_finite_differences() {
        let base = SliceJet { tau: 0.8, k: -0.2, v0: 0.3, v1: 0.04, v2: -0.02 };
        let (g0, g1, g2) = butterfly_term_grad(&base);
        let h = 1e-6;
        let fd = |f: &dyn Fn(f64) -> SliceJet| {
            (butterfly_term(&f(h)) - butterfly_term(&f(-h))) / (2.0 * h)
        };
        let f0 = fd(&|e| SliceJet { v0: base.v0 + e, ..base });
        let f1 = fd(&|e| SliceJet { v1: base.v1 + e, ..base });
        let f2 = fd(&|e| SliceJet { v2: base.v2 + e, ..base });
        assert_abs_diff_eq!(g0, f0, epsilon = 1e-6);
        assert_abs_diff_eq!(g1, f1, epsilon = 1e-6);
        assert_abs_diff_eq!(g2, f2, epsilon = 1e-6);
    }

    #[test]
    fn flat_slice_density_is_lognormal() {
        let (tau, v) = (0.5_f64, 0.3);
        let s = v * tau.sqrt();
        let mut k = -2.0;
        while k <= 2.0 {
            let jet = SliceJet { tau, k, v0: v, v1: 0.0, v2: 0.0 };
            let lognormal = norm_pdf((k + 0.5 * s * s) / s) / s;
            assert_abs_diff_eq!(implied_density(&jet), lognormal, epsilon = 1e-10);
            k += 0.05;
        }
    }

    #[test]
    fn density_sign_follows_butterfly() {
        let jet = SliceJet { tau: 1.0, k: 0.0, v0: 0.2, v1: 0.0, v2: -30.0 };
        assert!(butterfly_term(&jet) < 0.0);
        assert!(implied_density(&jet) < 0.0);
    }

    #[test]
    fn constant_surface_is_arbitrage_free() {
        let surface = |_rho: f64, _z: f64| 0.2;
        let report = validate_surface(&surface, &Domain::default(), (20, 20)).unwrap();
        assert_abs_diff_eq!(report.min_butterfly, 1.0, epsilon = 1e-9);
        assert!(report.min_calendar_increment >= 0.0);
        assert!(report.is_free());
    }

    #[test]
    fn fast_decay_in_tau_flags_calendar() {
        // v(ρ₂)·ρ₂ = 0.15·0.6 < 0.2·0.5 = v(ρ₁)·ρ₁.
        let surface = |rho: f64, _z: f64| if rho > 0.55 { 0.15 } else { 0.2 };
        let mut domain = Domain::default();
        domain.rho_min = 0.5;
        domain.rho_max = 0.6;
        let report = validate_surface(&surface, &domain, (3, 5)).unwrap();
        assert!(report
            .violation_points
            .iter()
            .any(|v| v.2 == ViolationKind::Calendar));
        assert!(report.min_calendar_increment < 0.0);
    }

    #[test]
    fn grid_too_small_rejected() {
        let surface = |_: f64, _: f64| 0.2;
        assert!(matches!(
            validate_surface(&surface, &Domain::default(), (2, 5)),
            Err(ArbitrageError::GridTooSmall(2, 5))
        ));
    }

    #[test]
    fn non_finite_value_reported_with_location() {
        let surface = |rho: f64, z: f64| if rho > 0.9 && z > 0.4 { f64::NAN } else { 0.2 };
        match validate_surface(&surface, &Domain::default(), (10, 10)) {
            Err(ArbitrageError::EvaluationError { rho, z }) => {
                assert!(rho > 0.9 && z > 0.4);
            }
            other => panic!("expected evaluation error, got {other:?}"),
        }
    }

    #[test]
    fn stencil_weights_exact_for_quadratic() {
        let f = |x: f64| 3.0 + 2.0 * x + 5.0 * x * x;
        let (x0, x1, x2) = (0.1, 0.25, 0.32);
        let (w1, w2) = stencil_weights(x0, x1, x2);
        let d1 = w1[0] * f(x0) + w1[1] * f(x1) + w1[2] * f(x2);
        let d2 = w2[0] * f(x0) + w2[1] * f(x1) + w2[2] * f(x2);
        assert_abs_diff_eq!(d1, 2.0 + 10.0 * x1, epsilon = 1e-10);
        assert_abs_diff_eq!(d2, 10.0, epsilon = 1e-9);
    }

    #[test]
    fn validation_minima_stable_under_grid_reordering() {
        // Evaluation order must not affect the reported minima.
        let surface = |rho: f64, z: f64| 0.2 + 0.05 * z * z + 0.02 * rho;
        let a = validate_surface(&surface, &Domain::default(), (15, 17)).unwrap();
        let b = validate_surface(&surface, &Domain::default(), (15, 17)).unwrap();
        assert_abs_diff_eq!(a.min_butterfly, b.min_butterfly, epsilon = 1e-9);
        assert_abs_diff_eq!(
            a.min_calendar_increment,
            b.min_calendar_increment,
            epsilon = 1e-9
        );
    }
}
