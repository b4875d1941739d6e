//! Evaluation metrics and benchmark aggregation.
//!
//! Two pointwise errors compare a smoothed surface against quotes:
//!
//! - `δ_abs(x) = |v̂(x) − v(x)| / v(x)`, the relative vol error; its
//!   surface mean is the MAPE `⟨δ_abs⟩`.
//! - `δ_spr(x) = 2·|BS±(x, v̂) − BS±(x, v)| / s(x)` with spread
//!   `s(x) = BS±(x, v_ask) − BS±(x, v_bid)`, the OTM price error in
//!   half-spread units: `δ_spr ≤ 1` iff the model price lies inside the
//!   bid–ask band when the mid price sits at its center.
//!
//! [`benchmark_summary`] aggregates surface-level means into descriptive
//! statistics (mean, std, linear-interpolation quantiles) and averages the
//! pointwise values over a uniform `(ρ, z)` bin grid for spatial error
//! maps.

use serde::Serialize;
use thiserror::Error;

use crate::black_scholes::{bs_otm, BsError};
use crate::market_data::Domain;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("market vol must be positive, got {0}")]
    NonPositiveVol(f64),
    #[error("degenerate spread {spread} from bid {bid}, ask {ask}")]
    DegenerateSpread { bid: f64, ask: f64, spread: f64 },
    #[error("empty input")]
    EmptyInput,
    #[error(transparent)]
    BlackScholes(#[from] BsError),
}

/// Pointwise errors of one smoothed quote. Spread-based fields are absent
/// when the quote lacks a bid or ask vol.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PointMetrics {
    pub delta_abs: f64,
    pub delta_spr: Option<f64>,
    pub spread: Option<f64>,
}

/// Relative absolute vol error `|v̂ − v| / v`.
pub fn delta_abs(v_hat: f64, v: f64) -> Result<f64, MetricsError> {
    if v <= 0.0 {
        return Err(MetricsError::NonPositiveVol(v));
    }
    Ok((v_hat - v).abs() / v)
}

/// OTM price spread `s = BS±(τ, k, v_ask) − BS±(τ, k, v_bid)`.
pub fn spread(tau: f64, k: f64, v_bid: f64, v_ask: f64) -> Result<f64, MetricsError> {
    let s = bs_otm(tau, k, v_ask)? - bs_otm(tau, k, v_bid)?;
    if s <= 0.0 {
        return Err(MetricsError::DegenerateSpread { bid: v_bid, ask: v_ask, spread: s });
    }
    Ok(s)
}

/// Price error in half-spread units, `2·|BS±(v̂) − BS±(v)| / s`.
pub fn delta_spr(
    tau: f64,
    k: f64,
    v_hat: f64,
    v: f64,
    v_bid: f64,
    v_ask: f64,
) -> Result<f64, MetricsError> {
    let s = spread(tau, k, v_bid, v_ask)?;
    let err = (bs_otm(tau, k, v_hat)? - bs_otm(tau, k, v)?).abs();
    Ok(2.0 * err / s)
}

/// Both pointwise errors for one quote; spread metrics only when both
/// sides are quoted.
pub fn point_metrics(
    tau: f64,
    k: f64,
    v_hat: f64,
    v: f64,
    v_bid: Option<f64>,
    v_ask: Option<f64>,
) -> Result<PointMetrics, MetricsError> {
    let da = delta_abs(v_hat, v)?;
    let (ds, s) = match (v_bid, v_ask) {
        (Some(b), Some(a)) => {
            let s = spread(tau, k, b, a)?;
            let err = (bs_otm(tau, k, v_hat)? - bs_otm(tau, k, v)?).abs();
            (Some(2.0 * err / s), Some(s))
        }
        _ => (None, None),
    };
    Ok(PointMetrics { delta_abs: da, delta_spr: ds, spread: s })
}

/// Descriptive statistics of one surface-level aggregate.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AggregateStats {
    pub mean: f64,
    pub std: f64,
    pub q01: f64,
    pub q05: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q95: f64,
    pub q99: f64,
}

/// Per-surface aggregates feeding [`benchmark_summary`].
#[derive(Debug, Clone, Copy)]
pub struct SurfaceAggregates {
    pub mean_delta_abs: f64,
    pub mean_delta_spr: Option<f64>,
    pub mean_spread: Option<f64>,
}

/// One pointwise sample with its location, for spatial binning.
#[derive(Debug, Clone, Copy)]
pub struct SpatialPoint {
    pub rho: f64,
    pub z: f64,
    pub delta_abs: f64,
    pub delta_spr: Option<f64>,
    pub butterfly: f64,
    pub calendar_increment: f64,
}

/// Mean errors inside one `(ρ, z)` bin; one CSV row.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SpatialBin {
    pub rho_bin: usize,
    pub z_bin: usize,
    pub mean_delta_abs: f64,
    pub mean_delta_spr: f64,
    pub mean_but: f64,
    pub mean_cal_increment: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkSummary {
    pub n_surfaces: usize,
    pub delta_abs: AggregateStats,
    /// Absent when no surface had spread quotes.
    pub delta_spr: Option<AggregateStats>,
    pub spread: Option<AggregateStats>,
    /// Non-empty bins of the spatial grid, row-major.
    pub spatial: Vec<SpatialBin>,
}

/// Linear-interpolation quantiles of an unsorted sample.
pub fn quantile_levels(values: &[f64], levels: &[f64]) -> Result<Vec<f64>, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(levels.iter().map(|&p| quantile(&sorted, p)).collect())
}

/// Linear-interpolation quantile of a sorted sample at level `p ∈ [0, 1]`.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn aggregate(values: &[f64]) -> Option<AggregateStats> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(AggregateStats {
        mean,
        std: var.sqrt(),
        q01: quantile(&sorted, 0.01),
        q05: quantile(&sorted, 0.05),
        q25: quantile(&sorted, 0.25),
        q50: quantile(&sorted, 0.50),
        q75: quantile(&sorted, 0.75),
        q95: quantile(&sorted, 0.95),
        q99: quantile(&sorted, 0.99),
    })
}

/// Default spatial bin grid resolution.
pub const SPATIAL_BINS: (usize, usize) = (10, 10);

fn bin_index(x: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let t = ((x - lo) / (hi - lo) * bins as f64).floor();
    (t as usize).min(bins - 1).max(0)
}

/// Summarize surface-level aggregates and spatially binned point errors.
pub fn benchmark_summary(
    per_surface: &[SurfaceAggregates],
    spatial_points: &[SpatialPoint],
    domain: &Domain,
    bins: (usize, usize),
) -> Result<BenchmarkSummary, MetricsError> {
    if per_surface.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let abs: Vec<f64> = per_surface.iter().map(|s| s.mean_delta_abs).collect();
    let spr: Vec<f64> = per_surface.iter().filter_map(|s| s.mean_delta_spr).collect();
    let sprd: Vec<f64> = per_surface.iter().filter_map(|s| s.mean_spread).collect();

    let (bm, bn) = bins;
    // Per-bin accumulators: sums and counts for each averaged column.
    let mut acc = vec![[0.0f64; 6]; bm * bn];
    let mut spr_count = vec![0usize; bm * bn];
    for p in spatial_points {
        let bi = bin_index(p.rho, domain.rho_min, domain.rho_max, bm);
        let bj = bin_index(p.z, domain.z_min, domain.z_max, bn);
        let a = &mut acc[bi * bn + bj];
        a[0] += 1.0;
        a[1] += p.delta_abs;
        if let Some(ds) = p.delta_spr {
            a[2] += ds;
            spr_count[bi * bn + bj] += 1;
        }
        a[3] += p.butterfly;
        a[4] += p.calendar_increment;
    }
    let mut spatial = Vec::new();
    for bi in 0..bm {
        for bj in 0..bn {
            let a = &acc[bi * bn + bj];
            if a[0] == 0.0 {
                continue;
            }
            let ns = spr_count[bi * bn + bj];
            spatial.push(SpatialBin {
                rho_bin: bi,
                z_bin: bj,
                mean_delta_abs: a[1] / a[0],
                mean_delta_spr: if ns > 0 { a[2] / ns as f64 } else { f64::NAN },
                mean_but: a[3] / a[0],
                mean_cal_increment: a[4] / a[0],
            });
        }
    }
    Ok(BenchmarkSummary {
        n_surfaces: per_surface.len(),
        delta_abs: aggregate(&abs).expect("nonempty by precondition"),
        delta_spr: aggregate(&spr),
        spread: aggregate(&sprd),
        spatial,
    })
}
