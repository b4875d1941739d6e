//! Loss terms and their analytic gradients.
//!
//! Each public loss has a value-only form taking any [`SurfaceEval`], used
//! by tests and the validate/benchmark paths, and an internal form on raw
//! vol arrays that also returns `∂loss/∂vols`. [`total_loss`] runs one
//! operator forward pass over the union of input coordinates, penalty-grid
//! nodes and calendar cross points, assembles the weighted upstream
//! gradient and back-propagates once.

use crate::arbitrage::{butterfly_term, butterfly_term_grad, stencil_weights, SliceJet, SurfaceEval};
use crate::black_scholes::vega;
use crate::gno::{build_graph, gno_backward, gno_forward, GnoModel, GradientRecord};
use crate::market_data::{Domain, SurfaceSnapshot};

use super::{ArbGrid, LossWeights, TrainError, TRAIN_EPSILON};

/// Values of the individual loss terms from one [`total_loss`] evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub fit: f64,
    pub butterfly: f64,
    pub calendar: f64,
    pub reg_rho: f64,
    pub reg_z: f64,
    /// Kernel-net evaluations spent on the forward pass.
    pub kernel_evals: usize,
}

/// Vega weights `w_𝒱 = (𝒱/mean 𝒱) ∨ 1` at the market vols.
fn vega_weights(snapshot: &SurfaceSnapshot) -> Result<Vec<f64>, TrainError> {
    let mut vegas = Vec::with_capacity(snapshot.records.len());
    for r in &snapshot.records {
        vegas.push(vega(r.tau, r.k, r.iv_mid)?);
    }
    let mean = vegas.iter().sum::<f64>() / vegas.len() as f64;
    Ok(vegas.iter().map(|v| (v / mean).max(1.0)).collect())
}

fn fit_loss_grad(
    predicted: &[f64],
    snapshot: &SurfaceSnapshot,
) -> Result<(f64, Vec<f64>), TrainError> {
    let n = snapshot.records.len();
    if predicted.len() != n {
        return Err(TrainError::ShapeError { got: predicted.len(), want: n });
    }
    if n == 0 {
        return Err(TrainError::EmptyDataset);
    }
    let weights = vega_weights(snapshot)?;
    let mut mean_sq = 0.0;
    for ((p, r), w) in predicted.iter().zip(&snapshot.records).zip(&weights) {
        let rel = (p - r.iv_mid) / r.iv_mid;
        mean_sq += w * rel * rel;
    }
    mean_sq /= n as f64;
    let loss = mean_sq.sqrt();
    let mut grad = vec![0.0; n];
    if loss > 0.0 {
        for (g, ((p, r), w)) in grad
            .iter_mut()
            .zip(predicted.iter().zip(&snapshot.records).zip(&weights))
        {
            let rel = (p - r.iv_mid) / r.iv_mid;
            *g = w * rel / (r.iv_mid * n as f64 * loss);
        }
    }
    Ok((loss, grad))
}

/// Vega-weighted RMS relative error of predicted vols against the quotes.
pub fn fit_loss(predicted: &[f64], snapshot: &SurfaceSnapshot) -> Result<f64, TrainError> {
    fit_loss_grad(predicted, snapshot).map(|(l, _)| l)
}

/// Butterfly penalty on grid vols (row-major `ρ`-outer). Strike derivatives
/// are non-uniform 3-point stencils in `z`, chain-ruled via `k = z·ρ`.
/// Normalization is the stencil-point count `m·(n−2)`.
fn butterfly_penalty(
    rho: &[f64],
    z: &[f64],
    vols: &[f64],
    epsilon: f64,
) -> (f64, Vec<f64>) {
    let (m, n) = (rho.len(), z.len());
    debug_assert_eq!(vols.len(), m * n);
    let count = (m * (n - 2)) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; m * n];
    for i in 0..m {
        let r = rho[i];
        let tau = r * r;
        let row = &vols[i * n..(i + 1) * n];
        for j in 1..n - 1 {
            let (s1, s2) = stencil_weights(z[j - 1], z[j], z[j + 1]);
            let v0 = row[j];
            let v1 = (s1[0] * row[j - 1] + s1[1] * row[j] + s1[2] * row[j + 1]) / r;
            let v2 = (s2[0] * row[j - 1] + s2[1] * row[j] + s2[2] * row[j + 1]) / (r * r);
            let jet = SliceJet { tau, k: z[j] * r, v0, v1, v2 };
            let but = butterfly_term(&jet);
            if but < epsilon {
                loss += epsilon - but;
                let (g0, g1, g2) = butterfly_term_grad(&jet);
                for (off, s1w, s2w) in [
                    (j - 1, s1[0], s2[0]),
                    (j, s1[1], s2[1]),
                    (j + 1, s1[2], s2[2]),
                ] {
                    let mut d = g1 * s1w / r + g2 * s2w / (r * r);
                    if off == j {
                        d += g0;
                    }
                    grad[i * n + off] -= d / count;
                }
            }
        }
    }
    (loss / count, grad)
}

/// Butterfly penalty of a surface on a grid; zero iff `But ≥ ε` at every
/// interior-`z` node.
pub fn butterfly_loss(surface: &dyn SurfaceEval, grid: &ArbGrid, epsilon: f64) -> f64 {
    let vols = surface.eval_batch(&grid.nodes());
    butterfly_penalty(&grid.rho, &grid.z, &vols, epsilon).0
}

/// Calendar penalty on pre-evaluated grid and cross-point vols.
/// `grid_vols` is `m·n` row-major; `cross_vols` is `(m−1)·n` with pair `i`
/// holding `v̂(ρ_i, ρ_{i+1} z_j / ρ_i)`.
fn calendar_penalty(
    rho: &[f64],
    grid_vols: &[f64],
    cross_vols: &[f64],
    n: usize,
    epsilon: f64,
) -> (f64, Vec<f64>, Vec<f64>) {
    let m = rho.len();
    debug_assert_eq!(grid_vols.len(), m * n);
    debug_assert_eq!(cross_vols.len(), (m - 1) * n);
    let count = ((m - 1) * n) as f64;
    let mut loss = 0.0;
    let mut dgrid = vec![0.0; m * n];
    let mut dcross = vec![0.0; (m - 1) * n];
    for i in 0..m - 1 {
        let bound = rho[i] / rho[i + 1] + epsilon;
        for j in 0..n {
            let num = grid_vols[(i + 1) * n + j];
            let den = cross_vols[i * n + j];
            let c = num / den - bound;
            if c < 0.0 {
                loss -= c;
                dgrid[(i + 1) * n + j] -= 1.0 / (den * count);
                dcross[i * n + j] += num / (den * den * count);
            }
        }
    }
    (loss / count, dgrid, dcross)
}

/// Calendar penalty of a surface between consecutive `ρ`-lines of the grid;
/// scale-invariant in the vols by the ratio form. Cross-evaluation points
/// outside the domain are clamped in `z`.
pub fn calendar_loss(
    surface: &dyn SurfaceEval,
    grid: &ArbGrid,
    domain: &Domain,
    epsilon: f64,
) -> f64 {
    let grid_vols = surface.eval_batch(&grid.nodes());
    let cross_vols = surface.eval_batch(&grid.calendar_cross_points(domain));
    calendar_penalty(&grid.rho, &grid_vols, &cross_vols, grid.z.len(), epsilon).0
}

/// RMS of non-uniform second finite differences along one axis. `major`
/// is the differenced axis' coordinates; `get(i, j)` indexes (major, other).
fn second_diff_rms(
    major: &[f64],
    other_len: usize,
    vol_at: impl Fn(usize, usize) -> usize,
    vols: &[f64],
) -> (f64, Vec<f64>) {
    let m = major.len();
    let count = ((m - 2) * other_len) as f64;
    let mut mean_sq = 0.0;
    let mut diffs = vec![0.0; (m - 2) * other_len];
    for i in 1..m - 1 {
        let (_, s2) = stencil_weights(major[i - 1], major[i], major[i + 1]);
        for j in 0..other_len {
            let d = s2[0] * vols[vol_at(i - 1, j)]
                + s2[1] * vols[vol_at(i, j)]
                + s2[2] * vols[vol_at(i + 1, j)];
            diffs[(i - 1) * other_len + j] = d;
            mean_sq += d * d;
        }
    }
    mean_sq /= count;
    let loss = mean_sq.sqrt();
    let mut grad = vec![0.0; vols.len()];
    if loss > 0.0 {
        for i in 1..m - 1 {
            let (_, s2) = stencil_weights(major[i - 1], major[i], major[i + 1]);
            for j in 0..other_len {
                let d = diffs[(i - 1) * other_len + j];
                for (off, w) in [(i - 1, s2[0]), (i, s2[1]), (i + 1, s2[2])] {
                    grad[vol_at(off, j)] += d * w / (count * loss);
                }
            }
        }
    }
    (loss, grad)
}

fn reg_penalty(rho: &[f64], z: &[f64], vols: &[f64]) -> (f64, f64, Vec<f64>, Vec<f64>) {
    let n = z.len();
    let (l_rho, g_rho) = second_diff_rms(rho, n, |i, j| i * n + j, vols);
    let (l_z, g_z) = second_diff_rms(z, rho.len(), |j, i| i * n + j, vols);
    (l_rho, l_z, g_rho, g_z)
}

/// Curvature regularizers `(L_reg-ρ, L_reg-z)`: RMS of second finite
/// differences of the surface over interior grid nodes, per axis.
pub fn reg_losses(surface: &dyn SurfaceEval, grid: &ArbGrid) -> (f64, f64) {
    let vols = surface.eval_batch(&grid.nodes());
    let (l_rho, l_z, _, _) = reg_penalty(&grid.rho, &grid.z, &vols);
    (l_rho, l_z)
}

/// One training objective evaluation: forward pass over inputs ∪ grid ∪
/// calendar cross points, all loss terms, and the parameter gradient of
/// the weighted sum via a single backward pass.
pub fn total_loss(
    model: &GnoModel,
    snapshot: &SurfaceSnapshot,
    weights: &LossWeights,
    grid: &ArbGrid,
    domain: &Domain,
) -> Result<(LossTerms, GradientRecord), TrainError> {
    weights.validate()?;
    let (m, n) = (grid.rho.len(), grid.z.len());
    let pi_in = snapshot.coords();
    let n_in = pi_in.len();
    if n_in == 0 {
        return Err(TrainError::EmptyDataset);
    }

    let mut all_coords = pi_in.clone();
    all_coords.extend(grid.nodes());
    all_coords.extend(grid.calendar_cross_points(domain));
    let graph_in = build_graph(&pi_in, &pi_in, model.config.rho_bar, model.config.neighbor_cap)?;
    let graph_all =
        build_graph(&pi_in, &all_coords, model.config.rho_bar, model.config.neighbor_cap)?;
    let fwd = gno_forward(model, snapshot, &graph_in, &graph_all)?;

    let grid_lo = n_in;
    let grid_hi = n_in + m * n;
    let (fit, d_fit) = fit_loss_grad(&fwd.vols[..n_in], snapshot)?;
    let (but, d_but) =
        butterfly_penalty(&grid.rho, &grid.z, &fwd.vols[grid_lo..grid_hi], TRAIN_EPSILON);
    let (cal, d_cal_grid, d_cal_cross) = calendar_penalty(
        &grid.rho,
        &fwd.vols[grid_lo..grid_hi],
        &fwd.vols[grid_hi..],
        n,
        TRAIN_EPSILON,
    );
    let (reg_rho, reg_z, d_rho, d_z) =
        reg_penalty(&grid.rho, &grid.z, &fwd.vols[grid_lo..grid_hi]);

    let total = weights.lambda_fit * fit
        + weights.lambda_but * but
        + weights.lambda_cal * cal
        + weights.lambda_reg_rho * reg_rho
        + weights.lambda_reg_z * reg_z;

    let mut upstream = vec![0.0; all_coords.len()];
    for (u, g) in upstream[..n_in].iter_mut().zip(&d_fit) {
        *u += weights.lambda_fit * g;
    }
    for (idx, u) in upstream[grid_lo..grid_hi].iter_mut().enumerate() {
        *u += weights.lambda_but * d_but[idx]
            + weights.lambda_cal * d_cal_grid[idx]
            + weights.lambda_reg_rho * d_rho[idx]
            + weights.lambda_reg_z * d_z[idx];
    }
    for (u, g) in upstream[grid_hi..].iter_mut().zip(&d_cal_cross) {
        *u += weights.lambda_cal * g;
    }

    let grad = gno_backward(model, &fwd.tape, &upstream)?;
    let terms = LossTerms {
        total,
        fit,
        butterfly: but,
        calendar: cal,
        reg_rho,
        reg_z,
        kernel_evals: fwd.kernel_evals,
    };
    Ok((terms, grad))
}
