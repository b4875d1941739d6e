//! Raw-SVI slices and SSVI surfaces.
//!
//! Total variance of a raw-SVI slice:
//!
//! ```text
//! w(k) = a + b(ρ(k − m) + √((k − m)² + σ²)),   v(k) = √(w(k)/τ)
//! ```
//!
//! The SSVI surface uses a power-law moment function `φ(θ) = η·θ^γ` and a
//! three-term mean-reverting forward-variance curve `θ_τ`. Both serve as
//! calibration baselines and as the oracle for synthetic training data.

use chrono::{TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arbitrage::{butterfly_term, validate_surface, SliceJet};
use crate::market_data::{Domain, OptionRecord, OptionSide, SurfaceSnapshot};

#[derive(Debug, Error)]
pub enum SviError {
    #[error("total variance w({k}) = {w} is not positive")]
    NegativeVariance { k: f64, w: f64 },
    #[error("calibration needs at least 5 points, got {0}")]
    Underdetermined(usize),
    #[error("no feasible SVI parameters found")]
    Infeasible,
    #[error("theta_tau({tau}) = {theta} is not positive")]
    DegenerateTheta { tau: f64, theta: f64 },
    #[error("surface generation exceeded {0} resampling attempts")]
    GenerationFailed(usize),
    #[error("weights length {0} does not match points length {1}")]
    WeightMismatch(usize, usize),
}

/// Raw-SVI parameters for a single expiry slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SviSlice {
    pub tau: f64,
    pub a: f64,
    pub b: f64,
    pub rho_svi: f64,
    pub m: f64,
    pub sigma: f64,
}

/// SSVI surface parameters. `p` is carried as inert metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsviParams {
    pub v: f64,
    pub v_prime: f64,
    pub theta: f64,
    pub rho_ssvi: f64,
    pub p: f64,
    pub eta: f64,
    pub gamma: f64,
    pub kappa1: f64,
    pub kappa2: f64,
}

impl Default for SsviParams {
    /// Reference parameter set used throughout the synthetic experiments.
    fn default() -> Self {
        SsviParams {
            v: 0.04,
            v_prime: 0.04,
            theta: 0.11,
            rho_ssvi: -0.5,
            p: 0.01,
            eta: 1.19,
            gamma: 0.49,
            kappa1: 5.5,
            kappa2: 0.1,
        }
    }
}

fn svi_w(slice: &SviSlice, k: f64) -> f64 {
    let d = k - slice.m;
    slice.a + slice.b * (slice.rho_svi * d + (d * d + slice.sigma * slice.sigma).sqrt())
}

/// Implied vol of a raw-SVI slice at log-moneyness `k`.
pub fn svi_vol(slice: &SviSlice, k: f64) -> Result<f64, SviError> {
    let w = svi_w(slice, k);
    if w <= 0.0 {
        return Err(SviError::NegativeVariance { k, w });
    }
    Ok((w / slice.tau).sqrt())
}

/// Vol and its first two strike derivatives at `k`, in closed form.
pub fn svi_jet(slice: &SviSlice, k: f64) -> Result<SliceJet, SviError> {
    let d = k - slice.m;
    let r = (d * d + slice.sigma * slice.sigma).sqrt();
    let w = slice.a + slice.b * (slice.rho_svi * d + r);
    if w <= 0.0 {
        return Err(SviError::NegativeVariance { k, w });
    }
    let w1 = slice.b * (slice.rho_svi + d / r);
    let w2 = slice.b * slice.sigma * slice.sigma / (r * r * r);
    let tau = slice.tau;
    let v0 = (w / tau).sqrt();
    let v1 = w1 / (2.0 * tau * v0);
    let v2 = w2 / (2.0 * tau * v0) - w1 * w1 / (4.0 * tau * tau * v0 * v0 * v0);
    Ok(SliceJet { tau, k, v0, v1, v2 })
}

/// Forward-variance curve `θ_τ` of the SSVI surface.
pub fn ssvi_theta(params: &SsviParams, tau: f64) -> f64 {
    let SsviParams { v, v_prime, theta, kappa1, kappa2, .. } = *params;
    theta * tau
        + (v - theta) * (1.0 - (-kappa1 * tau).exp()) / kappa1
        + (v_prime - theta) * kappa1 / (kappa1 - kappa2)
            * ((1.0 - (-kappa2 * tau).exp()) / kappa2 - (1.0 - (-kappa1 * tau).exp()) / kappa1)
}

/// SSVI implied vol at `(τ, k)`.
pub fn ssvi_vol(params: &SsviParams, tau: f64, k: f64) -> Result<f64, SviError> {
    let theta_tau = ssvi_theta(params, tau);
    if theta_tau <= 0.0 {
        return Err(SviError::DegenerateTheta { tau, theta: theta_tau });
    }
    let rho = params.rho_ssvi;
    let phi = params.eta * theta_tau.powf(params.gamma);
    let pk = phi * k;
    let bracket = 1.0 + rho * pk + ((pk + rho) * (pk + rho) + 1.0 - rho * rho).sqrt();
    Ok((theta_tau / (2.0 * tau) * bracket).sqrt())
}

pub const SVI_BOUNDS: [(f64, f64); 5] = [
    (-2.0, 2.0),     // a
    (0.0, 1.0),      // b
    (-1.0, 1.0),     // rho
    (-1.5, 0.5),     // m
    (1e-8, 2.0),     // sigma
];

const N_CONSTRAINT_POINTS: usize = 101;
const N_MULTISTARTS: usize = 8;

struct CalibrationProblem<'a> {
    ks: &'a [f64],
    vols: &'a [f64],
    weights: &'a [f64],
    tau: f64,
    constraint_ks: Vec<f64>,
}

impl CalibrationProblem<'_> {
    /// Quasi-explicit inner fit: for fixed `(m, σ)` the total variance is
    /// linear in `(a, p, q) = (a, bρ, b)`, so a weighted 3×3 normal-equation
    /// solve in variance space gives the optimal linear part, which is then
    /// clamped into the parameter box.
    fn inner_fit(&self, m: f64, sigma: f64) -> [f64; 5] {
        let mut ata = [[0.0f64; 3]; 3];
        let mut atb = [0.0f64; 3];
        for ((&k, &v), &wt) in self.ks.iter().zip(self.vols).zip(self.weights) {
            let d = k - m;
            let r = (d * d + sigma * sigma).sqrt();
            let row = [1.0, d, r];
            let target = self.tau * v * v;
            for i in 0..3 {
                for j in 0..3 {
                    ata[i][j] += wt * row[i] * row[j];
                }
                atb[i] += wt * row[i] * target;
            }
        }
        // Gaussian elimination with partial pivoting; tiny ridge for
        // near-collinear designs (e.g. data far from the kink).
        for i in 0..3 {
            ata[i][i] += 1e-12;
        }
        for col in 0..3 {
            let piv = (col..3)
                .max_by(|&i, &j| ata[i][col].abs().total_cmp(&ata[j][col].abs()))
                .unwrap();
            ata.swap(col, piv);
            atb.swap(col, piv);
            for row in col + 1..3 {
                let f = ata[row][col] / ata[col][col];
                for j in col..3 {
                    ata[row][j] -= f * ata[col][j];
                }
                atb[row] -= f * atb[col];
            }
        }
        let mut sol = [0.0f64; 3];
        for i in (0..3).rev() {
            let mut s = atb[i];
            for j in i + 1..3 {
                s -= ata[i][j] * sol[j];
            }
            sol[i] = s / ata[i][i];
        }
        let (a, p, q) = (sol[0], sol[1], sol[2]);
        let b = q.clamp(SVI_BOUNDS[1].0, SVI_BOUNDS[1].1);
        let rho = if b > 1e-12 { (p / b).clamp(-1.0, 1.0) } else { 0.0 };
        let a = a.clamp(SVI_BOUNDS[0].0, SVI_BOUNDS[0].1);
        [a, b, rho, m, sigma]
    }

    /// Nested grid search over `(m, σ)` with the inner linear solve; each
    /// level zooms onto the best cell of the previous one.
    fn grid_search(&self) -> [f64; 5] {
        let (mut m_lo, mut m_hi) = SVI_BOUNDS[3];
        let (mut s_lo, mut s_hi) = SVI_BOUNDS[4];
        let n = 33;
        let mut best = ([0.0; 5], f64::INFINITY);
        for _level in 0..5 {
            let m_step = (m_hi - m_lo) / (n - 1) as f64;
            let s_step = (s_hi - s_lo) / (n - 1) as f64;
            for i in 0..n {
                for j in 0..n {
                    let m = m_lo + i as f64 * m_step;
                    let sigma = s_lo + j as f64 * s_step;
                    let x = self.inner_fit(m, sigma);
                    let (obj, _) = self.penalised(&x, 0.0);
                    if obj < best.1 {
                        best = (x, obj);
                    }
                }
            }
            let (m, sigma) = (best.0[3], best.0[4]);
            m_lo = (m - 1.5 * m_step).max(SVI_BOUNDS[3].0);
            m_hi = (m + 1.5 * m_step).min(SVI_BOUNDS[3].1);
            s_lo = (sigma - 1.5 * s_step).max(SVI_BOUNDS[4].0);
            s_hi = (sigma + 1.5 * s_step).min(SVI_BOUNDS[4].1);
        }
        best.0
    }

    fn slice(&self, x: &[f64; 5]) -> SviSlice {
        SviSlice { tau: self.tau, a: x[0], b: x[1], rho_svi: x[2], m: x[3], sigma: x[4] }
    }

    /// Squared-error objective plus quadratic penalties for `w > 0` and
    /// `But ≥ 0` on the constraint grid. Returns the penalised objective
    /// and the maximum constraint violation.
    fn penalised(&self, x: &[f64; 5], mu: f64) -> (f64, f64) {
        let slice = self.slice(x);
        let mut obj = 0.0;
        for ((&k, &v), &w) in self.ks.iter().zip(self.vols).zip(self.weights) {
            let fit = match svi_vol(&slice, k) {
                Ok(val) => val,
                Err(_) => return (f64::INFINITY, f64::INFINITY),
            };
            let r = fit - v;
            obj += w * r * r;
        }
        let mut max_violation: f64 = 0.0;
        let mut penalty = 0.0;
        for &k in &self.constraint_ks {
            let jet = match svi_jet(&slice, k) {
                Ok(j) => j,
                Err(_) => return (f64::INFINITY, f64::INFINITY),
            };
            // keep a small positivity margin on w so vols stay real
            let w_slack = svi_w(&slice, k) - 1e-8;
            let but = butterfly_term(&jet);
            for c in [w_slack, but] {
                let neg = (-c).max(0.0);
                penalty += neg * neg;
                max_violation = max_violation.max(neg);
            }
        }
        (obj + mu * penalty, max_violation)
    }

    fn gradient(&self, x: &[f64; 5], mu: f64) -> [f64; 5] {
        // Central differences are adequate here: the objective is cheap and
        // smooth, and the outer penalty loop re-solves several times.
        let mut g = [0.0; 5];
        let h = 1e-7;
        for i in 0..5 {
            let mut xp = *x;
            let mut xm = *x;
            xp[i] += h;
            xm[i] -= h;
            g[i] = (self.penalised(&xp, mu).0 - self.penalised(&xm, mu).0) / (2.0 * h);
        }
        g
    }
}

fn project(x: &mut [f64; 5]) {
    for (xi, (lo, hi)) in x.iter_mut().zip(SVI_BOUNDS) {
        *xi = xi.clamp(lo, hi);
    }
}

/// Box-projected gradient descent with Barzilai–Borwein steps and an
/// Armijo backtracking safeguard.
fn projected_descent(problem: &CalibrationProblem, x0: [f64; 5], mu: f64, iters: usize) -> [f64; 5] {
    let mut x = x0;
    project(&mut x);
    let mut f = problem.penalised(&x, mu).0;
    let mut g = problem.gradient(&x, mu);
    let mut step = 1e-3;
    for _ in 0..iters {
        let gnorm2: f64 = g.iter().map(|gi| gi * gi).sum();
        if gnorm2 < 1e-20 {
            break;
        }
        let mut alpha = step;
        let mut accepted = false;
        for _ in 0..30 {
            let mut xn = x;
            for i in 0..5 {
                xn[i] -= alpha * g[i];
            }
            project(&mut xn);
            let fn_ = problem.penalised(&xn, mu).0;
            let decrease: f64 = x
                .iter()
                .zip(&xn)
                .zip(&g)
                .map(|((xi, xni), gi)| gi * (xi - xni))
                .sum();
            if fn_ <= f - 1e-4 * decrease.max(0.0) && fn_.is_finite() {
                let gn = problem.gradient(&xn, mu);
                // BB1 step from the accepted move
                let mut sy = 0.0;
                let mut ss = 0.0;
                for i in 0..5 {
                    let si = xn[i] - x[i];
                    sy += si * (gn[i] - g[i]);
                    ss += si * si;
                }
                step = if sy > 1e-16 { (ss / sy).clamp(1e-8, 10.0) } else { alpha };
                x = xn;
                f = fn_;
                g = gn;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    x
}

/// Calibrate a raw-SVI slice to `(k, vol)` observations.
///
/// Weighted least squares in vol space under the parameter box, the
/// positivity constraint on `w`, and the butterfly constraint on a
/// 101-point grid spanning `[min k − 0.1, max k + 0.1]`. The constraints
/// enter through an escalating quadratic penalty; the inner solver is a
/// box-projected BB gradient method multi-started from deterministic
/// seeds. Returns the best feasible slice.
pub fn svi_calibrate(
    points: &[(f64, f64)],
    tau: f64,
    weights: Option<&[f64]>,
) -> Result<SviSlice, SviError> {
    if points.len() < 5 {
        return Err(SviError::Underdetermined(points.len()));
    }
    if let Some(w) = weights {
        if w.len() != points.len() {
            return Err(SviError::WeightMismatch(w.len(), points.len()));
        }
    }
    let ks: Vec<f64> = points.iter().map(|p| p.0).collect();
    let vols: Vec<f64> = points.iter().map(|p| p.1).collect();
    let uniform = vec![1.0 / points.len() as f64; points.len()];
    let weights = weights.map(|w| w.to_vec()).unwrap_or(uniform);

    let k_lo = ks.iter().cloned().fold(f64::INFINITY, f64::min) - 0.1;
    let k_hi = ks.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 0.1;
    let constraint_ks: Vec<f64> = (0..N_CONSTRAINT_POINTS)
        .map(|i| k_lo + (k_hi - k_lo) * i as f64 / (N_CONSTRAINT_POINTS - 1) as f64)
        .collect();
    let problem = CalibrationProblem { ks: &ks, vols: &vols, weights: &weights, tau, constraint_ks };

    // Starts: the quasi-explicit grid-search solution, a flat anchor at the
    // mean variance level, and deterministic random multistarts.
    let mean_var = vols.iter().map(|v| v * v).sum::<f64>() / vols.len() as f64 * tau;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5371);
    let mut starts: Vec<[f64; 5]> =
        vec![problem.grid_search(), [mean_var, 0.01, 0.0, 0.0, 0.1]];
    while starts.len() < N_MULTISTARTS {
        starts.push([
            mean_var * rng.gen_range(0.3..1.2),
            rng.gen_range(0.0..0.5),
            rng.gen_range(-0.9..0.9),
            rng.gen_range(-0.5..0.3),
            rng.gen_range(0.01..1.0),
        ]);
    }

    let mut best: Option<([f64; 5], f64)> = None;
    for start in starts {
        let mut x = start;
        // escalate the penalty weight until the constraint grid is clean
        for mu in [1e2, 1e4, 1e6, 1e8] {
            x = projected_descent(&problem, x, mu, 200);
            let (_, violation) = problem.penalised(&x, mu);
            if violation <= 1e-10 {
                break;
            }
        }
        let (_, violation) = problem.penalised(&x, 0.0);
        if violation > 1e-8 {
            continue;
        }
        let (obj, _) = problem.penalised(&x, 0.0);
        if best.map_or(true, |(_, f)| obj < f) {
            best = Some((x, obj));
        }
    }
    let (x, _) = best.ok_or(SviError::Infeasible)?;
    Ok(problem.slice(&x))
}

/// Rectilinear `(ρ, z)` grid on which synthetic surfaces are sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rhos: Vec<f64>,
    pub zs: Vec<f64>,
}

impl Default for GridSpec {
    /// The 8×51 synthetic grid: ρ ∈ {0.16, 0.28, …, 1}, z ∈ {−1.5, −1.46, …, 0.5}.
    fn default() -> Self {
        GridSpec {
            rhos: (0..8).map(|i| 0.16 + 0.12 * i as f64).collect(),
            zs: (0..51).map(|j| -1.5 + 0.04 * j as f64).collect(),
        }
    }
}

/// Random perturbation applied to the base SSVI parameters per surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    /// Log-uniform multiplicative half-width on (V, V', θ, η): factors are
    /// drawn from exp(U[ln(1−s), ln(1+s)]).
    pub mult_spread: f64,
    /// Uniform additive half-width on ρ, clamped to (−0.99, 0.99).
    pub rho_spread: f64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec { mult_spread: 0.3, rho_spread: 0.2 }
    }
}

impl PerturbationSpec {
    pub fn zero() -> Self {
        PerturbationSpec { mult_spread: 0.0, rho_spread: 0.0 }
    }
}

fn perturb(base: &SsviParams, spec: &PerturbationSpec, rng: &mut ChaCha8Rng) -> SsviParams {
    let mut out = *base;
    if spec.mult_spread > 0.0 {
        let lo = (1.0 - spec.mult_spread).ln();
        let hi = (1.0 + spec.mult_spread).ln();
        for field in [&mut out.v, &mut out.v_prime, &mut out.theta, &mut out.eta] {
            *field *= rng.gen_range(lo..=hi).exp();
        }
    } else {
        // keep the RNG stream aligned between zero and non-zero specs
        for _ in 0..4 {
            let _: f64 = rng.gen();
        }
    }
    if spec.rho_spread > 0.0 {
        out.rho_ssvi =
            (out.rho_ssvi + rng.gen_range(-spec.rho_spread..=spec.rho_spread)).clamp(-0.99, 0.99);
    } else {
        let _: f64 = rng.gen();
    }
    out
}

const RESAMPLE_CAP: usize = 100;

/// Generate `n_surfaces` arbitrage-validated synthetic SSVI snapshots.
///
/// Each surface evaluates an independently perturbed parameter set on the
/// grid; surfaces failing [`validate_surface`] on a 50×50 grid are
/// resampled (up to 100 attempts each). Bit-reproducible for a fixed seed.
pub fn gen_ssvi_dataset(
    base: &SsviParams,
    n_surfaces: usize,
    perturbation: &PerturbationSpec,
    grid: &GridSpec,
    seed: u64,
) -> Result<Vec<(SurfaceSnapshot, SsviParams)>, SviError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domain = Domain::default();
    let mut out = Vec::with_capacity(n_surfaces);
    for idx in 0..n_surfaces {
        let mut accepted = None;
        for _ in 0..RESAMPLE_CAP {
            let params = perturb(base, perturbation, &mut rng);
            let surface =
                |rho: f64, z: f64| ssvi_vol(&params, rho * rho, z * rho).unwrap_or(f64::NAN);
            match validate_surface(&surface, &domain, (50, 50)) {
                Ok(report) if report.is_free() => {
                    accepted = Some(params);
                    break;
                }
                _ => continue,
            }
        }
        let params = accepted.ok_or(SviError::GenerationFailed(RESAMPLE_CAP))?;
        let mut records = Vec::with_capacity(grid.rhos.len() * grid.zs.len());
        for &rho in &grid.rhos {
            let tau = rho * rho;
            for &z in &grid.zs {
                let k = z * rho;
                let vol = ssvi_vol(&params, tau, k)?;
                records.push(OptionRecord {
                    tau,
                    k,
                    rho,
                    z,
                    iv_mid: vol,
                    iv_bid: None,
                    iv_ask: None,
                    side: if k > 0.0 { OptionSide::Call } else { OptionSide::Put },
                });
            }
        }
        let timestamp = Utc.with_ymd_and_hms(2021, 1, 4, 16, 0, 0).unwrap()
            + chrono::Duration::days(idx as i64);
        out.push((SurfaceSnapshot { timestamp, records }, params));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn random_slice(rng: &mut ChaCha8Rng) -> SviSlice {
        SviSlice {
            tau: rng.gen_range(0.05..1.0),
            a: rng.gen_range(0.01..0.2),
            b: rng.gen_range(0.01..0.3),
            rho_svi: rng.gen_range(-0.8..0.8),
            m: rng.gen_range(-0.5..0.3),
            sigma: rng.gen_range(0.05..1.0),
        }
    }

    #[test]
    fn flat_slice_is_constant() {
        let slice = SviSlice { tau: 0.5, a: 0.02, b: 0.0, rho_svi: 0.3, m: 0.1, sigma: 0.2 };
        let v = (0.02f64 / 0.5).sqrt();
        for k in [-1.0, 0.0, 0.7] {
            assert_abs_diff_eq!(svi_vol(&slice, k).unwrap(), v);
        }
    }

    #[test]
    fn kink_point_value() {
        let slice = SviSlice { tau: 1.0, a: 0.04, b: 0.1, rho_svi: -0.5, m: 0.0, sigma: 0.1 };
        assert_abs_diff_eq!(svi_vol(&slice, 0.0).unwrap(), 0.05f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn negative_variance_is_error() {
        let slice = SviSlice { tau: 1.0, a: -0.5, b: 0.1, rho_svi: 0.0, m: 0.0, sigma: 0.1 };
        assert!(matches!(svi_vol(&slice, 0.0), Err(SviError::NegativeVariance { .. })));
    }

    #[test]
    fn jet_matches_finite_differences() {
        // v1 against a central difference of svi_vol at h = 1e−5; v2 against
        // a central difference of the analytic v1 at the same h, which keeps
        // the oracle's floating-point cancellation below the 1e−6 tolerance.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-5;
        for _ in 0..50 {
            let slice = random_slice(&mut rng);
            let k = rng.gen_range(-1.0..0.5);
            let jet = svi_jet(&slice, k).unwrap();
            let vp = svi_vol(&slice, k + h).unwrap();
            let vm = svi_vol(&slice, k - h).unwrap();
            let v0 = svi_vol(&slice, k).unwrap();
            let v1p = svi_jet(&slice, k + h).unwrap().v1;
            let v1m = svi_jet(&slice, k - h).unwrap().v1;
            assert_abs_diff_eq!(jet.v0, v0, epsilon = 1e-12);
            assert_abs_diff_eq!(jet.v1, (vp - vm) / (2.0 * h), epsilon = 1e-6);
            assert_abs_diff_eq!(jet.v2, (v1p - v1m) / (2.0 * h), epsilon = 1e-6);
        }
    }

    #[test]
    fn finite_difference_stencil_accuracy_at_coarse_h() {
        // o(h²) check at h = 1e−3: the error of central differences on an
        // analytic slice stays below 1e−4.
        let slice = SviSlice { tau: 0.5, a: 0.03, b: 0.2, rho_svi: -0.4, m: -0.1, sigma: 0.3 };
        let h = 1e-3;
        for k in [-0.8, -0.2, 0.0, 0.3] {
            let jet = svi_jet(&slice, k).unwrap();
            let vp = svi_vol(&slice, k + h).unwrap();
            let vm = svi_vol(&slice, k - h).unwrap();
            let v0 = svi_vol(&slice, k).unwrap();
            assert!((jet.v1 - (vp - vm) / (2.0 * h)).abs() < 1e-4);
            assert!((jet.v2 - (vp - 2.0 * v0 + vm) / (h * h)).abs() < 1e-4);
        }
    }

    #[test]
    fn symmetric_slice_has_odd_skew() {
        let slice = SviSlice { tau: 1.0, a: 0.04, b: 0.2, rho_svi: 0.0, m: 0.0, sigma: 0.3 };
        for k in [0.1, 0.4, 1.2] {
            let jp = svi_jet(&slice, k).unwrap();
            let jm = svi_jet(&slice, -k).unwrap();
            assert_abs_diff_eq!(jp.v1, -jm.v1, epsilon = 1e-14);
        }
    }

    #[test]
    fn flat_jet_has_zero_derivatives() {
        let slice = SviSlice { tau: 1.0, a: 0.04, b: 0.0, rho_svi: 0.5, m: 0.0, sigma: 0.3 };
        let jet = svi_jet(&slice, 0.3).unwrap();
        assert_abs_diff_eq!(jet.v1, 0.0);
        assert_abs_diff_eq!(jet.v2, 0.0);
    }

    #[test]
    fn ssvi_theta_matches_reference_value() {
        let params = SsviParams::default();
        let v = ssvi_vol(&params, 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(v, ssvi_theta(&params, 1.0).sqrt(), epsilon = 1e-14);
        assert!((v - 0.206).abs() < 5e-4);
    }

    #[test]
    fn ssvi_atm_reduces_to_theta_for_random_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let params = SsviParams {
                v: rng.gen_range(0.01..0.2),
                v_prime: rng.gen_range(0.01..0.2),
                theta: rng.gen_range(0.01..0.3),
                rho_ssvi: rng.gen_range(-0.9..0.9),
                p: 0.0,
                eta: rng.gen_range(0.5..2.0),
                gamma: rng.gen_range(0.1..0.9),
                kappa1: rng.gen_range(1.0..8.0),
                kappa2: rng.gen_range(0.01..0.9),
            };
            let tau = rng.gen_range(0.01..1.0);
            let theta_tau = ssvi_theta(&params, tau);
            assert!(theta_tau > 0.0);
            assert_abs_diff_eq!(
                ssvi_vol(&params, tau, 0.0).unwrap(),
                (theta_tau / tau).sqrt(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn ssvi_theta_vanishes_at_zero() {
        let params = SsviParams::default();
        assert!(ssvi_theta(&params, 1e-9) < 1e-8);
    }

    #[test]
    fn ssvi_density_integrates_to_one() {
        // Trapezoid quadrature of the implied log-moneyness density over
        // k ∈ [−6, 3] for an SSVI slice.
        let params = SsviParams::default();
        let tau = 0.25;
        let jet_at = |k: f64| {
            let h = 1e-5;
            let v0 = ssvi_vol(&params, tau, k).unwrap();
            let vp = ssvi_vol(&params, tau, k + h).unwrap();
            let vm = ssvi_vol(&params, tau, k - h).unwrap();
            SliceJet {
                tau,
                k,
                v0,
                v1: (vp - vm) / (2.0 * h),
                v2: (vp - 2.0 * v0 + vm) / (h * h),
            }
        };
        let n = 4001;
        let (lo, hi) = (-6.0, 3.0);
        let step = (hi - lo) / (n - 1) as f64;
        let mut integral = 0.0;
        for i in 0..n {
            let k = lo + i as f64 * step;
            let f = crate::arbitrage::implied_density(&jet_at(k));
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            integral += w * f * step;
        }
        assert!((integral - 1.0).abs() < 0.01, "integral = {integral}");
    }

    #[test]
    fn calibrate_flat_data() {
        let points: Vec<(f64, f64)> = (-10..=10).map(|i| (i as f64 * 0.05, 0.2)).collect();
        let slice = svi_calibrate(&points, 0.5, None).unwrap();
        for &(k, v) in &points {
            let fit = svi_vol(&slice, k).unwrap();
            assert!((fit / v - 1.0).abs() < 1e-6, "fit {fit} at k={k}");
        }
    }

    #[test]
    fn calibrate_recovers_synthetic_slice() {
        let truth = SviSlice { tau: 0.3, a: 0.02, b: 0.15, rho_svi: -0.4, m: -0.05, sigma: 0.25 };
        let points: Vec<(f64, f64)> = (-12..=12)
            .map(|i| {
                let k = i as f64 * 0.08;
                (k, svi_vol(&truth, k).unwrap())
            })
            .collect();
        let slice = svi_calibrate(&points, truth.tau, None).unwrap();
        let mape: f64 = points
            .iter()
            .map(|&(k, v)| (svi_vol(&slice, k).unwrap() / v - 1.0).abs())
            .sum::<f64>()
            / points.len() as f64;
        assert!(mape < 1e-3, "MAPE = {mape}");
    }

    #[test]
    fn calibrate_respects_bounds_and_butterfly() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let truth = random_slice(&mut rng);
            let points: Vec<(f64, f64)> = (-8..=8)
                .filter_map(|i| {
                    let k = i as f64 * 0.1;
                    svi_vol(&truth, k).ok().map(|v| (k, v))
                })
                .collect();
            if points.len() < 5 {
                continue;
            }
            let slice = svi_calibrate(&points, truth.tau, None).unwrap();
            assert!((0.0..=1.0).contains(&slice.b));
            assert!((-1.0..=1.0).contains(&slice.rho_svi));
            assert!((-1.5..=0.5).contains(&slice.m));
            assert!((1e-8..=2.0).contains(&slice.sigma));
            let lo = points[0].0 - 0.1;
            let hi = points.last().unwrap().0 + 0.1;
            for i in 0..N_CONSTRAINT_POINTS {
                let k = lo + (hi - lo) * i as f64 / (N_CONSTRAINT_POINTS - 1) as f64;
                let jet = svi_jet(&slice, k).unwrap();
                assert!(butterfly_term(&jet) >= -1e-8);
            }
        }
    }

    #[test]
    fn calibrate_underdetermined() {
        let points = vec![(0.0, 0.2), (0.1, 0.21), (0.2, 0.22)];
        assert!(matches!(
            svi_calibrate(&points, 0.5, None),
            Err(SviError::Underdetermined(3))
        ));
    }

    #[test]
    fn default_grid_shape() {
        let grid = GridSpec::default();
        assert_eq!(grid.rhos.len(), 8);
        assert_eq!(grid.zs.len(), 51);
        assert_abs_diff_eq!(grid.rhos[0], 0.16);
        assert_abs_diff_eq!(*grid.rhos.last().unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(grid.zs[0], -1.5);
        assert_abs_diff_eq!(*grid.zs.last().unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn gen_zero_perturbation_matches_base_evaluation() {
        let base = SsviParams::default();
        let data =
            gen_ssvi_dataset(&base, 1, &PerturbationSpec::zero(), &GridSpec::default(), 1).unwrap();
        assert_eq!(data.len(), 1);
        let (snapshot, params) = &data[0];
        assert_eq!(params, &base);
        assert_eq!(snapshot.records.len(), 8 * 51);
        for rec in &snapshot.records {
            assert_abs_diff_eq!(
                rec.iv_mid,
                ssvi_vol(&base, rec.tau, rec.k).unwrap(),
                epsilon = 0.0
            );
        }
    }

    #[test]
    fn gen_is_bit_reproducible() {
        let base = SsviParams::default();
        let spec = PerturbationSpec::default();
        let a = gen_ssvi_dataset(&base, 4, &spec, &GridSpec::default(), 99).unwrap();
        let b = gen_ssvi_dataset(&base, 4, &spec, &GridSpec::default(), 99).unwrap();
        for ((sa, pa), (sb, pb)) in a.iter().zip(&b) {
            assert_eq!(pa, pb);
            assert_eq!(sa.records.len(), sb.records.len());
            for (ra, rb) in sa.records.iter().zip(&sb.records) {
                assert_eq!(ra.iv_mid.to_bits(), rb.iv_mid.to_bits());
            }
        }
    }

    #[test]
    fn gen_surfaces_are_arbitrage_free() {
        let base = SsviParams::default();
        let data = gen_ssvi_dataset(&base, 8, &PerturbationSpec::default(), &GridSpec::default(), 5)
            .unwrap();
        let domain = Domain::default();
        for (_, params) in &data {
            let p = *params;
            let surface = move |rho: f64, z: f64| ssvi_vol(&p, rho * rho, z * rho).unwrap();
            let report = validate_surface(&surface, &domain, (50, 50)).unwrap();
            assert!(report.is_free(), "violations: {:?}", report.violation_points);
        }
    }
}
