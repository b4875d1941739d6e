//! Score a candidate smoothing against reference vols with the two error
//! measures: relative vol error δ_abs and spread-normalized price error
//! δ_spr (δ_spr ≤ 1 means the smoothed price stays inside the quoted
//! bid/ask band).

use volsmooth::metrics::{point_metrics, quantile_levels};

fn main() {
    let tau = 0.25;
    let mut abs_errors = Vec::new();
    let mut spr_errors = Vec::new();
    for j in 0..41 {
        let k = -0.5 + 0.025 * j as f64;
        let v = 0.2 + 0.1 * k * k;
        let v_hat = v * (1.0 + 0.002 * (40.0 * k).sin());
        let pm = point_metrics(tau, k, v_hat, v, Some(v - 0.01), Some(v + 0.01)).unwrap();
        abs_errors.push(pm.delta_abs);
        spr_errors.push(pm.delta_spr.unwrap());
    }

    let q = quantile_levels(&abs_errors, &[0.05, 0.5, 0.95]).unwrap();
    println!("delta_abs quantiles: q05 {:.3e}  q50 {:.3e}  q95 {:.3e}", q[0], q[1], q[2]);
    let q = quantile_levels(&spr_errors, &[0.05, 0.5, 0.95]).unwrap();
    println!("delta_spr quantiles: q05 {:.3e}  q50 {:.3e}  q95 {:.3e}", q[0], q[1], q[2]);
    let inside = spr_errors.iter().filter(|&&d| d <= 1.0).count();
    println!("{inside}/{} smoothed prices inside the bid/ask band", spr_errors.len());
}
