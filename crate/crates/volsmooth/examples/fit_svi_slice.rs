//! Calibrate the five-parameter SVI smile to a single maturity slice of an
//! SSVI surface and report the recovery error.

use volsmooth::svi::{ssvi_vol, svi_calibrate, svi_vol, SsviParams};

fn main() {
    let params = SsviParams::default();
    let tau = 0.25;
    let points: Vec<(f64, f64)> = (0..41)
        .map(|j| {
            let k = -0.6 + 0.025 * j as f64;
            (k, ssvi_vol(&params, tau, k).unwrap())
        })
        .collect();

    let slice = svi_calibrate(&points, tau, None).unwrap();
    println!(
        "fitted slice: a {:+.6}  b {:.6}  rho {:+.6}  m {:+.6}  sigma {:.6}",
        slice.a, slice.b, slice.rho_svi, slice.m, slice.sigma
    );

    let mape: f64 = points
        .iter()
        .map(|&(k, v)| (svi_vol(&slice, k).unwrap() - v).abs() / v)
        .sum::<f64>()
        / points.len() as f64;
    println!("mean absolute percentage error over {} strikes: {:.3e}", points.len(), mape);
}
