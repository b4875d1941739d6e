//! Generate a synthetic training set of arbitrage-free SSVI surfaces with
//! randomly perturbed parameters, sampled on the standard 8×51 grid.

use volsmooth::svi::{gen_ssvi_dataset, GridSpec, PerturbationSpec, SsviParams};

fn main() {
    let dataset = gen_ssvi_dataset(
        &SsviParams::default(),
        4,
        &PerturbationSpec::default(),
        &GridSpec::default(),
        42,
    )
    .unwrap();

    for (i, (snapshot, params)) in dataset.iter().enumerate() {
        let vols = snapshot.vols();
        let (lo, hi) = vols.iter().fold((f64::MAX, f64::MIN), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        println!(
            "surface {i}: {} points, vol range [{lo:.4}, {hi:.4}], theta {:.4}, rho {:+.4}",
            snapshot.records.len(),
            params.theta,
            params.rho_ssvi
        );
    }
}
