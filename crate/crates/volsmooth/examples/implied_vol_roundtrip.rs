//! Price a grid of forward-units options and invert the prices back to
//! implied volatility, printing the worst round-trip error.

use volsmooth::black_scholes::{bs_otm, implied_vol};

fn main() {
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let tau = 0.01 + 0.99 * i as f64 / 19.0;
        for j in 0..20 {
            let k = -1.5 * tau.sqrt() + 2.0 * tau.sqrt() * j as f64 / 19.0;
            for l in 0..10 {
                let vol = 0.05 + 0.75 * l as f64 / 9.0;
                let price = bs_otm(tau, k, vol).unwrap();
                let recovered = implied_vol(tau, k, price).unwrap();
                worst = worst.max((recovered - vol).abs());
            }
        }
    }
    println!("4000 round trips, worst |recovered - true| = {worst:.3e}");
}
