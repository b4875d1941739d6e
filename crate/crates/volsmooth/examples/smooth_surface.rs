//! Evaluate an (untrained, all-zero) operator on a dense grid through a
//! snapshot of scattered quotes: with zero parameters the operator outputs
//! ln 2 everywhere, which makes the interpolation plumbing easy to see.

use volsmooth::gno::{gno_eval, GnoConfig, GnoModel};
use volsmooth::svi::{gen_ssvi_dataset, GridSpec, PerturbationSpec, SsviParams};

fn main() {
    let (snapshot, _) = gen_ssvi_dataset(
        &SsviParams::default(),
        1,
        &PerturbationSpec::zero(),
        &GridSpec::default(),
        0,
    )
    .unwrap()
    .pop()
    .unwrap();

    let model = GnoModel::zeroed(GnoConfig::default()).unwrap();
    let queries: Vec<[f64; 2]> = (0..5)
        .flat_map(|i| (0..5).map(move |j| [0.2 + 0.2 * i as f64, -1.2 + 0.4 * j as f64]))
        .collect();
    let vols = gno_eval(&model, &snapshot, &queries).unwrap();

    println!("rho      z        tau      k        vol");
    for (q, v) in queries.iter().zip(&vols) {
        let [rho, z] = *q;
        println!("{:.4}  {:+.4}  {:.4}  {:+.4}  {:.6}", rho, z, rho * rho, z * rho, v);
    }
    println!("(all-zero parameters evaluate to ln 2 = {:.6})", std::f64::consts::LN_2);
}
