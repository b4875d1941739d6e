//! Train a small graph neural operator on a handful of synthetic SSVI
//! surfaces and print the per-epoch loss decomposition.

use volsmooth::gno::{GnoConfig, GnoModel};
use volsmooth::market_data::Domain;
use volsmooth::svi::{gen_ssvi_dataset, GridSpec, PerturbationSpec, SsviParams};
use volsmooth::training::{train, LossWeights, TrainConfig};

fn main() {
    let dataset: Vec<_> = gen_ssvi_dataset(
        &SsviParams::default(),
        4,
        &PerturbationSpec::default(),
        &GridSpec::default(),
        11,
    )
    .unwrap()
    .into_iter()
    .map(|(snapshot, _)| snapshot)
    .collect();

    let gno = GnoConfig {
        layers: 2,
        channels: 4,
        lift_hidden: 16,
        kernel_hidden: 16,
        neighbor_cap: 12,
        rho_bar: 0.4,
        epsilon_arb: 1e-3,
    };
    let config = TrainConfig {
        epochs: 5,
        learning_rate: 1e-3,
        pseudo_batch: 4,
        arb_grid: (8, 8),
        seed: 11,
        ..TrainConfig::default()
    };

    let model = GnoModel::new(gno, 11).unwrap();
    let (_, log) = train(model, &dataset, &config, &LossWeights::default(), &Domain::default())
        .unwrap();
    println!("epoch     loss      fit      but      cal");
    for r in &log {
        println!("{:>5} {:>8.5} {:>8.5} {:>8.5} {:>8.5}", r.epoch, r.loss, r.fit, r.but, r.cal);
    }
}
