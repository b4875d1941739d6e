//! Hold-out evaluation of the operator as an interpolator: hide half the
//! quotes of a surface, smooth through the rest, and compare the error on
//! the hidden points with the error on the retained ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use volsmooth::gno::{gno_eval, GnoConfig, GnoModel};
use volsmooth::market_data::SurfaceSnapshot;
use volsmooth::svi::{gen_ssvi_dataset, GridSpec, PerturbationSpec, SsviParams};

fn main() {
    let (snapshot, _) = gen_ssvi_dataset(
        &SsviParams::default(),
        1,
        &PerturbationSpec::zero(),
        &GridSpec::default(),
        3,
    )
    .unwrap()
    .pop()
    .unwrap();

    let n = snapshot.records.len();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut dropped = rand::seq::index::sample(&mut rng, n, n / 2).into_vec();
    dropped.sort_unstable();
    let mut is_dropped = vec![false; n];
    for &i in &dropped {
        is_dropped[i] = true;
    }
    let retained = SurfaceSnapshot {
        timestamp: snapshot.timestamp,
        records: snapshot
            .records
            .iter()
            .zip(&is_dropped)
            .filter(|(_, d)| !**d)
            .map(|(r, _)| r.clone())
            .collect(),
    };

    let mut queries = retained.coords();
    queries.extend(dropped.iter().map(|&i| [snapshot.records[i].rho, snapshot.records[i].z]));
    let model = GnoModel::new(GnoConfig::default(), 3).unwrap();
    let vols = gno_eval(&model, &retained, &queries).unwrap();

    let mape = |pred: &[f64], actual: &[f64]| -> f64 {
        pred.iter().zip(actual).map(|(p, a)| (p - a).abs() / a).sum::<f64>() / actual.len() as f64
    };
    let n_train = retained.records.len();
    let test_actual: Vec<f64> = dropped.iter().map(|&i| snapshot.records[i].iv_mid).collect();
    println!("retained {} quotes, hidden {}", n_train, dropped.len());
    println!("train MAPE {:.4}", mape(&vols[..n_train], &retained.vols()));
    println!("test  MAPE {:.4}  (untrained operator, so both are large)", mape(&vols[n_train..], &test_actual));
}
