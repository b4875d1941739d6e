//! Training and finetuning loops.
//!
//! Per surface visit: draw a subsample fraction uniformly from
//! `subsample_range`, keep that fraction of the quotes, jitter the penalty
//! grid's interior nodes uniformly within a quarter cell on each side, and
//! evaluate [`total_loss`]. Gradients are accumulated over `pseudo_batch`
//! surfaces and averaged into one AdamW step. Everything is driven by a
//! single seeded RNG, so runs are bit-reproducible.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::gno::{GnoError, GnoModel, GradientRecord};
use crate::market_data::{Domain, SurfaceSnapshot};

use super::{
    adamw_step, total_loss, AdamWState, ArbGrid, LossTerms, LossWeights, TrainConfig, TrainError,
};

/// Per-epoch averages of the loss terms, one CSV row.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub fit: f64,
    pub but: f64,
    pub cal: f64,
    pub reg_rho: f64,
    pub reg_z: f64,
    /// Optimizer steps taken this epoch (not part of the CSV log).
    #[serde(skip)]
    pub steps: usize,
}

/// Uniform grid with every interior node displaced by `U(−h/4, h/4)`;
/// endpoints stay on the domain boundary so the grid keeps full coverage.
fn jittered_grid(domain: &Domain, m: usize, n: usize, rng: &mut ChaCha8Rng) -> ArbGrid {
    let mut grid = ArbGrid::regular(domain, m, n);
    let h_rho = grid.rho[1] - grid.rho[0];
    for x in &mut grid.rho[1..m - 1] {
        *x += rng.gen_range(-0.25 * h_rho..0.25 * h_rho);
    }
    let h_z = grid.z[1] - grid.z[0];
    for x in &mut grid.z[1..n - 1] {
        *x += rng.gen_range(-0.25 * h_z..0.25 * h_z);
    }
    grid
}

/// Random subsample of a snapshot's records, preserving record order.
fn subsample(snapshot: &SurfaceSnapshot, fraction: f64, rng: &mut ChaCha8Rng) -> SurfaceSnapshot {
    let n = snapshot.records.len();
    let keep = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut idx = rand::seq::index::sample(rng, n, keep).into_vec();
    idx.sort_unstable();
    SurfaceSnapshot {
        timestamp: snapshot.timestamp,
        records: idx.iter().map(|&i| snapshot.records[i].clone()).collect(),
    }
}

const RESAMPLE_CAP: usize = 10;

/// Subsample, jitter, and evaluate one surface; resamples the subsample on
/// `NoNeighbors` up to the cap, then gives up with `None`.
fn surface_loss(
    model: &GnoModel,
    snapshot: &SurfaceSnapshot,
    config: &TrainConfig,
    weights: &LossWeights,
    domain: &Domain,
    rng: &mut ChaCha8Rng,
) -> Result<Option<(LossTerms, GradientRecord)>, TrainError> {
    let [lo, hi] = config.subsample_range;
    let (m, n) = config.arb_grid;
    for _ in 0..=RESAMPLE_CAP {
        let fraction = rng.gen_range(lo..=hi);
        let sub = subsample(snapshot, fraction, rng);
        let grid = jittered_grid(domain, m, n, rng);
        match total_loss(model, &sub, weights, &grid, domain) {
            Ok(out) => return Ok(Some(out)),
            Err(TrainError::Gno(GnoError::NoNeighbors { .. })) => continue,
            Err(e) => return Err(e),
        }
    }
    eprintln!(
        "warning: surface {} skipped after {RESAMPLE_CAP} subsample attempts left \
         query points without neighbors",
        snapshot.timestamp
    );
    Ok(None)
}

/// Process one pseudo-batch of surfaces and take one optimizer step with
/// the averaged gradient. Returns the per-surface loss terms.
fn batch_step(
    model: &mut GnoModel,
    batch: &[&SurfaceSnapshot],
    config: &TrainConfig,
    weights: &LossWeights,
    domain: &Domain,
    state: &mut AdamWState,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<LossTerms>, bool), TrainError> {
    let mut grad = GradientRecord::zeros(model);
    let mut terms = Vec::with_capacity(batch.len());
    for snapshot in batch {
        if let Some((t, g)) = surface_loss(model, snapshot, config, weights, domain, rng)? {
            grad.add(&g);
            terms.push(t);
        }
    }
    if terms.is_empty() {
        return Ok((terms, false));
    }
    grad.scale(1.0 / terms.len() as f64);
    adamw_step(
        &mut model.params,
        &grad.values,
        state,
        config.learning_rate,
        config.weight_decay,
    )?;
    Ok((terms, true))
}

fn epoch_record(epoch: usize, terms: &[LossTerms], steps: usize) -> EpochRecord {
    let n = terms.len().max(1) as f64;
    let sum = |f: fn(&LossTerms) -> f64| terms.iter().map(f).sum::<f64>() / n;
    EpochRecord {
        epoch,
        loss: sum(|t| t.total),
        fit: sum(|t| t.fit),
        but: sum(|t| t.butterfly),
        cal: sum(|t| t.calendar),
        reg_rho: sum(|t| t.reg_rho),
        reg_z: sum(|t| t.reg_z),
        steps,
    }
}

/// Train a model on a snapshot dataset. Fully deterministic given
/// `config.seed`; returns the trained model and the per-epoch loss log.
pub fn train(
    model: GnoModel,
    dataset: &[SurfaceSnapshot],
    config: &TrainConfig,
    weights: &LossWeights,
    domain: &Domain,
) -> Result<(GnoModel, Vec<EpochRecord>), TrainError> {
    config.validate()?;
    weights.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = AdamWState::new(model.params.len());
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_terms = Vec::with_capacity(dataset.len());
        let mut steps = 0;
        for chunk in order.chunks(config.pseudo_batch) {
            let batch: Vec<&SurfaceSnapshot> = chunk.iter().map(|&i| &dataset[i]).collect();
            let (terms, stepped) =
                batch_step(&mut model, &batch, config, weights, domain, &mut state, &mut rng)?;
            epoch_terms.extend(terms);
            steps += stepped as usize;
        }
        log.push(epoch_record(epoch, &epoch_terms, steps));
    }
    Ok((model, log))
}

/// Finetune on new data with replay: every pseudo-batch holds half freshly
/// shuffled `new_data` surfaces and an equal number sampled from
/// `base_data`, so the model adapts without forgetting the base regime.
pub fn finetune(
    model: GnoModel,
    new_data: &[SurfaceSnapshot],
    base_data: &[SurfaceSnapshot],
    config: &TrainConfig,
    weights: &LossWeights,
    domain: &Domain,
) -> Result<(GnoModel, Vec<EpochRecord>), TrainError> {
    config.validate()?;
    weights.validate()?;
    if new_data.is_empty() || base_data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = AdamWState::new(model.params.len());
    let mut log = Vec::with_capacity(config.epochs);
    let half = (config.pseudo_batch / 2).max(1);
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..new_data.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_terms = Vec::new();
        let mut steps = 0;
        for chunk in order.chunks(half) {
            let mut batch: Vec<&SurfaceSnapshot> = chunk.iter().map(|&i| &new_data[i]).collect();
            let replay = rand::seq::index::sample(
                &mut rng,
                base_data.len(),
                chunk.len().min(base_data.len()),
            );
            batch.extend(replay.iter().map(|i| &base_data[i]));
            let (terms, stepped) =
                batch_step(&mut model, &batch, config, weights, domain, &mut state, &mut rng)?;
            epoch_terms.extend(terms);
            steps += stepped as usize;
        }
        log.push(epoch_record(epoch, &epoch_terms, steps));
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gno::GnoConfig;
    use crate::market_data::{OptionRecord, OptionSide};
    use crate::svi::{ssvi_vol, SsviParams};
    use chrono::{TimeZone, Utc};

    fn ssvi_snapshot(offset: f64) -> SurfaceSnapshot {
        let p = SsviParams::default();
        let points = [[0.1, -0.3], [0.3, 0.1], [0.5, -0.5], [0.7, 0.2], [0.9, 0.0]];
        let records = points
            .iter()
            .map(|&[rho, z]| {
                let (tau, k) = (rho * rho, z * rho);
                let v = ssvi_vol(&p, tau, k).unwrap() * (1.0 + offset);
                OptionRecord {
                    tau,
                    k,
                    rho,
                    z,
                    iv_mid: v,
                    iv_bid: None,
                    iv_ask: None,
                    side: if k > 0.0 { OptionSide::Call } else { OptionSide::Put },
                }
            })
            .collect();
        SurfaceSnapshot {
            timestamp: Utc.with_ymd_and_hms(2021, 1, 4, 15, 0, 0).unwrap(),
            records,
        }
    }

    fn tiny_model(seed: u64) -> GnoModel {
        GnoModel::new(
            GnoConfig {
                layers: 2,
                channels: 4,
                lift_hidden: 8,
                kernel_hidden: 8,
                neighbor_cap: 3,
                rho_bar: 2.0,
                ..GnoConfig::default()
            },
            seed,
        )
        .unwrap()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            pseudo_batch: 2,
            arb_grid: (3, 4),
            seed: 11,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        }
    }

    fn dataset() -> Vec<SurfaceSnapshot> {
        vec![ssvi_snapshot(0.0), ssvi_snapshot(0.05), ssvi_snapshot(-0.05)]
    }

    #[test]
    fn training_is_deterministic() {
        let dom = Domain::default();
        let run = || {
            train(
                tiny_model(1),
                &dataset(),
                &tiny_config(),
                &LossWeights::default(),
                &dom,
            )
            .unwrap()
        };
        let (m1, log1) = run();
        let (m2, log2) = run();
        assert!(m1
            .params
            .iter()
            .zip(&m2.params)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        for (a, b) in log1.iter().zip(&log2) {
            assert_eq!(a.loss.to_bits(), b.loss.to_bits());
            assert_eq!(a.fit.to_bits(), b.fit.to_bits());
        }
    }

    #[test]
    fn singleton_dataset_takes_one_step_per_epoch() {
        let dom = Domain::default();
        let config = TrainConfig { pseudo_batch: 1, ..tiny_config() };
        let data = vec![ssvi_snapshot(0.0)];
        let (_, log) =
            train(tiny_model(1), &data, &config, &LossWeights::default(), &dom).unwrap();
        assert_eq!(log.len(), config.epochs);
        assert!(log.iter().all(|r| r.steps == 1));
    }

    #[test]
    fn training_reduces_loss() {
        let dom = Domain::default();
        let config = TrainConfig { epochs: 30, pseudo_batch: 3, ..tiny_config() };
        let (_, log) =
            train(tiny_model(1), &dataset(), &config, &LossWeights::default(), &dom).unwrap();
        assert!(log.last().unwrap().loss < log.first().unwrap().loss);
    }

    #[test]
    fn empty_dataset_rejected() {
        let dom = Domain::default();
        let out = train(tiny_model(1), &[], &tiny_config(), &LossWeights::default(), &dom);
        assert!(matches!(out, Err(TrainError::EmptyDataset)));
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let dom = Domain::default();
        let config = TrainConfig { epochs: 0, ..tiny_config() };
        let before = tiny_model(1);
        let (after, log) =
            train(before.clone(), &dataset(), &config, &LossWeights::default(), &dom).unwrap();
        assert_eq!(before.params, after.params);
        assert!(log.is_empty());
    }

    #[test]
    fn finetune_is_deterministic_and_mixes_datasets() {
        let dom = Domain::default();
        let new_data = vec![ssvi_snapshot(0.3), ssvi_snapshot(0.25)];
        let base = dataset();
        let config = TrainConfig { epochs: 2, ..tiny_config() };
        let run = || {
            finetune(
                tiny_model(1),
                &new_data,
                &base,
                &config,
                &LossWeights::default(),
                &dom,
            )
            .unwrap()
        };
        let (m1, log1) = run();
        let (m2, _) = run();
        assert_eq!(m1.params, m2.params);
        assert_eq!(log1.len(), 2);
        // Each batch holds pairs from both datasets: 2 new + 2 base surfaces
        // per epoch contribute 4 loss evaluations in 2 steps.
        assert!(log1.iter().all(|r| r.steps == 2));
    }
}
