//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::arbitrage::{butterfly_term, validate_surface, SliceJet};
use crate::gno::{gno_eval, load_checkpoint, save_checkpoint, GnoModel, GnoSurface};
use crate::market_data::{build_snapshot, load_quotes_csv, Domain, SurfaceSnapshot};
use crate::metrics::{
    benchmark_summary, point_metrics, quantile_levels, SpatialPoint, SurfaceAggregates,
    SPATIAL_BINS,
};
use crate::svi::{gen_ssvi_dataset, svi_calibrate, svi_vol};
use crate::training::{self, TrainConfig};

use super::{BacktestMode, CliError, Outcome, RunConfig};

fn parse_grid(text: &str) -> Result<(usize, usize), CliError> {
    let parts: Vec<&str> = text.split(',').collect();
    let bad = || CliError::Config(format!("grid must be `m,n` with m,n >= 3, got `{text}`"));
    if parts.len() != 2 {
        return Err(bad());
    }
    let m: usize = parts[0].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[1].trim().parse().map_err(|_| bad())?;
    if m < 3 || n < 3 {
        return Err(bad());
    }
    Ok((m, n))
}

fn load_snapshot(path: &Path) -> Result<SurfaceSnapshot, CliError> {
    SurfaceSnapshot::load(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// All `*.json` snapshots of a directory, sorted by file name.
fn load_snapshot_dir(dir: &Path) -> Result<Vec<(PathBuf, SurfaceSnapshot)>, CliError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Data(format!("no snapshot JSON files in {}", dir.display())));
    }
    paths
        .into_iter()
        .map(|p| load_snapshot(&p).map(|s| (p, s)))
        .collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Data(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub(super) fn ingest(config: &RunConfig, quotes: &Path, out: &Path) -> Result<Outcome, CliError> {
    let rows = load_quotes_csv(quotes)?;
    let mut by_ts: BTreeMap<DateTime<Utc>, Vec<_>> = BTreeMap::new();
    for row in rows {
        by_ts.entry(row.timestamp).or_default().push(row);
    }
    if by_ts.is_empty() {
        return Err(CliError::Data(format!("no quote rows in {}", quotes.display())));
    }
    let mut outputs = Vec::new();
    for (ts, rows) in by_ts {
        let build = build_snapshot(&rows, ts, &config.domain)?;
        for warning in &build.warnings {
            eprintln!("warning: {warning}");
        }
        let path = out.join(format!("snapshot_{}.json", ts.format("%Y%m%dT%H%M%S")));
        build
            .snapshot
            .save(&path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        outputs.push(path);
    }
    Ok(Outcome {
        subcommand: "ingest",
        inputs: vec![quotes.to_path_buf()],
        outputs,
        exit_code: 0,
    })
}

pub(super) fn gen_ssvi(config: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let ssvi = &config.ssvi;
    let dataset = gen_ssvi_dataset(
        &ssvi.base,
        ssvi.n_surfaces,
        &ssvi.perturbation,
        &ssvi.grid,
        config.seed,
    )?;
    let snap_dir = out.join("snapshots");
    std::fs::create_dir_all(&snap_dir)
        .map_err(|e| CliError::Data(format!("{}: {e}", snap_dir.display())))?;
    let mut outputs = Vec::new();
    let mut params = Vec::new();
    for (idx, (snapshot, p)) in dataset.iter().enumerate() {
        let path = snap_dir.join(format!("ssvi_{idx:04}.json"));
        snapshot
            .save(&path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        outputs.push(path);
        params.push(p);
    }
    let params_path = out.join("ssvi_params.json");
    write_json(&params_path, &params)?;
    outputs.push(params_path);
    Ok(Outcome { subcommand: "gen-ssvi", inputs: vec![], outputs, exit_code: 0 })
}

#[derive(Serialize)]
struct SviFitRow {
    tau: f64,
    a: f64,
    b: f64,
    rho_svi: f64,
    m: f64,
    sigma: f64,
    n_points: usize,
    mape: f64,
}

pub(super) fn fit_svi(
    _config: &RunConfig,
    snapshot_path: &Path,
    out: &Path,
) -> Result<Outcome, CliError> {
    let snapshot = load_snapshot(snapshot_path)?;
    let mut slices: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &snapshot.records {
        slices.entry(r.tau.to_bits()).or_default().push((r.k, r.iv_mid));
    }
    let mut rows = Vec::new();
    for (tau_bits, points) in slices {
        let tau = f64::from_bits(tau_bits);
        if points.len() < 5 {
            eprintln!("warning: skipping tau {tau}: only {} quotes", points.len());
            continue;
        }
        let slice = svi_calibrate(&points, tau, None)?;
        let mut mape = 0.0;
        for &(k, v) in &points {
            mape += (svi_vol(&slice, k)? - v).abs() / v;
        }
        mape /= points.len() as f64;
        rows.push(SviFitRow {
            tau,
            a: slice.a,
            b: slice.b,
            rho_svi: slice.rho_svi,
            m: slice.m,
            sigma: slice.sigma,
            n_points: points.len(),
            mape,
        });
    }
    if rows.is_empty() {
        return Err(CliError::Data("no slice had enough quotes to calibrate".into()));
    }
    let path = out.join("svi_fit.json");
    write_json(&path, &rows)?;
    Ok(Outcome {
        subcommand: "fit-svi",
        inputs: vec![snapshot_path.to_path_buf()],
        outputs: vec![path],
        exit_code: 0,
    })
}

fn write_loss_log(path: &Path, log: &[training::EpochRecord]) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    for record in log {
        writer
            .serialize(record)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    }
    writer
        .flush()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub(super) fn train(
    config: &RunConfig,
    data: &Path,
    epochs: Option<usize>,
    out: &Path,
) -> Result<Outcome, CliError> {
    let snapshots = load_snapshot_dir(data)?;
    let inputs: Vec<PathBuf> = snapshots.iter().map(|(p, _)| p.clone()).collect();
    let dataset: Vec<SurfaceSnapshot> = snapshots.into_iter().map(|(_, s)| s).collect();
    let train_config = TrainConfig {
        epochs: epochs.unwrap_or(config.train.epochs),
        ..config.train
    };
    let model = GnoModel::new(config.gno, config.seed)?;
    let (model, log) =
        training::train(model, &dataset, &train_config, &config.weights, &config.domain)?;
    let ckpt_path = out.join("checkpoint.json");
    save_checkpoint(&model, &ckpt_path)?;
    let log_path = out.join("loss_log.csv");
    write_loss_log(&log_path, &log)?;
    Ok(Outcome {
        subcommand: "train",
        inputs,
        outputs: vec![ckpt_path, log_path],
        exit_code: 0,
    })
}

pub(super) fn finetune(
    config: &RunConfig,
    checkpoint: &Path,
    new_data: &Path,
    base_data: &Path,
    epochs: Option<usize>,
    out: &Path,
) -> Result<Outcome, CliError> {
    let model = load_checkpoint(checkpoint)?;
    let new_snaps = load_snapshot_dir(new_data)?;
    let base_snaps = load_snapshot_dir(base_data)?;
    let mut inputs = vec![checkpoint.to_path_buf()];
    inputs.extend(new_snaps.iter().map(|(p, _)| p.clone()));
    inputs.extend(base_snaps.iter().map(|(p, _)| p.clone()));
    let new_set: Vec<SurfaceSnapshot> = new_snaps.into_iter().map(|(_, s)| s).collect();
    let base_set: Vec<SurfaceSnapshot> = base_snaps.into_iter().map(|(_, s)| s).collect();
    let train_config = TrainConfig {
        epochs: epochs.unwrap_or(config.finetune_epochs),
        ..config.train
    };
    let (model, log) = training::finetune(
        model,
        &new_set,
        &base_set,
        &train_config,
        &config.weights,
        &config.domain,
    )?;
    let ckpt_path = out.join("checkpoint_finetuned.json");
    save_checkpoint(&model, &ckpt_path)?;
    let log_path = out.join("finetune_loss_log.csv");
    write_loss_log(&log_path, &log)?;
    Ok(Outcome {
        subcommand: "finetune",
        inputs,
        outputs: vec![ckpt_path, log_path],
        exit_code: 0,
    })
}

fn grid_points(domain: &Domain, m: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let lin = |lo: f64, hi: f64, count: usize| -> Vec<f64> {
        let step = (hi - lo) / (count - 1) as f64;
        (0..count).map(|i| lo + step * i as f64).collect()
    };
    (
        lin(domain.rho_min, domain.rho_max, m),
        lin(domain.z_min, domain.z_max, n),
    )
}

pub(super) fn smooth(
    config: &RunConfig,
    checkpoint: &Path,
    snapshot_path: &Path,
    grid: &str,
    out: &Path,
) -> Result<Outcome, CliError> {
    let (m, n) = parse_grid(grid)?;
    let model = load_checkpoint(checkpoint)?;
    let snapshot = load_snapshot(snapshot_path)?;
    let (rhos, zs) = grid_points(&config.domain, m, n);
    let mut queries = Vec::with_capacity(m * n);
    for &rho in &rhos {
        for &z in &zs {
            queries.push([rho, z]);
        }
    }
    let vols = gno_eval(&model, &snapshot, &queries)?;
    let path = out.join("smoothed.csv");
    let mut writer = csv::Writer::from_path(&path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    writer
        .write_record(["rho", "z", "tau", "k", "vol"])
        .map_err(|e| CliError::Data(e.to_string()))?;
    for (q, v) in queries.iter().zip(&vols) {
        let [rho, z] = *q;
        writer
            .write_record([
                rho.to_string(),
                z.to_string(),
                (rho * rho).to_string(),
                (z * rho).to_string(),
                v.to_string(),
            ])
            .map_err(|e| CliError::Data(e.to_string()))?;
    }
    writer.flush().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(Outcome {
        subcommand: "smooth",
        inputs: vec![checkpoint.to_path_buf(), snapshot_path.to_path_buf()],
        outputs: vec![path],
        exit_code: 0,
    })
}

pub(super) fn validate(
    config: &RunConfig,
    checkpoint: &Path,
    snapshot_path: &Path,
    grid: &str,
    out: &Path,
) -> Result<Outcome, CliError> {
    let (m, n) = parse_grid(grid)?;
    let model = load_checkpoint(checkpoint)?;
    let snapshot = load_snapshot(snapshot_path)?;
    let surface = GnoSurface { model: &model, snapshot: &snapshot };
    let report = validate_surface(&surface, &config.domain, (m, n))?;
    let path = out.join("validate_report.json");
    write_json(&path, &report)?;
    let free = report.is_free();
    if !free {
        eprintln!(
            "validation failed: {} violation(s), min butterfly {}, min calendar increment {}",
            report.violation_points.len(),
            report.min_butterfly,
            report.min_calendar_increment
        );
    }
    Ok(Outcome {
        subcommand: "validate",
        inputs: vec![checkpoint.to_path_buf(), snapshot_path.to_path_buf()],
        outputs: vec![path],
        exit_code: if free { 0 } else { 5 },
    })
}

/// Butterfly term and `v·√τ` calendar increment of the model surface at a
/// quote location, via small central stencils around the point.
const PROBE_H: f64 = 1e-3;

fn record_shape_metrics(
    vols: &[f64],
    v0: f64,
    rho: f64,
    z: f64,
) -> (f64, f64) {
    let (vm, vp, v_next) = (vols[0], vols[1], vols[2]);
    let v1 = (vp - vm) / (2.0 * PROBE_H) / rho;
    let v2 = (vp - 2.0 * v0 + vm) / (PROBE_H * PROBE_H) / (rho * rho);
    let jet = SliceJet { tau: rho * rho, k: z * rho, v0, v1, v2 };
    let but = butterfly_term(&jet);
    let rho_next = rho + PROBE_H;
    let cal = v_next * rho_next - v0 * rho;
    (but, cal)
}

pub(super) fn benchmark(
    config: &RunConfig,
    checkpoint: &Path,
    data: &Path,
    out: &Path,
) -> Result<Outcome, CliError> {
    let model = load_checkpoint(checkpoint)?;
    let snapshots = load_snapshot_dir(data)?;
    let mut inputs = vec![checkpoint.to_path_buf()];
    inputs.extend(snapshots.iter().map(|(p, _)| p.clone()));
    let mut per_surface = Vec::with_capacity(snapshots.len());
    let mut spatial = Vec::new();
    for (_, snapshot) in &snapshots {
        let coords = snapshot.coords();
        let mut queries = coords.clone();
        for r in &snapshot.records {
            let rho_next = r.rho + PROBE_H;
            queries.push([r.rho, r.z - PROBE_H]);
            queries.push([r.rho, r.z + PROBE_H]);
            queries.push([rho_next, r.k / rho_next]);
        }
        let vols = gno_eval(&model, snapshot, &queries)?;
        let n = coords.len();
        let mut sum_abs = 0.0;
        let mut sum_spr = 0.0;
        let mut n_spr = 0usize;
        let mut sum_s = 0.0;
        for (i, r) in snapshot.records.iter().enumerate() {
            let v_hat = vols[i];
            let pm = point_metrics(r.tau, r.k, v_hat, r.iv_mid, r.iv_bid, r.iv_ask)?;
            sum_abs += pm.delta_abs;
            if let (Some(ds), Some(s)) = (pm.delta_spr, pm.spread) {
                sum_spr += ds;
                sum_s += s;
                n_spr += 1;
            }
            let probes = &vols[n + 3 * i..n + 3 * i + 3];
            let (but, cal) = record_shape_metrics(probes, v_hat, r.rho, r.z);
            spatial.push(SpatialPoint {
                rho: r.rho,
                z: r.z,
                delta_abs: pm.delta_abs,
                delta_spr: pm.delta_spr,
                butterfly: but,
                calendar_increment: cal,
            });
        }
        per_surface.push(SurfaceAggregates {
            mean_delta_abs: sum_abs / n as f64,
            mean_delta_spr: (n_spr > 0).then(|| sum_spr / n_spr as f64),
            mean_spread: (n_spr > 0).then(|| sum_s / n_spr as f64),
        });
    }
    let summary = benchmark_summary(&per_surface, &spatial, &config.domain, SPATIAL_BINS)?;
    let json_path = out.join("benchmark_summary.json");
    write_json(&json_path, &summary)?;
    let csv_path = out.join("benchmark_spatial.csv");
    let mut writer = csv::Writer::from_path(&csv_path)
        .map_err(|e| CliError::Data(format!("{}: {e}", csv_path.display())))?;
    for bin in &summary.spatial {
        writer.serialize(bin).map_err(|e| CliError::Data(e.to_string()))?;
    }
    writer.flush().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(Outcome {
        subcommand: "benchmark",
        inputs,
        outputs: vec![json_path, csv_path],
        exit_code: 0,
    })
}

#[derive(Serialize)]
struct Quantiles {
    q05: f64,
    q50: f64,
    q95: f64,
}

#[derive(Serialize)]
struct ModeReport {
    train: Quantiles,
    test: Quantiles,
    n_surfaces: usize,
}

#[derive(Serialize)]
struct BacktestReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    interpolate: Option<ModeReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    extrapolate: Option<ModeReport>,
}

/// Indices to drop: a uniform random half (interpolate) or the outermost
/// half by |z| within each maturity slice (extrapolate).
fn dropped_indices(
    snapshot: &SurfaceSnapshot,
    mode: BacktestMode,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let n = snapshot.records.len();
    match mode {
        BacktestMode::Interpolate => {
            rand::seq::index::sample(rng, n, n / 2).into_vec()
        }
        BacktestMode::Extrapolate => {
            let mut slices: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
            for (i, r) in snapshot.records.iter().enumerate() {
                slices.entry(r.rho.to_bits()).or_default().push(i);
            }
            let mut dropped = Vec::new();
            for (_, mut idx) in slices {
                idx.sort_by(|&a, &b| {
                    snapshot.records[b]
                        .z
                        .abs()
                        .total_cmp(&snapshot.records[a].z.abs())
                        .then(a.cmp(&b))
                });
                dropped.extend_from_slice(&idx[..idx.len() / 2]);
            }
            dropped
        }
        BacktestMode::Both => unreachable!("expanded before dispatch"),
    }
}

fn mape(predicted: &[f64], actual: &[f64]) -> f64 {
    predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a).abs() / a)
        .sum::<f64>()
        / actual.len() as f64
}

fn backtest_mode(
    model: &GnoModel,
    snapshots: &[(PathBuf, SurfaceSnapshot)],
    mode: BacktestMode,
    seed: u64,
) -> Result<ModeReport, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_mapes = Vec::new();
    let mut test_mapes = Vec::new();
    for (path, snapshot) in snapshots {
        let mut dropped = dropped_indices(snapshot, mode, &mut rng);
        dropped.sort_unstable();
        if dropped.is_empty() || dropped.len() == snapshot.records.len() {
            eprintln!("warning: {} too small to backtest, skipped", path.display());
            continue;
        }
        let mut is_dropped = vec![false; snapshot.records.len()];
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
        let train_coords = retained.coords();
        let test_coords: Vec<[f64; 2]> =
            dropped.iter().map(|&i| [snapshot.records[i].rho, snapshot.records[i].z]).collect();
        let mut queries = train_coords;
        queries.extend(&test_coords);
        let vols = gno_eval(model, &retained, &queries)?;
        let n_train = retained.records.len();
        let train_actual = retained.vols();
        let test_actual: Vec<f64> =
            dropped.iter().map(|&i| snapshot.records[i].iv_mid).collect();
        train_mapes.push(mape(&vols[..n_train], &train_actual));
        test_mapes.push(mape(&vols[n_train..], &test_actual));
    }
    if train_mapes.is_empty() {
        return Err(CliError::Data("no snapshot was large enough to backtest".into()));
    }
    let q = |values: &[f64]| -> Result<Quantiles, CliError> {
        let v = quantile_levels(values, &[0.05, 0.5, 0.95])?;
        Ok(Quantiles { q05: v[0], q50: v[1], q95: v[2] })
    };
    Ok(ModeReport {
        train: q(&train_mapes)?,
        test: q(&test_mapes)?,
        n_surfaces: train_mapes.len(),
    })
}

pub(super) fn backtest(
    config: &RunConfig,
    checkpoint: &Path,
    data: &Path,
    mode: BacktestMode,
    out: &Path,
) -> Result<Outcome, CliError> {
    let model = load_checkpoint(checkpoint)?;
    let snapshots = load_snapshot_dir(data)?;
    let mut inputs = vec![checkpoint.to_path_buf()];
    inputs.extend(snapshots.iter().map(|(p, _)| p.clone()));
    let report = BacktestReport {
        interpolate: matches!(mode, BacktestMode::Interpolate | BacktestMode::Both)
            .then(|| backtest_mode(&model, &snapshots, BacktestMode::Interpolate, config.seed))
            .transpose()?,
        extrapolate: matches!(mode, BacktestMode::Extrapolate | BacktestMode::Both)
            .then(|| backtest_mode(&model, &snapshots, BacktestMode::Extrapolate, config.seed))
            .transpose()?,
    };
    let path = out.join("backtest_report.json");
    write_json(&path, &report)?;
    Ok(Outcome { subcommand: "backtest", inputs, outputs: vec![path], exit_code: 0 })
}
