//! Quote ingestion, forward extraction, and surface snapshot construction.
//!
//! Raw quotes come in nominal price units per (expiry, strike). Forwards and
//! discount factors are recovered per expiry from Put-Call parity by linear
//! regression, after which quotes are converted to forward units, the OTM
//! side is inverted to implied volatility, and records are mapped to the
//! transformed coordinates `ρ = √τ`, `z = k/ρ` and filtered to the domain.

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

use crate::black_scholes::implied_vol;

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("parse error at line {line}: {msg}")]
    ParseError { line: u64, msg: String },
    #[error("fewer than 2 distinct strikes with two-sided quotes for expiry {0}")]
    Underdetermined(NaiveDate),
    #[error("parity regression produced non-positive discount factor {df} for expiry {expiry}")]
    DegenerateParity { expiry: NaiveDate, df: f64 },
    #[error("no records survived ingestion filters")]
    EmptySnapshot,
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// One raw quote row: both option sides for a single (expiry, strike).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawQuoteRow {
    pub timestamp: DateTime<Utc>,
    pub expiry: NaiveDate,
    pub strike: f64,
    pub call_bid: f64,
    pub call_ask: f64,
    pub put_bid: f64,
    pub put_ask: f64,
    pub underlying_mid: f64,
}

/// Per-expiry discount factor and forward from the parity regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardCurvePoint {
    pub expiry: NaiveDate,
    pub discount_factor: f64,
    pub forward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionSide {
    Call,
    Put,
}

/// One quoted option in normalized coordinates.
///
/// `side` follows the OTM convention: put for `k ≤ 0`, call for `k > 0`.
/// Bid/ask vols are absent when the corresponding price failed inversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionRecord {
    pub tau: f64,
    pub k: f64,
    pub rho: f64,
    pub z: f64,
    pub iv_mid: f64,
    pub iv_bid: Option<f64>,
    pub iv_ask: Option<f64>,
    pub side: OptionSide,
}

/// One timestamped discrete surface: the operator's input.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSnapshot {
    pub timestamp: DateTime<Utc>,
    pub records: Vec<OptionRecord>,
}

/// The `(ρ, z)` smoothing domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub rho_min: f64,
    pub rho_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Default for Domain {
    fn default() -> Self {
        Domain {
            rho_min: 0.01,
            rho_max: 1.0,
            z_min: -1.5,
            z_max: 0.5,
        }
    }
}

impl Domain {
    pub fn contains(&self, rho: f64, z: f64) -> bool {
        rho >= self.rho_min && rho <= self.rho_max && z >= self.z_min && z <= self.z_max
    }

    pub fn clamp_z(&self, z: f64) -> f64 {
        z.clamp(self.z_min, self.z_max)
    }
}

/// ACT/365.25 year fraction from `now` to 16:00 on the expiry date.
pub fn year_fraction(now: DateTime<Utc>, expiry: NaiveDate) -> f64 {
    let expiry_instant = expiry.and_hms_opt(16, 0, 0).expect("valid time").and_utc();
    let secs = (expiry_instant - now).num_seconds() as f64;
    secs / (365.25 * 86400.0)
}

/// Fit the per-expiry parity regression `C − P = α + β·K` by OLS;
/// the discount factor is `−β` and the forward `α / (−β)`.
///
/// Uses every strike with both call and put mids present; rows must all
/// belong to a single expiry.
pub fn fit_forward(expiry_rows: &[RawQuoteRow]) -> Result<ForwardCurvePoint, MarketDataError> {
    let expiry = expiry_rows
        .first()
        .map(|r| r.expiry)
        .ok_or(MarketDataError::Underdetermined(NaiveDate::MIN))?;
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for row in expiry_rows {
        let call_mid = 0.5 * (row.call_bid + row.call_ask);
        let put_mid = 0.5 * (row.put_bid + row.put_ask);
        if call_mid > 0.0 && put_mid > 0.0 {
            pts.push((row.strike, call_mid - put_mid));
        }
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts.dedup_by(|a, b| a.0 == b.0);
    if pts.len() < 2 {
        return Err(MarketDataError::Underdetermined(expiry));
    }
    let n = pts.len() as f64;
    let mean_k = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mean_k).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mean_k) * (p.1 - mean_y)).sum();
    let beta = sxy / sxx;
    let alpha = mean_y - beta * mean_k;
    let df = -beta;
    if df <= 0.0 {
        return Err(MarketDataError::DegenerateParity { expiry, df });
    }
    let forward = alpha / df;
    if forward <= 0.0 {
        return Err(MarketDataError::DegenerateParity { expiry, df });
    }
    Ok(ForwardCurvePoint {
        expiry,
        discount_factor: df,
        forward,
    })
}

/// Result of [`build_snapshot`]: the snapshot plus per-row drop warnings.
#[derive(Debug)]
pub struct SnapshotBuild {
    pub snapshot: SurfaceSnapshot,
    pub forwards: Vec<ForwardCurvePoint>,
    pub warnings: Vec<String>,
}

/// Build a domain-filtered [`SurfaceSnapshot`] from raw rows.
///
/// Per row: compute mids, `τ`, `k = log(K/F)`; keep the OTM side only
/// (put for `k ≤ 0`); invert mid/bid/ask prices (in forward units) to
/// implied vols; retain records inside the domain whose mid inverted.
/// Failed bid/ask inversions leave the respective bound absent. Crossed
/// markets (bid > ask) on the OTM side are dropped with a warning.
pub fn build_snapshot(
    rows: &[RawQuoteRow],
    now: DateTime<Utc>,
    domain: &Domain,
) -> Result<SnapshotBuild, MarketDataError> {
    let mut by_expiry: BTreeMap<NaiveDate, Vec<RawQuoteRow>> = BTreeMap::new();
    for row in rows {
        by_expiry.entry(row.expiry).or_default().push(row.clone());
    }

    let mut warnings = Vec::new();
    let mut forwards = Vec::new();
    let mut records: Vec<OptionRecord> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();

    for (expiry, expiry_rows) in &by_expiry {
        let fwd = match fit_forward(expiry_rows) {
            Ok(f) => f,
            Err(e) => {
                warnings.push(format!("expiry {expiry}: dropped ({e})"));
                continue;
            }
        };
        let tau = year_fraction(now, *expiry);
        if tau <= 0.0 {
            warnings.push(format!("expiry {expiry}: non-positive time-to-expiry"));
            continue;
        }
        let rho = tau.sqrt();
        let unit = fwd.discount_factor * fwd.forward;
        for row in expiry_rows {
            let k = (row.strike / fwd.forward).ln();
            let z = k / rho;
            if !domain.contains(rho, z) {
                continue;
            }
            let (bid, ask, side) = if k > 0.0 {
                (row.call_bid, row.call_ask, OptionSide::Call)
            } else {
                (row.put_bid, row.put_ask, OptionSide::Put)
            };
            if bid > ask {
                warnings.push(format!(
                    "expiry {expiry} strike {}: crossed market dropped",
                    row.strike
                ));
                continue;
            }
            let mid = 0.5 * (bid + ask);
            let iv_mid = match implied_vol(tau, k, mid / unit) {
                Ok(v) => v,
                Err(_) => continue,
            };
            let iv_bid = implied_vol(tau, k, bid / unit).ok();
            let iv_ask = implied_vol(tau, k, ask / unit).ok();
            if !seen.insert((rho.to_bits(), z.to_bits())) {
                warnings.push(format!(
                    "expiry {expiry} strike {}: duplicate coordinates dropped",
                    row.strike
                ));
                continue;
            }
            records.push(OptionRecord {
                tau,
                k,
                rho,
                z,
                iv_mid,
                iv_bid,
                iv_ask,
                side,
            });
        }
        forwards.push(fwd);
    }

    if records.is_empty() {
        return Err(MarketDataError::EmptySnapshot);
    }
    let timestamp = rows.first().map(|r| r.timestamp).unwrap_or_default();
    Ok(SnapshotBuild {
        snapshot: SurfaceSnapshot { timestamp, records },
        forwards,
        warnings,
    })
}

const CSV_COLUMNS: [&str; 8] = [
    "timestamp",
    "expiry",
    "strike",
    "call_bid",
    "call_ask",
    "put_bid",
    "put_ask",
    "underlying_mid",
];

/// Load quote rows from CSV. The header is keyed, so any column permutation
/// is accepted; missing columns are a schema error and unparseable numerics
/// are reported with their line number.
pub fn load_quotes_csv(path: impl AsRef<Path>) -> Result<Vec<RawQuoteRow>, MarketDataError> {
    let mut reader = csv::Reader::from_path(path.as_ref())
        .map_err(|e| MarketDataError::SchemaError(e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| MarketDataError::SchemaError(e.to_string()))?
        .clone();
    for col in CSV_COLUMNS {
        if !headers.iter().any(|h| h == col) {
            return Err(MarketDataError::SchemaError(format!(
                "missing column `{col}`"
            )));
        }
    }
    let mut rows = Vec::new();
    for result in reader.deserialize::<RawQuoteRow>() {
        match result {
            Ok(row) => rows.push(row),
            Err(e) => {
                let line = e
                    .position()
                    .map(|p| p.line())
                    .unwrap_or(0);
                return Err(MarketDataError::ParseError {
                    line,
                    msg: e.to_string(),
                });
            }
        }
    }
    Ok(rows)
}

/// Format a float as decimal text with 12 significant digits.
fn sig12(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let s = format!("{:.11e}", v);
    // Normalize "1.23000000000e2" mantissas back to plain decimal text.
    let parsed: f64 = s.parse().expect("formatted float");
    let mag = parsed.abs().log10().floor() as i32;
    let decimals = (11 - mag).clamp(0, 17) as usize;
    let t = format!("{parsed:.decimals$}");
    let t = t.trim_end_matches('0').trim_end_matches('.').to_string();
    if t.is_empty() || t == "-" {
        "0".to_string()
    } else {
        t
    }
}

/// Write quote rows as CSV with numerics at 12 significant digits.
pub fn write_quotes_csv(
    path: impl AsRef<Path>,
    rows: &[RawQuoteRow],
) -> Result<(), MarketDataError> {
    let mut w = csv::Writer::from_path(path.as_ref())
        .map_err(|e| MarketDataError::SchemaError(e.to_string()))?;
    w.write_record(CSV_COLUMNS)
        .map_err(|e| MarketDataError::SchemaError(e.to_string()))?;
    for r in rows {
        w.write_record([
            r.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            r.expiry.to_string(),
            sig12(r.strike),
            sig12(r.call_bid),
            sig12(r.call_ask),
            sig12(r.put_bid),
            sig12(r.put_ask),
            sig12(r.underlying_mid),
        ])
        .map_err(|e| MarketDataError::SchemaError(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct SnapshotPointJson {
    rho: f64,
    z: f64,
    tau: f64,
    k: f64,
    iv: f64,
    iv_bid: Option<f64>,
    iv_ask: Option<f64>,
    side: OptionSide,
}

#[derive(Serialize, Deserialize)]
struct SnapshotJson {
    format_version: u32,
    timestamp: DateTime<Utc>,
    points: Vec<SnapshotPointJson>,
}

impl SurfaceSnapshot {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(SnapshotJson {
            format_version: 1,
            timestamp: self.timestamp,
            points: self
                .records
                .iter()
                .map(|r| SnapshotPointJson {
                    rho: r.rho,
                    z: r.z,
                    tau: r.tau,
                    k: r.k,
                    iv: r.iv_mid,
                    iv_bid: r.iv_bid,
                    iv_ask: r.iv_ask,
                    side: r.side,
                })
                .collect(),
        })
        .expect("snapshot serializes")
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self, MarketDataError> {
        let parsed: SnapshotJson = serde_json::from_value(value)?;
        if parsed.format_version != 1 {
            return Err(MarketDataError::SchemaError(format!(
                "unsupported snapshot format_version {}",
                parsed.format_version
            )));
        }
        Ok(SurfaceSnapshot {
            timestamp: parsed.timestamp,
            records: parsed
                .points
                .into_iter()
                .map(|p| OptionRecord {
                    tau: p.tau,
                    k: p.k,
                    rho: p.rho,
                    z: p.z,
                    iv_mid: p.iv,
                    iv_bid: p.iv_bid,
                    iv_ask: p.iv_ask,
                    side: p.side,
                })
                .collect(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MarketDataError> {
        let text = serde_json::to_string_pretty(&self.to_json())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MarketDataError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(serde_json::from_str(&text)?)
    }

    /// Input coordinates `(ρ, z)` in record order.
    pub fn coords(&self) -> Vec<[f64; 2]> {
        self.records.iter().map(|r| [r.rho, r.z]).collect()
    }

    /// Mid implied vols in record order.
    pub fn vols(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.iv_mid).collect()
    }
}
