//! Turn raw bid/ask option quotes into a coordinate-normalized surface
//! snapshot: fit forwards from put-call parity, invert OTM mids to implied
//! vols, and map each quote to (ρ, z) = (√τ, k/√τ).

use chrono::{Duration, TimeZone, Utc};
use volsmooth::black_scholes::{bs_call, bs_put};
use volsmooth::market_data::{build_snapshot, Domain, RawQuoteRow};

fn main() {
    let now = Utc.with_ymd_and_hms(2024, 3, 1, 12, 0, 0).unwrap();
    let forward = 100.0;
    let mut rows = Vec::new();
    for days in [30i64, 91, 182] {
        let expiry = (now + Duration::days(days)).date_naive();
        let tau = (days as f64 * 86400.0 - 4.0 * 3600.0) / (365.25 * 86400.0);
        for strike in [80.0, 90.0, 95.0, 100.0, 105.0, 110.0, 120.0] {
            let k = (strike / forward as f64).ln();
            // Quotes at flat 20% vol with a 2-vol-point spread.
            let price = |vol: f64, call: bool| {
                let unit = if call { bs_call(tau, k, vol) } else { bs_put(tau, k, vol) };
                forward * unit.unwrap()
            };
            rows.push(RawQuoteRow {
                timestamp: now,
                expiry,
                strike,
                call_bid: price(0.19, true),
                call_ask: price(0.21, true),
                put_bid: price(0.19, false),
                put_ask: price(0.21, false),
                underlying_mid: forward,
            });
        }
    }

    let build = build_snapshot(&rows, now, &Domain::default()).unwrap();
    for warning in &build.warnings {
        eprintln!("warning: {warning}");
    }
    for fwd in &build.forwards {
        println!(
            "expiry {}  forward {:.4}  discount {:.6}",
            fwd.expiry, fwd.forward, fwd.discount_factor
        );
    }
    println!("{} records:", build.snapshot.records.len());
    for r in build.snapshot.records.iter().take(5) {
        println!(
            "  rho {:.4}  z {:+.4}  iv_mid {:.4}  side {:?}",
            r.rho, r.z, r.iv_mid, r.side
        );
    }
}
