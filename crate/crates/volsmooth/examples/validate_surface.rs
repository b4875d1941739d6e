//! Check closed-form surfaces for static arbitrage: an SSVI surface passes
//! both the butterfly and calendar tests, while a surface whose total
//! variance decays in maturity fails the calendar test.

use volsmooth::arbitrage::validate_surface;
use volsmooth::market_data::Domain;
use volsmooth::svi::{ssvi_vol, SsviParams};

fn main() {
    let domain = Domain::default();
    let params = SsviParams::default();

    let good = |rho: f64, z: f64| ssvi_vol(&params, rho * rho, z * rho).unwrap();
    let report = validate_surface(&good, &domain, (50, 50)).unwrap();
    println!(
        "SSVI surface: free = {}, min butterfly {:.4}, min calendar increment {:+.3e}",
        report.is_free(),
        report.min_butterfly,
        report.min_calendar_increment
    );

    // v = 0.05/ρ² makes total vol v·√τ = 0.05/ρ fall with maturity wherever
    // the cap is inactive, which is a calendar-spread arbitrage.
    let bad = |rho: f64, _z: f64| (0.05 / (rho * rho)).min(1.5);
    let report = validate_surface(&bad, &domain, (50, 50)).unwrap();
    println!(
        "decaying surface: free = {}, violations = {}, min calendar increment {:+.3e}",
        report.is_free(),
        report.violation_points.len(),
        report.min_calendar_increment
    );
}
