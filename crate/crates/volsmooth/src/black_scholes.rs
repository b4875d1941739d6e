//! Normalized Black-Scholes pricing, Greeks, and implied-volatility inversion.
//!
//! All prices are in units of the forward: the call value is
//! `Φ(d1) − e^k Φ(d2)` with `d1 = −k/(v√τ) + v√τ/2` and
//! `d2 = −k/(v√τ) − v√τ/2`. There is no discounting and no dividend
//! handling; those belong to the forward extraction upstream.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BsError {
    #[error("non-finite input: tau={tau}, k={k}, v={v}")]
    NonFinite { tau: f64, k: f64, v: f64 },
    #[error("tau must be positive, got {0}")]
    NonPositiveTau(f64),
    #[error("volatility must be non-negative, got {0}")]
    NegativeVol(f64),
    #[error("price {price} at or below intrinsic value {intrinsic}")]
    BelowIntrinsic { price: f64, intrinsic: f64 },
    #[error("price {price} at or above upper bound {bound}")]
    AboveBound { price: f64, bound: f64 },
    #[error("inversion did not converge after {0} iterations")]
    NoConvergence(usize),
}

/// Standard normal CDF via the complementary error function (≤1e-15 abs error).
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.3989422804014327;
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

#[inline]
pub fn d1(tau: f64, k: f64, v: f64) -> f64 {
    let sq = v * tau.sqrt();
    -k / sq + 0.5 * sq
}

#[inline]
pub fn d2(tau: f64, k: f64, v: f64) -> f64 {
    let sq = v * tau.sqrt();
    -k / sq - 0.5 * sq
}

fn validate(tau: f64, k: f64, v: f64) -> Result<(), BsError> {
    if !(tau.is_finite() && k.is_finite() && v.is_finite()) {
        return Err(BsError::NonFinite { tau, k, v });
    }
    if tau <= 0.0 {
        return Err(BsError::NonPositiveTau(tau));
    }
    if v < 0.0 {
        return Err(BsError::NegativeVol(v));
    }
    Ok(())
}

// Below this total standard deviation the price is numerically intrinsic.
const MIN_TOTAL_STDDEV: f64 = 1e-12;

/// Call price in forward units. `v = 0` is handled as the intrinsic limit
/// `(1 − e^k)^+`.
pub fn bs_call(tau: f64, k: f64, v: f64) -> Result<f64, BsError> {
    validate(tau, k, v)?;
    if v * tau.sqrt() < MIN_TOTAL_STDDEV {
        return Ok((1.0 - k.exp()).max(0.0));
    }
    Ok(norm_cdf(d1(tau, k, v)) - k.exp() * norm_cdf(d2(tau, k, v)))
}

/// Out-of-the-money price: call branch for `k > 0`, put branch for `k ≤ 0`.
pub fn bs_otm(tau: f64, k: f64, v: f64) -> Result<f64, BsError> {
    validate(tau, k, v)?;
    if k > 0.0 {
        bs_call(tau, k, v)
    } else {
        bs_put(tau, k, v)
    }
}

/// Put price in forward units, `e^k Φ(−d2) − Φ(−d1)`.
pub fn bs_put(tau: f64, k: f64, v: f64) -> Result<f64, BsError> {
    validate(tau, k, v)?;
    if v * tau.sqrt() < MIN_TOTAL_STDDEV {
        return Ok((k.exp() - 1.0).max(0.0));
    }
    Ok(k.exp() * norm_cdf(-d2(tau, k, v)) - norm_cdf(-d1(tau, k, v)))
}

/// Black-Scholes Vega `φ(d1)·√τ`, the price sensitivity to volatility.
/// Identical for call and put, and for both OTM branches.
pub fn vega(tau: f64, k: f64, v: f64) -> Result<f64, BsError> {
    validate(tau, k, v)?;
    if v <= 0.0 {
        return Err(BsError::NegativeVol(v));
    }
    Ok(norm_pdf(d1(tau, k, v)) * tau.sqrt())
}

const IV_BRACKET_LO: f64 = 1e-4;
const IV_BRACKET_HI: f64 = 5.0;
const IV_PRICE_TOL: f64 = 1e-12;
const IV_MAX_ITERS: usize = 200;

/// Invert `bs_otm` for the volatility matching `price`.
///
/// Bracketed Newton with bisection fallback on `[1e-4, 5.0]`: a Newton step
/// is accepted only if it stays inside the current bracket, otherwise the
/// iteration bisects. Terminates when the price residual is below 1e-12.
pub fn implied_vol(tau: f64, k: f64, price: f64) -> Result<f64, BsError> {
    if !(tau.is_finite() && k.is_finite() && price.is_finite()) {
        return Err(BsError::NonFinite { tau, k, v: price });
    }
    if tau <= 0.0 {
        return Err(BsError::NonPositiveTau(tau));
    }
    // OTM intrinsic is zero on both branches; upper bound is the v → ∞ limit.
    let intrinsic = 0.0;
    let bound = if k > 0.0 { 1.0 } else { k.exp() };
    if price <= intrinsic {
        return Err(BsError::BelowIntrinsic { price, intrinsic });
    }
    if price >= bound {
        return Err(BsError::AboveBound { price, bound });
    }

    let f = |v: f64| bs_otm(tau, k, v).expect("validated inputs") - price;
    let mut lo = IV_BRACKET_LO;
    let mut hi = IV_BRACKET_HI;
    let f_lo = f(lo);
    if f_lo > 0.0 {
        // Even the lowest bracketed vol overprices; the answer lies below.
        // The OTM price is monotone in v, so bisect down toward zero vol.
        lo = 0.0;
    } else if f(hi) < 0.0 {
        return Err(BsError::AboveBound { price, bound });
    }

    let mut v = 0.5 * (lo + hi);
    for _ in 0..IV_MAX_ITERS {
        let pv = f(v) + price;
        let diff = pv - price;
        // A pure price tolerance is meaningless for deep-OTM prices that
        // sit near the floating-point floor, so also accept once the vol
        // bracket itself has collapsed.
        if diff.abs() < IV_PRICE_TOL * price.min(1.0) || hi - lo < 1e-13 {
            return Ok(v);
        }
        if diff > 0.0 {
            hi = v;
        } else {
            lo = v;
        }
        // Newton on log-price: the plain price residual is hopelessly
        // ill-conditioned deep out of the money, where prices span
        // hundreds of orders of magnitude.
        let vg = vega(tau, k, v.max(IV_BRACKET_LO)).unwrap_or(0.0);
        let newton = if vg > 0.0 && pv > 0.0 {
            v - (pv.ln() - price.ln()) * pv / vg
        } else {
            f64::NAN
        };
        v = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(BsError::NoConvergence(IV_MAX_ITERS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Independent normal CDF oracle: erf via its Maclaurin series for small
    /// |x| and the continued-fraction complement for the tails.
    fn norm_cdf_oracle(x: f64) -> f64 {
        let t = x / std::f64::consts::SQRT_2;
        // Series cancellation grows past |t| ≈ 1; hand the tails to the
        // continued fraction, which is accurate down to |t| ≈ 0.8.
        if t.abs() < 0.8 {
            // erf(t) = 2/sqrt(pi) * sum (-1)^n t^(2n+1) / (n!(2n+1))
            let mut term = t;
            let mut sum = t;
            for n in 1..200 {
                term *= -t * t / n as f64;
                sum += term / (2 * n + 1) as f64;
                if term.abs() < 1e-18 {
                    break;
                }
            }
            0.5 * (1.0 + 2.0 / std::f64::consts::PI.sqrt() * sum)
        } else if t > 0.0 {
            1.0 - norm_cdf_oracle(-x)
        } else {
            // Lentz continued fraction for erfc(|t|).
            let a = t.abs();
            let mut f = a;
            let mut c = a;
            let mut d = 0.0;
            for i in 1..300 {
                let an = 0.5 * i as f64;
                d = a + an * d;
                d = 1.0 / d;
                c = a + an / c;
                f *= c * d;
            }
            let erfc = (-a * a).exp() / std::f64::consts::PI.sqrt() / f;
            0.5 * erfc
        }
    }

    #[test]
    fn zero_vol_atm_call_is_zero() {
        assert_abs_diff_eq!(bs_call(1.0, 0.0, 1e-16).unwrap(), 0.0);
        assert_abs_diff_eq!(bs_call(1.0, 0.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn zero_vol_itm_call_is_intrinsic() {
        let p = bs_call(0.25, -0.1, 1e-16).unwrap();
        assert_abs_diff_eq!(p, 1.0 - (-0.1f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(p, 0.09516258196404048, epsilon = 1e-9);
    }

    #[test]
    fn atm_one_year_twenty_vol() {
        // 2Φ(0.1) − 1 against the series/continued-fraction oracle.
        let expected = 2.0 * norm_cdf_oracle(0.1) - 1.0;
        assert_abs_diff_eq!(expected, 0.0796557, epsilon = 1e-7);
        assert_abs_diff_eq!(bs_call(1.0, 0.0, 0.2).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn cdf_matches_oracle_across_range() {
        for i in -80..=80 {
            let x = i as f64 * 0.1;
            assert_abs_diff_eq!(norm_cdf(x), norm_cdf_oracle(x), epsilon = 1e-14);
        }
    }

    #[test]
    fn otm_equals_call_at_k_zero() {
        // Put-call parity at k = 0 in forward units: C = P.
        let c = bs_call(1.0, 0.0, 0.2).unwrap();
        let p = bs_otm(1.0, 0.0, 0.2).unwrap();
        assert_abs_diff_eq!(c, p, epsilon = 1e-15);
    }

    #[test]
    fn otm_put_intrinsic_is_zero() {
        assert_abs_diff_eq!(bs_otm(0.5, -0.5, 1e-16).unwrap(), 0.0);
    }

    #[test]
    fn otm_call_matches_lognormal_quadrature() {
        // E[(e^X − e^k)^+] with X ~ N(−v²τ/2, v²τ), by Simpson quadrature.
        let (tau, k, v) = (1.0_f64, 0.1_f64, 0.2_f64);
        let s = v * tau.sqrt();
        let mu = -0.5 * s * s;
        let payoff = |x: f64| {
            let dens = norm_pdf((x - mu) / s) / s;
            (x.exp() - k.exp()).max(0.0) * dens
        };
        let (a, b, n) = (-10.0_f64, 10.0_f64, 20001usize);
        let h = (b - a) / (n - 1) as f64;
        let mut integral = payoff(a) + payoff(b);
        for i in 1..n - 1 {
            integral += payoff(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        integral *= h / 3.0;
        assert_abs_diff_eq!(bs_otm(tau, k, v).unwrap(), integral, epsilon = 1e-9);
    }

    #[test]
    fn parity_holds_for_negative_k() {
        for &k in &[-0.5, -0.2, -1e-9, 0.0] {
            let c = bs_call(0.7, k, 0.3).unwrap();
            let p = bs_put(0.7, k, 0.3).unwrap();
            assert_abs_diff_eq!(c - p, 1.0 - k.exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn vega_matches_pdf_oracle() {
        assert_abs_diff_eq!(vega(1.0, 0.0, 0.2).unwrap(), norm_pdf(0.1), epsilon = 1e-15);
        assert_abs_diff_eq!(vega(1.0, 0.0, 0.2).unwrap(), 0.3969525, epsilon = 1e-7);
    }

    #[test]
    fn vega_matches_central_difference() {
        let h = 1e-5;
        for &(tau, k, v) in &[(1.0, 0.0, 0.2), (0.3, -0.4, 0.5), (2.0, 0.3, 0.15)] {
            let fd = (bs_call(tau, k, v + h).unwrap() - bs_call(tau, k, v - h).unwrap()) / (2.0 * h);
            assert_abs_diff_eq!(vega(tau, k, v).unwrap(), fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn implied_vol_round_trip() {
        // Domain-consistent coordinates: τ = ρ², k = z·ρ, so short
        // expiries only carry near-the-money strikes.
        for &rho in &[0.05, 0.3, 1.0] {
            let tau = rho * rho;
            for &z in &[-1.5, -0.4, 0.0, 0.2, 0.5] {
                let k = z * rho;
                let mut v = 0.05;
                while v <= 1.0 {
                    let price = bs_otm(tau, k, v).unwrap();
                    let iv = implied_vol(tau, k, price).unwrap();
                    assert!((iv - v).abs() < 1e-8, "tau={tau} k={k} v={v} iv={iv}");
                    v += 0.05;
                }
            }
        }
    }

    #[test]
    fn implied_vol_boundaries() {
        assert!(matches!(
            implied_vol(1.0, 0.0, 0.0),
            Err(BsError::BelowIntrinsic { .. })
        ));
        assert!(matches!(
            implied_vol(1.0, 0.0, 1.0),
            Err(BsError::AboveBound { .. })
        ));
    }

    #[test]
    fn implied_vol_bisection_oracle() {
        // Independent pure-bisection oracle on bs_otm.
        let (tau, k) = (1.0, 0.0);
        let price = bs_call(1.0, 0.0, 0.2).unwrap();
        let (mut lo, mut hi) = (1e-6, 5.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if bs_otm(tau, k, mid).unwrap() > price {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        assert_abs_diff_eq!(oracle, 0.2, epsilon = 1e-10);
        assert_abs_diff_eq!(implied_vol(tau, k, price).unwrap(), oracle, epsilon = 1e-8);
    }

    #[test]
    fn non_finite_inputs_rejected() {
        assert!(bs_call(f64::NAN, 0.0, 0.2).is_err());
        assert!(vega(1.0, f64::INFINITY, 0.2).is_err());
        assert!(implied_vol(1.0, 0.0, f64::NAN).is_err());
    }

    #[test]
    fn prices_monotone_in_vol() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let rho = rng.gen_range(0.05..1.0f64);
            let tau = rho * rho;
            let k = rng.gen_range(-1.5..0.5) * rho;
            let v = rng.gen_range(0.05..1.0);
            let dv = rng.gen_range(0.01..0.5);
            assert!(bs_call(tau, k, v + dv).unwrap() > bs_call(tau, k, v).unwrap());
            assert!(bs_otm(tau, k, v + dv).unwrap() > bs_otm(tau, k, v).unwrap());
        }
    }
}
