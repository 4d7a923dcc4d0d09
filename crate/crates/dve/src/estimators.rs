//! The 11 sampling-based distinct value estimators.
//!
//! Every estimator is a pure function of `(profile, N, q)` where the
//! profile carries `f_i`, `n` and `d`. Four families are covered: the
//! Schlosser estimators (SH, SH2, SH3), the jackknives (UJ1, UJ2, SJ2,
//! UJ2A), the guaranteed-error / adaptive pair (GEE, AE), and the
//! sample-coverage pair (CL1, CL2).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DveError, Result};
use crate::profile::FrequencyProfile;

/// Truncation threshold for the stabilized jackknife: classes with sample
/// frequency above this are removed before the inner estimate.
pub const STABILIZATION_CUTOFF: u64 = 50;

/// Exponent bound above which the exact first factor of SH2 is replaced
/// by its large-`N` limit `q/(1+q)`; chosen at the double-precision exp
/// overflow boundary with margin.
const SH2_EXP_GUARD: f64 = 700.0;

/// Closed enumeration of the estimators under study, in the study's
/// column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorId {
    Uj1,
    Uj2,
    Sj2,
    Uj2a,
    Sh,
    Sh2,
    Sh3,
    Gee,
    Ae,
    Cl1,
    Cl2,
}

impl EstimatorId {
    pub const ALL: [EstimatorId; 11] = [
        EstimatorId::Uj1,
        EstimatorId::Uj2,
        EstimatorId::Sj2,
        EstimatorId::Uj2a,
        EstimatorId::Sh,
        EstimatorId::Sh2,
        EstimatorId::Sh3,
        EstimatorId::Gee,
        EstimatorId::Ae,
        EstimatorId::Cl1,
        EstimatorId::Cl2,
    ];

    /// Stable name used in CLI flags, CSV columns, and JSON keys.
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorId::Uj1 => "uj1",
            EstimatorId::Uj2 => "uj2",
            EstimatorId::Sj2 => "sj2",
            EstimatorId::Uj2a => "uj2a",
            EstimatorId::Sh => "sh",
            EstimatorId::Sh2 => "sh2",
            EstimatorId::Sh3 => "sh3",
            EstimatorId::Gee => "gee",
            EstimatorId::Ae => "ae",
            EstimatorId::Cl1 => "cl1",
            EstimatorId::Cl2 => "cl2",
        }
    }
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorId {
    type Err = DveError;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorId::ALL
            .iter()
            .find(|e| e.name() == s)
            .copied()
            .ok_or_else(|| DveError::InvalidSpec(format!("unknown estimator '{s}'")))
    }
}

/// One estimate plus optional numeric diagnostics (the γ̂² that was used,
/// AE iteration count, whether the SH2 overflow guard fired, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub estimate: f64,
    pub diagnostics: BTreeMap<&'static str, f64>,
}

impl EstimateResult {
    fn plain(estimate: f64) -> Self {
        Self { estimate, diagnostics: BTreeMap::new() }
    }

    fn with(estimate: f64, diagnostics: impl IntoIterator<Item = (&'static str, f64)>) -> Self {
        Self { estimate, diagnostics: diagnostics.into_iter().collect() }
    }
}

fn check_q(q: f64) -> Result<()> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(DveError::InvalidSpec(format!("q must be in (0, 1], got {q}")));
    }
    Ok(())
}

/// First-order unsmoothed jackknife: `D̂ = d / (1 − (1−q)·f₁/n)`.
pub fn est_uj1(profile: &FrequencyProfile, _n_total: u64, q: f64) -> Result<EstimateResult> {
    check_q(q)?;
    let n = profile.n() as f64;
    let d = profile.d() as f64;
    let f1 = profile.f(1) as f64;
    let denom = 1.0 - (1.0 - q) * f1 / n;
    if denom <= 0.0 {
        return Err(DveError::DegenerateProfile(
            "uj1 denominator 1 - (1-q) f1/n is not positive".into(),
        ));
    }
    Ok(EstimateResult::plain(d / denom))
}

/// Method-of-moments estimate of γ² given a working estimate of `D`:
/// `max(0, (D̂/n²)·Σ i(i−1)f_i + D̂/N − 1)`.
pub fn gamma_sq_mom(d_hat: f64, profile: &FrequencyProfile, n_total: u64) -> f64 {
    let n = profile.n() as f64;
    let raw = d_hat / (n * n) * profile.second_factorial_moment() + d_hat / n_total as f64 - 1.0;
    raw.max(0.0)
}

/// Second-order unsmoothed jackknife, using γ̂²(D̂_uj1).
pub fn est_uj2(profile: &FrequencyProfile, n_total: u64, q: f64) -> Result<EstimateResult> {
    check_q(q)?;
    let uj1 = est_uj1(profile, n_total, q)?.estimate;
    let gamma = gamma_sq_mom(uj1, profile, n_total);
    let n = profile.n() as f64;
    let d = profile.d() as f64;
    let f1 = profile.f(1) as f64;
    let denom = 1.0 - (1.0 - q) * f1 / n;
    // (1-q)ln(1-q) -> 0 as q -> 1, so the correction vanishes at q=1.
    let correction = if q == 1.0 {
        0.0
    } else {
        f1 * (1.0 - q) * (1.0 - q).ln() * gamma / q
    };
    Ok(EstimateResult::with(
        (d - correction) / denom,
        [("gamma_sq_hat", gamma)],
    ))
}

/// Smoothed second-order jackknife with `Ñ = N/D̂_uj1`.
pub fn est_sj2(profile: &FrequencyProfile, n_total: u64, q: f64) -> Result<EstimateResult> {
    check_q(q)?;
    let d = profile.d() as f64;
    if q == 1.0 {
        return Ok(EstimateResult::plain(d));
    }
    let uj1 = est_uj1(profile, n_total, q)?.estimate;
    let gamma = gamma_sq_mom(uj1, profile, n_total);
    let n_tilde = n_total as f64 / uj1;
    // exp-form keeps (1-q)^N_tilde finite; underflow to 0 is fine.
    let pow = (n_tilde * (1.0 - q).ln()).exp();
    let estimate = (d - pow * (1.0 - q).ln() * n_total as f64 * gamma) / (1.0 - pow);
    Ok(EstimateResult::with(
        estimate,
        [("gamma_sq_hat", gamma), ("n_tilde", n_tilde)],
    ))
}

/// Stabilized jackknife: truncate classes with sample frequency above the
/// cutoff, apply the second-order jackknife to the reduced sample, and add
/// the removed classes back. `N` and `q` are left unchanged for the inner
/// estimate.
pub fn est_uj2a(profile: &FrequencyProfile, n_total: u64, q: f64) -> Result<EstimateResult> {
    est_uj2a_with_cutoff(profile, n_total, q, STABILIZATION_CUTOFF)
}

pub fn est_uj2a_with_cutoff(
    profile: &FrequencyProfile,
    n_total: u64,
    q: f64,
    cutoff: u64,
) -> Result<EstimateResult> {
    check_q(q)?;
    let (kept, removed) = profile.truncate_above(cutoff);
    match kept {
        None => Ok(EstimateResult::with(removed as f64, [("removed_classes", removed as f64)])),
        Some(reduced) => {
            let inner = est_uj2(&reduced, n_total, q)?;
            let mut diagnostics = inner.diagnostics;
            diagnostics.insert("removed_classes", removed as f64);
            Ok(EstimateResult { estimate: inner.estimate + removed as f64, diagnostics })
        }
    }
}

/// The two Schlosser power sums `Σ(1−q)^i f_i` and `Σ i q (1−q)^{i−1} f_i`.
fn schlosser_sums(profile: &FrequencyProfile, q: f64) -> (f64, f64) {
    let base = 1.0 - q;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, f) in profile.iter() {
        let f = f as f64;
        let p = base.powi(i.min(i32::MAX as u64) as i32);
        num += p * f;
        den += i as f64 * q * base.powi((i - 1).min(i32::MAX as u64) as i32) * f;
    }
    (num, den)
}

/// The original Schlosser estimator.
pub fn est_sh(profile: &FrequencyProfile, _n_total: u64, q: f64) -> Result<EstimateResult> {
    check_q(q)?;
    let d = profile.d() as f64;
    let f1 = profile.f(1) as f64;
    if f1 == 0.0 || q == 1.0 {
        return Ok(EstimateResult::plain(d));
    }
    let (num, den) = schlosser_sums(profile, q);
    Ok(EstimateResult::plain(d + f1 * num / den))
}

/// Schlosser variant with the `q(1+q)^{Ñ−1}/((1+q)^Ñ − 1)` correction
/// factor, `Ñ = N/D̂_uj1`. The exact factor is replaced by its large-`N`
/// limit `q/(1+q)` when the exponent would overflow.
pub fn est_sh2(profile: &FrequencyProfile, n_total: u64, q: f64) -> Result<EstimateResult> {
    check_q(q)?;
    let d = profile.d() as f64;
    let f1 = profile.f(1) as f64;
    if f1 == 0.0 || q == 1.0 {
        return Ok(EstimateResult::plain(d));
    }
    let uj1 = est_uj1(profile, n_total, q)?.estimate;
    let n_tilde = n_total as f64 / uj1;
    let log1q = (1.0 + q).ln();
    let (factor, approx) = if n_tilde * log1q <= SH2_EXP_GUARD {
        let pow_n = (n_tilde * log1q).exp();
        (q * pow_n / (1.0 + q) / (pow_n - 1.0), 0.0)
    } else {
        (q / (1.0 + q), 1.0)
    };
    let (num, den) = schlosser_sums(profile, q);
    Ok(EstimateResult::with(
        d + f1 * factor * num / den,
        [("n_tilde", n_tilde), ("overflow_approx", approx)],
    ))
}

/// Schlosser variant with the `i q²(1−q²)^{i−1}` correction factor.
pub fn est_sh3(profile: &FrequencyProfile, _n_total: u64, q: f64) -> Result<EstimateResult> {
    check_q(q)?;
    let d = profile.d() as f64;
    let f1 = profile.f(1) as f64;
    if f1 == 0.0 || q == 1.0 {
        // q=1 is the limit of a 0/0 factor; the (1-q)^i sums vanish.
        return Ok(EstimateResult::plain(d));
    }
    let mut first_num = 0.0;
    let mut first_den = 0.0;
    for (i, f) in profile.iter() {
        let f = f as f64;
        let im1 = (i - 1) as f64;
        let ii = i as f64;
        first_num += ii * q * q * (1.0 - q * q).powf(im1) * f;
        // (1−q)^i·((1+q)^i − 1) written as (1−q²)^i − (1−q)^i, which
        // underflows gracefully instead of producing 0·∞ for large i.
        first_den += ((1.0 - q * q).powf(ii) - (1.0 - q).powf(ii)) * f;
    }
    let (num, den) = schlosser_sums(profile, q);
    Ok(EstimateResult::plain(d + f1 * (first_num / first_den) * num / den))
}

/// Guaranteed-error estimator: `√(N/n)·f₁ + Σ_{j≥2} f_j`.
pub fn est_gee(profile: &FrequencyProfile, n_total: u64, q: f64) -> Result<EstimateResult> {
    check_q(q)?;
    let n = profile.n() as f64;
    let d = profile.d() as f64;
    let f1 = profile.f(1) as f64;
    Ok(EstimateResult::plain((n_total as f64 / n).sqrt() * f1 + (d - f1)))
}

/// Adaptive estimator: `D̂ = d + K(m)·f₁` where `m` solves the fixed-point
/// equation `m − f₁ − f₂ = K(m)·f₁`.
pub fn est_ae(profile: &FrequencyProfile, n_total: u64, q: f64) -> Result<EstimateResult> {
    est_ae_with_options(profile, n_total, q, 100, 1e-9)
}

/// The AE multiplier `K(m)` and the pieces it is built from.
fn ae_k(m: f64, f1: f64, f2: f64, s: f64, t: f64) -> f64 {
    let u = f1 + 2.0 * f2;
    (s + m * (u / m).exp()) / (t + u * (-u / m).exp())
}

pub fn est_ae_with_options(
    profile: &FrequencyProfile,
    n_total: u64,
    q: f64,
    max_iter: u32,
    tol: f64,
) -> Result<EstimateResult> {
    check_q(q)?;
    let d = profile.d() as f64;
    let f1 = profile.f(1) as f64;
    let f2 = profile.f(2) as f64;
    if f1 == 0.0 {
        return Ok(EstimateResult::with(d, [("iterations", 0.0)]));
    }
    // Tail sums over i >= 3.
    let (s, t): (f64, f64) = profile
        .iter()
        .filter(|&(i, _)| i >= 3)
        .map(|(i, f)| {
            let w = (-(i as f64)).exp() * f as f64;
            (w, i as f64 * w)
        })
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let u = f1 + 2.0 * f2;
    let residual = |m: f64| m - f1 - f2 - ae_k(m, f1, f2, s, t) * f1;

    // Newton-Raphson from m0 = d with an analytic derivative; fall back to
    // bisection if Newton leaves the positive domain or stalls.
    let mut m = d.max(f1 + f2 + 1.0);
    let mut iterations = 0u32;
    let mut converged = false;
    for _ in 0..max_iter {
        iterations += 1;
        let g = residual(m);
        if g.abs() <= tol * m.abs().max(1.0) {
            converged = true;
            break;
        }
        let eu = (u / m).exp();
        let emu = (-u / m).exp();
        let p = s + m * eu;
        let pq = t + u * emu;
        let dp = eu * (1.0 - u / m);
        let dq = u * emu * u / (m * m);
        let dk = (dp * pq - p * dq) / (pq * pq);
        let dg = 1.0 - f1 * dk;
        let next = m - g / dg;
        if !next.is_finite() || next <= 0.0 {
            break;
        }
        m = next;
    }
    if !converged {
        // Bisection on a bracket that covers the admissible range.
        let mut lo = (f1 + f2).max(1e-9);
        let mut hi = 10.0 * (n_total as f64 / profile.n() as f64).sqrt() * d;
        if residual(lo).signum() == residual(hi).signum() {
            return Err(DveError::NoConvergence { iterations });
        }
        for _ in 0..200 {
            iterations += 1;
            let mid = 0.5 * (lo + hi);
            if residual(mid).signum() == residual(lo).signum() {
                lo = mid;
            } else {
                hi = mid;
            }
            if (hi - lo) <= tol * hi.max(1.0) {
                break;
            }
        }
        m = 0.5 * (lo + hi);
        if residual(m).abs() > tol * m.abs().max(1.0) {
            return Err(DveError::NoConvergence { iterations });
        }
    }
    let k = ae_k(m, f1, f2, s, t);
    Ok(EstimateResult::with(
        d + k * f1,
        [("iterations", iterations as f64), ("m", m), ("k", k)],
    ))
}

/// Turing's estimate of sample coverage, `Ĉ = 1 − f₁/n`.
pub fn coverage(profile: &FrequencyProfile) -> f64 {
    1.0 - profile.f(1) as f64 / profile.n() as f64
}

fn chao_lee(
    profile: &FrequencyProfile,
    second_order: bool,
) -> Result<EstimateResult> {
    let n = profile.n() as f64;
    if profile.n() < 2 {
        return Err(DveError::DegenerateProfile("chao-lee requires n >= 2".into()));
    }
    let c_hat = coverage(profile);
    if c_hat <= 0.0 {
        return Err(DveError::ZeroCoverage);
    }
    let d = profile.d() as f64;
    let d1 = d / c_hat;
    let s = profile.second_factorial_moment();
    let gamma_tilde = (d1 * s / (n * n - n - 1.0)).max(0.0);
    let gamma = if second_order {
        (gamma_tilde * (1.0 + n * (1.0 - c_hat) * s / (n * (n - 1.0) * c_hat))).max(0.0)
    } else {
        gamma_tilde
    };
    let estimate = d1 + n * (1.0 - c_hat) / c_hat * gamma;
    Ok(EstimateResult::with(
        estimate,
        [("coverage", c_hat), ("gamma_sq_hat", gamma)],
    ))
}

/// First Chao-Lee coverage estimator (uses γ̃²).
pub fn est_cl1(profile: &FrequencyProfile, _n_total: u64, q: f64) -> Result<EstimateResult> {
    check_q(q)?;
    chao_lee(profile, false)
}

/// Second Chao-Lee coverage estimator (uses the corrected γ̂²).
pub fn est_cl2(profile: &FrequencyProfile, _n_total: u64, q: f64) -> Result<EstimateResult> {
    check_q(q)?;
    chao_lee(profile, true)
}

/// Dispatch a single estimator by id.
pub fn estimate(
    id: EstimatorId,
    profile: &FrequencyProfile,
    n_total: u64,
    q: f64,
) -> Result<EstimateResult> {
    match id {
        EstimatorId::Uj1 => est_uj1(profile, n_total, q),
        EstimatorId::Uj2 => est_uj2(profile, n_total, q),
        EstimatorId::Sj2 => est_sj2(profile, n_total, q),
        EstimatorId::Uj2a => est_uj2a(profile, n_total, q),
        EstimatorId::Sh => est_sh(profile, n_total, q),
        EstimatorId::Sh2 => est_sh2(profile, n_total, q),
        EstimatorId::Sh3 => est_sh3(profile, n_total, q),
        EstimatorId::Gee => est_gee(profile, n_total, q),
        EstimatorId::Ae => est_ae(profile, n_total, q),
        EstimatorId::Cl1 => est_cl1(profile, n_total, q),
        EstimatorId::Cl2 => est_cl2(profile, n_total, q),
    }
}

/// Run every estimator; one failing never aborts the rest.
pub fn estimate_all(
    profile: &FrequencyProfile,
    n_total: u64,
    q: f64,
) -> BTreeMap<EstimatorId, Result<EstimateResult>> {
    EstimatorId::ALL
        .iter()
        .map(|&id| (id, estimate(id, profile, n_total, q)))
        .collect()
}
