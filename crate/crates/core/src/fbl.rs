//! Normal approximation of the finite-blocklength achievable rate.

use statrs::function::erf::erfc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FblError {
    #[error("error probability must lie in (0, 1) and above 1e-300, got {0}")]
    Probability(f64),
    #[error("invalid rate query: {0}")]
    Query(String),
}

pub const LOG2_E: f64 = std::f64::consts::LOG2_E;

/// Gaussian tail `Q(x) = P[Z > x]`.
pub fn q_func(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

const Q_INV_LO: f64 = -37.0;
const Q_INV_HI: f64 = 37.0;

/// Inverse Gaussian tail. Newton on `ln Q(x) − ln ε` (well scaled deep in
/// the tail), kept inside a shrinking bracket and replaced by a bisection
/// step whenever it would leave it.
pub fn q_inv(eps: f64) -> Result<f64, FblError> {
    if !(eps > 1e-300 && eps < 1.0) {
        return Err(FblError::Probability(eps));
    }
    if eps == 0.5 {
        return Ok(0.0);
    }
    // Q is decreasing: g(x) = ln Q(x) − ln ε is decreasing too
    let target = eps.ln();
    let g = |x: f64| q_func(x).ln() - target;
    let (mut lo, mut hi) = (Q_INV_LO, Q_INV_HI);
    // tail asymptotic start, clamped into the bracket
    let mut x = if eps < 0.5 {
        (-2.0 * (eps * (2.0 * std::f64::consts::PI).sqrt()).ln()).max(0.0).sqrt()
    } else {
        -(-2.0 * ((1.0 - eps) * (2.0 * std::f64::consts::PI).sqrt()).ln()).max(0.0).sqrt()
    };
    x = x.clamp(lo, hi);
    for _ in 0..200 {
        let gx = g(x);
        if gx == 0.0 {
            return Ok(x);
        }
        if gx > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let q = q_func(x);
        // d/dx ln Q = −φ/Q
        let slope = -phi(x) / q;
        let mut next = x - gx / slope;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

/// Channel dispersion in bits²/symbol. The high-SNR flag substitutes the
/// limiting value `(log₂ e)²`.
pub fn dispersion(gamma: f64, high_snr: bool) -> f64 {
    if high_snr {
        LOG2_E * LOG2_E
    } else {
        (1.0 - 1.0 / ((1.0 + gamma) * (1.0 + gamma))) * LOG2_E * LOG2_E
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateQuery {
    /// Linear SINR.
    pub gamma: f64,
    /// Blocklength in symbols.
    pub blocklength: f64,
    pub eps: f64,
}

impl RateQuery {
    pub fn new(gamma: f64, blocklength: f64, eps: f64) -> Result<Self, FblError> {
        if !(gamma >= 0.0) {
            return Err(FblError::Query(format!("SINR {gamma} must be non-negative")));
        }
        if !(blocklength >= 1.0) {
            return Err(FblError::Query(format!("blocklength {blocklength} must be at least 1")));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(FblError::Probability(eps));
        }
        Ok(Self { gamma, blocklength, eps })
    }
}

/// Achievable rate in bits/symbol; may be negative.
pub fn rate(q: &RateQuery, high_snr: bool) -> Result<f64, FblError> {
    let v = dispersion(q.gamma, high_snr);
    Ok((1.0 + q.gamma).log2() - (v / q.blocklength).sqrt() * q_inv(q.eps)?)
}

/// `b = Q⁻¹(ε)·log₂ e`, the back-off coefficient of the information bound.
pub fn backoff(eps: f64) -> Result<f64, FblError> {
    Ok(q_inv(eps)? * LOG2_E)
}

/// Information bits carried in `λ` symbols at SINR `γ`:
/// `λ·log₂(1+γ) − b√λ`, unclamped.
pub fn info_bits(gamma: f64, lambda: f64, eps: f64) -> Result<f64, FblError> {
    Ok(info_bits_with(gamma, lambda, backoff(eps)?))
}

pub fn info_bits_with(gamma: f64, lambda: f64, b: f64) -> f64 {
    lambda * (1.0 + gamma).log2() - b * lambda.sqrt()
}
