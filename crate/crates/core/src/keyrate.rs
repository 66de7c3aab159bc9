//! Key length, secrecy budget, and the secret-key-rate pipeline.
//!
//! The extractable length is `n_z1·(1 - h(ratio)) - xi - n_ec` where `ratio`
//! is the pessimistic phase-error fraction from the two finite-key bounds,
//! `xi` the privacy-amplification slack, and `n_ec` the error-correction
//! leakage. Nine concentration applications at failure probability ε each (five
//! in the phase bound, four in the single-photon bound) feed a secrecy
//! parameter `eps_s = sqrt(2(9ε + 2^-xi))`; the total security parameter adds
//! the correctness term on top.

use serde::{Deserialize, Serialize};

use crate::bounds::{asymptotic_bounds, finite_bounds, BranchFlags, EstimateSet};
use crate::protocol::{validate_channel, validate_params, ChannelParams, ProtocolParams};
use crate::{channel, Error, Result};

/// Finite-size accounting or its infinite-sample limit.
///
/// Asymptotic mode zeroes every deviation term, replaces the bound prefactors
/// by 1, and drops the privacy-amplification slack, so the rate depends on the
/// pulse count only through normalization and is N-independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Finite,
    Asymptotic,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Finite => "finite",
            Mode::Asymptotic => "asymptotic",
        })
    }
}

/// Whether the phase-error bound keeps the cross-click term.
///
/// `Passive` is the honest accounting for a receiver that measures every pulse
/// in both bases at once. `ActiveApprox` drops the cross-click correction,
/// mimicking an active-choice analysis applied to the same device; it is
/// slightly optimistic and converges to `Passive` as dark counts vanish.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    Passive,
    ActiveApprox,
}

impl std::fmt::Display for Baseline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Baseline::Passive => "passive",
            Baseline::ActiveApprox => "active-approx",
        })
    }
}

/// Security knobs shared by every finite-size evaluation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecurityParams {
    /// Per-application concentration failure probability.
    pub eps: f64,
    /// Correctness parameter of the verification step.
    pub eps_c: f64,
    /// Privacy-amplification slack in bits.
    pub xi: u32,
}

impl Default for SecurityParams {
    fn default() -> Self {
        Self { eps: 1e-20 / 144.0, eps_c: 5e-11, xi: 71 }
    }
}

/// Derived secrecy budget.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SecrecyEpsilons {
    /// Total failure probability of the phase-error estimate chain (9ε).
    pub eps_ph: f64,
    /// Secrecy parameter of the extracted key.
    pub eps_s: f64,
    /// Overall security parameter `eps_c + eps_s`.
    pub eps_sec: f64,
}

pub fn secrecy_epsilons(sec: &SecurityParams) -> SecrecyEpsilons {
    let eps_ph = 9.0 * sec.eps;
    let eps_s = (2.0 * (eps_ph + 2f64.powi(-(sec.xi as i32)))).sqrt();
    SecrecyEpsilons { eps_ph, eps_s, eps_sec: sec.eps_c + eps_s }
}

/// Binary entropy in bits, saturated to 1 above 1/2.
///
/// The saturation matches its only use here: once the phase-error ratio passes
/// 1/2 the privacy term already consumes the whole key, and keeping h at its
/// maximum avoids a spurious recovery on the downslope.
pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidInput(format!("entropy argument {x} outside [0, 1]")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x > 0.5 {
        return Ok(1.0);
    }
    Ok(-x * x.log2() - (1.0 - x) * (1.0 - x).log2())
}

/// Bits leaked by error correction at reconciliation efficiency `f`.
pub fn error_correction_cost(n_sift: f64, e_bit: f64, f: f64) -> Result<f64> {
    Ok(f * n_sift * binary_entropy(e_bit.min(1.0))?)
}

/// Extractable key length in bits; may be negative when the channel cannot
/// support the overheads.
pub fn key_length(
    n_z1_lower: f64,
    n_ph1_upper: f64,
    n_ec: f64,
    sec: &SecurityParams,
    mode: Mode,
) -> Result<f64> {
    let xi = match mode {
        Mode::Finite => sec.xi as f64,
        Mode::Asymptotic => 0.0,
    };
    if n_z1_lower <= 0.0 {
        return Ok(-xi - n_ec);
    }
    let ratio = (n_ph1_upper / n_z1_lower).min(1.0);
    Ok(n_z1_lower * (1.0 - binary_entropy(ratio)?) - xi - n_ec)
}

/// Everything one evaluation produces, in the shape the CLI serializes.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct KeyRateResult {
    /// Secret bits per emitted pulse, clamped at zero.
    pub rate: f64,
    /// Raw extractable length; negative means infeasible.
    pub key_length: f64,
    pub n_z1_lower: f64,
    pub n_ph1_upper: f64,
    /// Pessimistic phase-error fraction fed to the entropy term (0 when the
    /// single-photon bound is zero).
    pub phase_error_ratio: f64,
    pub n_ec: f64,
    pub n_sift: f64,
    pub e_bit: f64,
    pub branch: BranchFlags,
    pub mode: Mode,
    pub baseline: Baseline,
}

/// Full pipeline from protocol and channel parameters to a rate.
pub fn key_rate(
    p: &ProtocolParams,
    ch: &ChannelParams,
    sec: &SecurityParams,
    mode: Mode,
    baseline: Baseline,
) -> Result<KeyRateResult> {
    validate_params(p).into_result()?;
    validate_channel(ch).into_result()?;
    let counts = channel::expected_counts(p, ch)?;
    let est = EstimateSet::from_channel_model(p, ch)?;
    let include_cross = matches!(baseline, Baseline::Passive);
    let bounds = match mode {
        Mode::Finite => finite_bounds(&counts, &est, p, sec.eps, include_cross)?,
        Mode::Asymptotic => asymptotic_bounds(&counts, p, include_cross),
    };
    let n_ec = error_correction_cost(counts.n_sift, counts.e_bit, p.f)?;
    let length = key_length(bounds.n_z1_lower, bounds.n_ph1_upper, n_ec, sec, mode)?;
    let phase_error_ratio = if bounds.n_z1_lower > 0.0 {
        (bounds.n_ph1_upper / bounds.n_z1_lower).min(1.0)
    } else {
        0.0
    };
    Ok(KeyRateResult {
        rate: length.max(0.0) / p.n as f64,
        key_length: length,
        n_z1_lower: bounds.n_z1_lower,
        n_ph1_upper: bounds.n_ph1_upper,
        phase_error_ratio,
        n_ec,
        n_sift: counts.n_sift,
        e_bit: counts.e_bit,
        branch: bounds.branch,
        mode,
        baseline,
    })
}
