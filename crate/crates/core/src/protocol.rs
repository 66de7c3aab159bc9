//! Protocol parameters and source statistics.
//!
//! The transmitter sends phase-randomized weak coherent pulses with one of three
//! intensities (signal, decoy, vacuum), encoding a uniformly random bit in the Z
//! or X basis. The receiver is passive: a beam splitter routes a fraction `q` of
//! the light to the X measurement line and `1 - q` to the Z line, with one
//! threshold detector pair per line. `p_z` is the transmitter's basis bias and
//! is a separate knob from `q`; the optimizer ties them (`q = 1 - p_z`) but the
//! data model keeps them independent.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Encoding/measurement basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
}

/// Source intensity setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intensity {
    Signal,
    Decoy,
    Vacuum,
}

/// All three settings, in the order used for maps and reports.
pub const INTENSITIES: [Intensity; 3] = [Intensity::Signal, Intensity::Decoy, Intensity::Vacuum];

/// Static protocol configuration.
///
/// `n` is the number of transmitted pulses. Probabilities `p_z + p_x = 1` and
/// `p_s + p_d + p_v = 1`; intensities must satisfy `mu_s > mu_d > mu_v = 0`
/// (the decoy-state inversion divides by `mu_d` and `mu_s - mu_d`). `q` is the
/// beam-splitter transmittance toward the X line and must stay below 1/2 so the
/// Z line keeps the majority share. `d` is the per-detector dark-count
/// probability per pulse, `f` the error-correction inefficiency, and
/// `delta_mis` the misalignment error rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolParams {
    pub n: u64,
    pub p_z: f64,
    pub p_x: f64,
    pub p_s: f64,
    pub p_d: f64,
    pub p_v: f64,
    pub mu_s: f64,
    pub mu_d: f64,
    pub mu_v: f64,
    pub q: f64,
    pub d: f64,
    pub f: f64,
    pub delta_mis: f64,
}

impl Default for ProtocolParams {
    /// Baseline operating point used throughout the docs and tests: 3%
    /// misalignment, 1e-9 dark counts, f = 1.16, signal/decoy intensities
    /// 0.5/0.05, and a 0.9-biased Z basis with the matching beam splitter.
    fn default() -> Self {
        Self {
            n: 10_000_000_000,
            p_z: 0.9,
            p_x: 0.1,
            p_s: 0.8,
            p_d: 0.1,
            p_v: 0.1,
            mu_s: 0.5,
            mu_d: 0.05,
            mu_v: 0.0,
            q: 0.1,
            d: 1e-9,
            f: 1.16,
            delta_mis: 0.03,
        }
    }
}

impl ProtocolParams {
    pub fn intensity_prob(&self, w: Intensity) -> f64 {
        match w {
            Intensity::Signal => self.p_s,
            Intensity::Decoy => self.p_d,
            Intensity::Vacuum => self.p_v,
        }
    }

    pub fn intensity_mu(&self, w: Intensity) -> f64 {
        match w {
            Intensity::Signal => self.mu_s,
            Intensity::Decoy => self.mu_d,
            Intensity::Vacuum => self.mu_v,
        }
    }
}

/// Channel configuration: overall transmittance from the source to the
/// receiver's beam splitter, detector efficiency included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub eta: f64,
}

/// Outcome of parameter validation; empty means valid.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    /// Collapses the report into an error usable with `?`.
    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidInput(self.violations.join("; ")))
        }
    }
}

const SUM_TOL: f64 = 1e-12;

fn check_prob(report: &mut ValidationReport, name: &str, value: f64) {
    if !(value > 0.0 && value < 1.0) || !value.is_finite() {
        report.violations.push(format!("{name} must lie in (0, 1), got {value}"));
    }
}

/// Structural checks on a parameter set. Returns every violation found rather
/// than stopping at the first.
pub fn validate_params(p: &ProtocolParams) -> ValidationReport {
    let mut report = ValidationReport::default();
    if p.n == 0 {
        report.violations.push("n must be positive".into());
    }
    check_prob(&mut report, "p_z", p.p_z);
    check_prob(&mut report, "p_x", p.p_x);
    if (p.p_z + p.p_x - 1.0).abs() > SUM_TOL {
        report.violations.push(format!("p_z + p_x must equal 1, got {}", p.p_z + p.p_x));
    }
    check_prob(&mut report, "p_s", p.p_s);
    check_prob(&mut report, "p_d", p.p_d);
    check_prob(&mut report, "p_v", p.p_v);
    if (p.p_s + p.p_d + p.p_v - 1.0).abs() > SUM_TOL {
        report
            .violations
            .push(format!("p_s + p_d + p_v must equal 1, got {}", p.p_s + p.p_d + p.p_v));
    }
    if p.mu_v != 0.0 {
        report.violations.push(format!("mu_v must be exactly 0, got {}", p.mu_v));
    }
    if !(p.mu_s.is_finite() && p.mu_d.is_finite() && p.mu_s > p.mu_d && p.mu_d > p.mu_v) {
        report.violations.push(format!(
            "intensities must satisfy mu_s > mu_d > mu_v, got {} / {} / {}",
            p.mu_s, p.mu_d, p.mu_v
        ));
    }
    if !(p.q > 0.0 && p.q < 0.5) {
        report.violations.push(format!("q must lie in (0, 0.5), got {}", p.q));
    }
    if !(p.d >= 0.0 && p.d < 1.0) || !p.d.is_finite() {
        report.violations.push(format!("d must lie in [0, 1), got {}", p.d));
    }
    if p.f < 1.0 || !p.f.is_finite() {
        report.violations.push(format!("f must be at least 1, got {}", p.f));
    }
    if !(p.delta_mis >= 0.0 && p.delta_mis < 0.5) {
        report.violations.push(format!("delta_mis must lie in [0, 0.5), got {}", p.delta_mis));
    }
    report
}

/// Structural checks on channel parameters.
pub fn validate_channel(c: &ChannelParams) -> ValidationReport {
    let mut report = ValidationReport::default();
    if !(c.eta > 0.0 && c.eta <= 1.0) || !c.eta.is_finite() {
        report.violations.push(format!("eta must lie in (0, 1], got {}", c.eta));
    }
    report
}

/// Poisson photon-number probability `e^{-mu} mu^n / n!` of a phase-randomized
/// coherent pulse of intensity `mu`.
pub fn poisson_photon_prob(mu: f64, n: u32) -> Result<f64> {
    if mu < 0.0 || !mu.is_finite() {
        return Err(Error::InvalidInput(format!("mu must be finite and >= 0, got {mu}")));
    }
    if mu == 0.0 {
        return Ok(if n == 0 { 1.0 } else { 0.0 });
    }
    let ln_fact: f64 = (1..=n).map(|k| f64::from(k).ln()).sum();
    Ok((f64::from(n) * mu.ln() - mu - ln_fact).exp())
}

/// Probability that a transmitted pulse carries exactly one photon,
/// marginalized over the intensity choice.
pub fn single_photon_prob(p: &ProtocolParams) -> f64 {
    INTENSITIES
        .iter()
        .map(|&w| {
            let mu = p.intensity_mu(w);
            p.intensity_prob(w) * mu * (-mu).exp()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_params_are_valid() {
        assert!(validate_params(&ProtocolParams::default()).is_valid());
        assert!(validate_channel(&ChannelParams { eta: 0.1 }).is_valid());
    }

    #[test]
    fn validation_reports_every_violation() {
        let p = ProtocolParams {
            q: 0.5,
            mu_v: 0.1,
            d: 1.5,
            ..ProtocolParams::default()
        };
        // Four findings: the nonzero mu_v breaks both the vacuum requirement
        // and the intensity ordering, plus the q and d range checks.
        let report = validate_params(&p);
        assert_eq!(report.violations.len(), 4, "{:?}", report.violations);
        assert!(report.into_result().is_err());

        assert!(!validate_channel(&ChannelParams { eta: 0.0 }).is_valid());
        assert!(!validate_channel(&ChannelParams { eta: 1.1 }).is_valid());
    }

    #[test]
    fn single_photon_prob_matches_reference() {
        // 0.8·0.5·e^{-0.5} + 0.1·0.05·e^{-0.05}, frozen from the independent oracle.
        let p = ProtocolParams { p_z: 0.75, p_x: 0.25, q: 0.25, ..ProtocolParams::default() };
        let got = single_photon_prob(&p);
        assert!((got - 0.24736841100755697).abs() < 1e-15, "{got}");
    }

    #[test]
    fn poisson_basics() {
        assert_eq!(poisson_photon_prob(0.0, 0).unwrap(), 1.0);
        assert_eq!(poisson_photon_prob(0.0, 3).unwrap(), 0.0);
        let p1 = poisson_photon_prob(0.5, 1).unwrap();
        assert!((p1 - 0.5 * (-0.5f64).exp()).abs() < 1e-15);
        assert!(poisson_photon_prob(-0.1, 0).is_err());
        assert!(poisson_photon_prob(f64::NAN, 0).is_err());
    }

    proptest! {
        #[test]
        fn poisson_sums_to_one(mu in 0.0f64..5.0) {
            let total: f64 = (0..80).map(|k| poisson_photon_prob(mu, k).unwrap()).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn single_photon_prob_is_a_probability(
            p_z in 0.01f64..0.99,
            p_s in 0.1f64..0.8,
            p_d in 0.05f64..0.15,
            mu_s in 0.1f64..1.0,
        ) {
            let p = ProtocolParams {
                p_z, p_x: 1.0 - p_z,
                p_s, p_d, p_v: 1.0 - p_s - p_d,
                mu_s, mu_d: 0.05f64.min(mu_s / 2.0),
                ..ProtocolParams::default()
            };
            let v = single_photon_prob(&p);
            prop_assert!(v > 0.0 && v < 1.0);
        }
    }
}
