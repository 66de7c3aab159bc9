//! Expected detection statistics of the threshold-detector receiver behind a
//! lossy channel.
//!
//! A pulse of intensity `mu` reaching the receiver through transmittance `eta`
//! behaves as independent Poisson fields of mean `mu·eta·q` on the X line and
//! `mu·eta·(1-q)` on the Z line (beam splitting of phase-randomized light).
//! All photons of a pulse share one polarization, so on the line matching the
//! encoding basis they drive a single detector, while each dark count fires
//! independently with probability `d` per detector. Writing
//! `A = e^{-mu·eta·(1-q)}(1-d)²` (Z line silent) and `B = e^{-mu·eta·q}(1-d)²`
//! (X line silent), the four exclusive pulse outcomes are
//!
//! ```text
//! p(Z-only click) = B(1 - A),   p(X-only click) = A(1 - B),
//! p(no click)     = A·B,        p(cross click)  = (1 - A)(1 - B).
//! ```
//!
//! Misalignment enters additively at the count level: a fraction `delta_mis`
//! of same-basis clicks is flipped on top of the dark-count error term.

use serde::{Deserialize, Serialize};

use crate::protocol::{Basis, ChannelParams, Intensity, ProtocolParams, INTENSITIES};
use crate::{Error, Result};

/// One value per intensity setting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IntensityMap {
    pub signal: f64,
    pub decoy: f64,
    pub vacuum: f64,
}

impl IntensityMap {
    pub fn from_fn(mut f: impl FnMut(Intensity) -> f64) -> Self {
        Self { signal: f(Intensity::Signal), decoy: f(Intensity::Decoy), vacuum: f(Intensity::Vacuum) }
    }

    pub fn get(&self, w: Intensity) -> f64 {
        match w {
            Intensity::Signal => self.signal,
            Intensity::Decoy => self.decoy,
            Intensity::Vacuum => self.vacuum,
        }
    }

    pub fn get_mut(&mut self, w: Intensity) -> &mut f64 {
        match w {
            Intensity::Signal => &mut self.signal,
            Intensity::Decoy => &mut self.decoy,
            Intensity::Vacuum => &mut self.vacuum,
        }
    }

    pub fn total(&self) -> f64 {
        self.signal + self.decoy + self.vacuum
    }
}

/// Sifted and announced tallies of one protocol run, indexed by intensity.
///
/// `n_z` counts pulses sent and detected in Z (the key generator), `n_x` the
/// same for X, `n_x_error` the X events whose bit flipped, and `n_cross` the
/// pulses that clicked on both lines (no basis assignment). `n_sift` is the
/// total of `n_z` and `e_bit` the bit-error rate inside it. Counts are reals:
/// expectations flow through the same shape as the integer tallies produced by
/// the Monte-Carlo module.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservedCounts {
    pub n_z: IntensityMap,
    pub n_x: IntensityMap,
    pub n_x_error: IntensityMap,
    pub n_cross: IntensityMap,
    pub n_sift: f64,
    pub e_bit: f64,
}

/// Log of p(no click on `line`); complements go through `exp_m1` so that
/// near-one silence probabilities keep their tiny complements exact.
fn line_log_silent(p: &ProtocolParams, ch: &ChannelParams, mu: f64, line: Basis) -> f64 {
    let share = match line {
        Basis::Z => 1.0 - p.q,
        Basis::X => p.q,
    };
    -mu * ch.eta * share + 2.0 * (-p.d).ln_1p()
}

fn line_silent(p: &ProtocolParams, ch: &ChannelParams, mu: f64, line: Basis) -> f64 {
    line_log_silent(p, ch, mu, line).exp()
}

fn other(basis: Basis) -> Basis {
    match basis {
        Basis::Z => Basis::X,
        Basis::X => Basis::Z,
    }
}

/// p(click on the `basis` line only | sent in `basis`, intensity `w`); equal to
/// the sifted-detection probability because the click pattern is insensitive to
/// which detector of a line the photons drive.
pub fn conditional_click_prob(p: &ProtocolParams, ch: &ChannelParams, basis: Basis, w: Intensity) -> f64 {
    let mu = p.intensity_mu(w);
    line_silent(p, ch, mu, other(basis)) * (-line_log_silent(p, ch, mu, basis).exp_m1())
}

/// Dark-count-driven part of p(error, click in `basis` | sent in `basis`, `w`):
/// either the line holds no photon and a dark count lands on the wrong detector
/// (or on both, resolved by a fair coin), or photons click correctly and a dark
/// count on the partner detector forces a random assignment. Misalignment is
/// added separately by [`expected_counts`].
pub fn conditional_error_prob(p: &ProtocolParams, ch: &ChannelParams, basis: Basis, w: Intensity) -> f64 {
    let mu = p.intensity_mu(w);
    let share = match basis {
        Basis::Z => 1.0 - p.q,
        Basis::X => p.q,
    };
    let log_empty = -mu * ch.eta * share;
    let other_silent = line_silent(p, ch, mu, other(basis));
    other_silent
        * (log_empty.exp() * (p.d * (1.0 - p.d) + p.d * p.d / 2.0)
            + (-log_empty.exp_m1()) * p.d / 2.0)
}

/// p(clicks on both lines | intensity `w`), independent of the encoding basis:
/// `(1 - A)(1 - B)` with `A`, `B` the two line-silence probabilities.
pub fn cross_click_prob(p: &ProtocolParams, ch: &ChannelParams, w: Intensity) -> f64 {
    let mu = p.intensity_mu(w);
    line_log_silent(p, ch, mu, Basis::Z).exp_m1() * line_log_silent(p, ch, mu, Basis::X).exp_m1()
}

/// p(sifted Z click | sent in Z, exactly `n` photons left the source).
///
/// Thinning the `n` photons through `eta` and the beam splitter leaves the two
/// lines exchangeable, giving `(1-eta·q)^n (1-d)² − (1-eta)^n (1-d)⁴`; its
/// Poisson mixture reproduces [`conditional_click_prob`] and the `n = 1` value
/// feeds the single-photon estimate defaults.
pub fn z_click_prob_given_photons(p: &ProtocolParams, ch: &ChannelParams, n: u32) -> f64 {
    // k[(1-eta·q)^n - k(1-eta)^n] factored so the near-cancellation between the
    // two powers survives small eta and d.
    let log_k = 2.0 * (-p.d).ln_1p();
    let la = n as f64 * (-ch.eta * p.q).ln_1p();
    if ch.eta >= 1.0 {
        // Lossless channel: the subtracted term survives only at n = 0.
        let kn = if n == 0 { log_k.exp() } else { 0.0 };
        return log_k.exp() * (la.exp() - kn);
    }
    let lb = n as f64 * (-ch.eta).ln_1p();
    log_k.exp() * lb.exp() * ((la - lb).exp_m1() + (-log_k.exp_m1()))
}

/// Expected tallies after `p.n` pulses. Errors out if the model yields no
/// sifted events (possible only for a zero-transmittance, zero-dark channel,
/// which validation already rejects).
pub fn expected_counts(p: &ProtocolParams, ch: &ChannelParams) -> Result<ObservedCounts> {
    let n = p.n as f64;
    let n_z = IntensityMap::from_fn(|w| {
        n * p.p_z * p.intensity_prob(w) * conditional_click_prob(p, ch, Basis::Z, w)
    });
    let n_x = IntensityMap::from_fn(|w| {
        n * p.p_x * p.intensity_prob(w) * conditional_click_prob(p, ch, Basis::X, w)
    });
    let n_x_error = IntensityMap::from_fn(|w| {
        n * p.p_x * p.intensity_prob(w) * conditional_error_prob(p, ch, Basis::X, w)
            + p.delta_mis * n_x.get(w)
    });
    let n_cross =
        IntensityMap::from_fn(|w| n * p.intensity_prob(w) * cross_click_prob(p, ch, w));
    let n_sift = n_z.total();
    if n_sift.is_nan() || n_sift <= 0.0 {
        return Err(Error::DegenerateChannel(
            "expected sifted count is zero; no rate is defined".into(),
        ));
    }
    let z_errors: f64 = INTENSITIES
        .iter()
        .map(|&w| n * p.p_z * p.intensity_prob(w) * conditional_error_prob(p, ch, Basis::Z, w))
        .sum();
    let e_bit = z_errors / n_sift + p.delta_mis;
    Ok(ObservedCounts { n_z, n_x, n_x_error, n_cross, n_sift, e_bit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::poisson_photon_prob;
    use proptest::prelude::*;

    fn params() -> ProtocolParams {
        ProtocolParams {
            p_z: 0.75,
            p_x: 0.25,
            q: 0.25,
            d: 1e-6,
            delta_mis: 0.0,
            ..ProtocolParams::default()
        }
    }

    fn rel_close(x: f64, y: f64, tol: f64) -> bool {
        (x - y).abs() <= tol * x.abs().max(y.abs()).max(1e-300)
    }

    #[test]
    fn frozen_probabilities_match_reference() {
        // eta = 0.1, mu_s = 0.5, q = 0.25, d = 1e-6; values from the independent oracle.
        let p = params();
        let ch = ChannelParams { eta: 0.1 };
        let cases = [
            (Intensity::Signal, 0.036350205750544644, 0.011966871744226141, 9.69401198077281e-7, 0.0004573029165058414),
            (Intensity::Decoy, 0.003740284275282155, 0.0012465308073867755, 9.968791387911238e-7, 4.685768595456574e-6),
            (Intensity::Vacuum, 1.999995000004e-6, 1.999995000004e-6, 9.99997500002e-7, 3.999996000000999e-12),
        ];
        for (w, cz, cx, ez, cr) in cases {
            let got_cz = conditional_click_prob(&p, &ch, Basis::Z, w);
            let got_cx = conditional_click_prob(&p, &ch, Basis::X, w);
            let got_ez = conditional_error_prob(&p, &ch, Basis::Z, w);
            let got_cr = cross_click_prob(&p, &ch, w);
            assert!(rel_close(got_cz, cz, 1e-12), "{w:?} click_z {got_cz} vs {cz}");
            assert!(rel_close(got_cx, cx, 1e-12), "{w:?} click_x {got_cx} vs {cx}");
            assert!(rel_close(got_ez, ez, 1e-12), "{w:?} err_z {got_ez} vs {ez}");
            assert!(rel_close(got_cr, cr, 1e-12), "{w:?} cross {got_cr} vs {cr}");
        }
    }

    #[test]
    fn poisson_mixture_reproduces_closed_form() {
        let p = params();
        for eta in [0.03, 0.4, 1.0] {
            let ch = ChannelParams { eta };
            let mixture: f64 = (0..60)
                .map(|k| {
                    poisson_photon_prob(p.mu_s, k).unwrap() * z_click_prob_given_photons(&p, &ch, k)
                })
                .sum();
            let closed = conditional_click_prob(&p, &ch, Basis::Z, Intensity::Signal);
            assert!(rel_close(mixture, closed, 1e-12), "eta={eta}: {mixture} vs {closed}");
        }
    }

    #[test]
    fn expected_counts_are_consistent() {
        let p = ProtocolParams { delta_mis: 0.03, ..params() };
        let ch = ChannelParams { eta: 0.1 };
        let c = expected_counts(&p, &ch).unwrap();
        assert!(rel_close(c.n_sift, c.n_z.total(), 1e-15));
        assert!(c.e_bit > p.delta_mis && c.e_bit < 0.5);
        for w in INTENSITIES {
            assert!(c.n_x_error.get(w) <= c.n_x.get(w) * (1.0 + p.delta_mis));
            assert!(c.n_z.get(w) >= 0.0 && c.n_z.get(w) <= p.n as f64);
        }
        // Misalignment shifts errors but not click totals.
        let c0 = expected_counts(&params(), &ch).unwrap();
        assert_eq!(c0.n_z, c.n_z);
        assert!(c0.e_bit < c.e_bit);
    }

    #[test]
    fn zero_transmittance_zero_dark_channel_is_degenerate() {
        // Unreachable through validation (eta > 0 required); the guard still holds.
        let p = ProtocolParams { d: 0.0, ..params() };
        let ch = ChannelParams { eta: 0.0 };
        assert!(matches!(expected_counts(&p, &ch), Err(Error::DegenerateChannel(_))));
    }

    fn channel_domain() -> impl Strategy<Value = (ProtocolParams, ChannelParams)> {
        (
            0.51f64..0.99,   // p_z
            0.01f64..0.49,   // q
            0.1f64..1.0,     // mu_s
            -9.0f64..-1.0,   // log10 d
            -5.0f64..0.0,    // log10 eta
        )
            .prop_map(|(p_z, q, mu_s, ld, le)| {
                let p = ProtocolParams {
                    p_z,
                    p_x: 1.0 - p_z,
                    q,
                    mu_s,
                    mu_d: 0.05 * mu_s,
                    d: 10f64.powf(ld),
                    delta_mis: 0.0,
                    ..ProtocolParams::default()
                };
                (p, ChannelParams { eta: 10f64.powf(le) })
            })
    }

    proptest! {
        /// The four exclusive outcomes of a pulse partition the sample space.
        #[test]
        fn outcome_probabilities_sum_to_one((p, ch) in channel_domain()) {
            for w in INTENSITIES {
                let mu = p.intensity_mu(w);
                let none = (-mu * ch.eta).exp() * (1.0 - p.d).powi(4);
                let total = conditional_click_prob(&p, &ch, Basis::Z, w)
                    + conditional_click_prob(&p, &ch, Basis::X, w)
                    + cross_click_prob(&p, &ch, w)
                    + none;
                prop_assert!((total - 1.0).abs() < 1e-12, "w={w:?}: {total}");
            }
        }

        #[test]
        fn probabilities_stay_in_range_and_errors_below_clicks((p, ch) in channel_domain()) {
            for w in INTENSITIES {
                for basis in [Basis::Z, Basis::X] {
                    let click = conditional_click_prob(&p, &ch, basis, w);
                    let err = conditional_error_prob(&p, &ch, basis, w);
                    prop_assert!((0.0..=1.0).contains(&click));
                    prop_assert!(err >= 0.0 && err <= click + 1e-300);
                }
                prop_assert!((0.0..=1.0).contains(&cross_click_prob(&p, &ch, w)));
            }
        }

        /// More light on a line can only raise its click probability.
        #[test]
        fn click_prob_monotone_in_intensity((p, ch) in channel_domain()) {
            let z = |w| conditional_click_prob(&p, &ch, Basis::Z, w);
            prop_assert!(z(Intensity::Signal) >= z(Intensity::Decoy));
            prop_assert!(z(Intensity::Decoy) >= z(Intensity::Vacuum));
        }
    }
}
