//! Pulse-level simulation of the passive receiver, plus statistical validators
//! for the closed-form channel model and the finite-key bounds.
//!
//! Every pulse owns one counter-mode substream of a ChaCha cipher: the trial
//! seed keys the cipher, the pulse index selects the stream. Any pulse can be
//! replayed in isolation and trials parallelize without shared state, so a
//! tally is reproducible bit for bit from `(trial_seed, pulse_count)` alone.
//!
//! Draws inside a pulse follow a fixed order: basis, intensity, photon number,
//! survival and routing per photon, one misalignment flip when photons land on
//! the encoding line, the four detector dark counts, then any tie-break coins.
//! Detector 0 of the encoding line is the one matching the sent bit; photons
//! land there unless the misalignment flip moved them. A line clicks when it
//! holds a surviving photon or either of its dark counts fired; both lines
//! clicking makes a cross event, an exclusive click on the encoding line makes
//! a sifted event, anything else is discarded. On a sifted line a lone
//! wrong-detector click is an error and a within-line double click resolves by
//! coin, which reproduces the closed-form dark error terms exactly. The
//! single-photon phase flag follows the virtual X measurement: a clean
//! photon-driven click flips with the misalignment probability, a
//! dark-contaminated one with probability 1/2.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{finite_bounds, EstimateSet};
use crate::channel::{self, IntensityMap, ObservedCounts};
use crate::keyrate::SecurityParams;
use crate::protocol::{
    validate_channel, validate_params, Basis, ChannelParams, Intensity, ProtocolParams,
};
use crate::{Error, Result};

/// How one pulse ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// No click, or an exclusive click on the non-encoding line.
    Discarded,
    /// Both lines clicked; announced, never sifted.
    Cross,
    SiftedZ { error: bool, single_photon: bool, phase_error: bool },
    SiftedX { error: bool },
}

/// Full trace of one simulated pulse.
#[derive(Debug, Clone, Copy)]
pub struct PulseRecord {
    pub basis: Basis,
    pub intensity: Intensity,
    /// Photons that left the source (the decoy-state photon number).
    pub photons: u32,
    pub z_click: bool,
    pub x_click: bool,
    pub outcome: Outcome,
}

/// RNG for one pulse of one trial.
pub fn pulse_rng(trial_seed: u64, pulse_idx: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    rng.set_stream(pulse_idx);
    rng
}

/// Independent per-trial seeds derived from one master seed (splitmix64).
pub fn trial_seed(master_seed: u64, trial_idx: u64) -> u64 {
    let mut z = master_seed
        .wrapping_add((trial_idx.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_photons(mu: f64, rng: &mut ChaCha8Rng) -> u32 {
    if mu <= 0.0 {
        return 0;
    }
    Poisson::new(mu).expect("positive mean").sample(rng) as u32
}

/// Simulate one pulse with the given per-pulse RNG.
pub fn simulate_pulse(p: &ProtocolParams, ch: &ChannelParams, rng: &mut ChaCha8Rng) -> PulseRecord {
    let basis = if rng.gen::<f64>() < p.p_z { Basis::Z } else { Basis::X };
    let u = rng.gen::<f64>();
    let intensity = if u < p.p_s {
        Intensity::Signal
    } else if u < p.p_s + p.p_d {
        Intensity::Decoy
    } else {
        Intensity::Vacuum
    };
    let photons = sample_photons(p.intensity_mu(intensity), rng);

    let mut z_photons = 0u32;
    let mut x_photons = 0u32;
    for _ in 0..photons {
        if rng.gen::<f64>() < ch.eta {
            if rng.gen::<f64>() < p.q {
                x_photons += 1;
            } else {
                z_photons += 1;
            }
        }
    }

    let own_photons = match basis {
        Basis::Z => z_photons,
        Basis::X => x_photons,
    };
    let flipped = own_photons > 0 && rng.gen::<f64>() < p.delta_mis;

    // Fixed order: Z detector 0, Z detector 1, X detector 0, X detector 1.
    let dark = [
        rng.gen::<f64>() < p.d,
        rng.gen::<f64>() < p.d,
        rng.gen::<f64>() < p.d,
        rng.gen::<f64>() < p.d,
    ];
    let z_click = z_photons > 0 || dark[0] || dark[1];
    let x_click = x_photons > 0 || dark[2] || dark[3];

    let outcome = if z_click && x_click {
        Outcome::Cross
    } else if basis == Basis::Z && z_click {
        let error = sifted_error(own_photons, flipped, dark[0], dark[1], rng);
        let single_photon = photons == 1;
        let phase_error = if single_photon {
            let photon_det_1 = flipped;
            let other_det_dark = if photon_det_1 { dark[0] } else { dark[1] };
            let clean = z_photons == 1 && !other_det_dark;
            let threshold = if clean { p.delta_mis } else { 0.5 };
            rng.gen::<f64>() < threshold
        } else {
            false
        };
        Outcome::SiftedZ { error, single_photon, phase_error }
    } else if basis == Basis::X && x_click {
        let error = sifted_error(own_photons, flipped, dark[2], dark[3], rng);
        Outcome::SiftedX { error }
    } else {
        Outcome::Discarded
    };

    PulseRecord { basis, intensity, photons, z_click, x_click, outcome }
}

/// Bit value measured on an exclusively clicking encoding line.
fn sifted_error(
    own_photons: u32,
    flipped: bool,
    dark_right: bool,
    dark_wrong: bool,
    rng: &mut ChaCha8Rng,
) -> bool {
    let right = (own_photons > 0 && !flipped) || dark_right;
    let wrong = (own_photons > 0 && flipped) || dark_wrong;
    match (right, wrong) {
        (true, true) => rng.gen::<f64>() < 0.5,
        (false, true) => true,
        _ => false,
    }
}

/// Integer tallies of one trial, in the same shape the closed-form
/// expectations use, plus the hidden truths the bounds are checked against.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct TrialCounts {
    pub counts: ObservedCounts,
    /// Bit errors inside the sifted Z sample (`counts.e_bit` is this over
    /// `counts.n_sift`).
    pub n_z_error: f64,
    /// Sifted Z events whose pulse carried exactly one photon.
    pub n_z1: f64,
    /// Those of them whose virtual X measurement came out flipped.
    pub n_ph1: f64,
    pub pulses: u64,
}

#[derive(Default, Clone, Copy)]
struct Tally {
    n_z: [u64; 3],
    n_x: [u64; 3],
    n_x_error: [u64; 3],
    n_cross: [u64; 3],
    n_z_error: u64,
    n_z1: u64,
    n_ph1: u64,
}

fn slot(w: Intensity) -> usize {
    match w {
        Intensity::Signal => 0,
        Intensity::Decoy => 1,
        Intensity::Vacuum => 2,
    }
}

impl Tally {
    fn absorb(&mut self, r: &PulseRecord) {
        let s = slot(r.intensity);
        match r.outcome {
            Outcome::Discarded => {}
            Outcome::Cross => self.n_cross[s] += 1,
            Outcome::SiftedZ { error, single_photon, phase_error } => {
                self.n_z[s] += 1;
                self.n_z_error += error as u64;
                self.n_z1 += single_photon as u64;
                self.n_ph1 += phase_error as u64;
            }
            Outcome::SiftedX { error } => {
                self.n_x[s] += 1;
                self.n_x_error[s] += error as u64;
            }
        }
    }

    fn merge(mut self, other: Tally) -> Tally {
        for i in 0..3 {
            self.n_z[i] += other.n_z[i];
            self.n_x[i] += other.n_x[i];
            self.n_x_error[i] += other.n_x_error[i];
            self.n_cross[i] += other.n_cross[i];
        }
        self.n_z_error += other.n_z_error;
        self.n_z1 += other.n_z1;
        self.n_ph1 += other.n_ph1;
        self
    }

    fn finish(self, pulses: u64) -> TrialCounts {
        let map = |a: [u64; 3]| IntensityMap {
            signal: a[0] as f64,
            decoy: a[1] as f64,
            vacuum: a[2] as f64,
        };
        let n_z = map(self.n_z);
        let n_sift = n_z.total();
        let e_bit = if n_sift > 0.0 { self.n_z_error as f64 / n_sift } else { 0.0 };
        TrialCounts {
            counts: ObservedCounts {
                n_z,
                n_x: map(self.n_x),
                n_x_error: map(self.n_x_error),
                n_cross: map(self.n_cross),
                n_sift,
                e_bit,
            },
            n_z_error: self.n_z_error as f64,
            n_z1: self.n_z1 as f64,
            n_ph1: self.n_ph1 as f64,
            pulses,
        }
    }
}

/// Simulate `pulses` pulses and tally them. Parallel over pulses, but the
/// result depends only on `(trial_seed, pulses)`, not on thread scheduling.
pub fn run_trial(
    p: &ProtocolParams,
    ch: &ChannelParams,
    pulses: u64,
    trial_seed: u64,
) -> TrialCounts {
    let tally = (0..pulses)
        .into_par_iter()
        .fold(Tally::default, |mut t, i| {
            let mut rng = pulse_rng(trial_seed, i);
            t.absorb(&simulate_pulse(p, ch, &mut rng));
            t
        })
        .reduce(Tally::default, Tally::merge);
    tally.finish(pulses)
}

/// One observable compared against its expectation.
#[derive(Debug, Clone, Serialize)]
pub struct AgreementEntry {
    pub name: String,
    pub observed: f64,
    pub expected: f64,
    /// Normal score under the binomial null; infinite when something was
    /// observed where the model predicts strictly nothing.
    pub z: f64,
}

/// Channel-model agreement summary.
#[derive(Debug, Clone, Serialize)]
pub struct AgreementReport {
    pub entries: Vec<AgreementEntry>,
    pub max_abs_z: f64,
    pub z_threshold: f64,
    pub pass: bool,
}

/// Score every tally entry against an expectation vector.
///
/// The expectations need not come from the built-in model; feeding a doctored
/// vector is the intended way to check that the test statistic actually
/// detects a wrong model.
pub fn channel_agreement(
    trial: &TrialCounts,
    expected: &ObservedCounts,
    pulses: u64,
    z_threshold: f64,
) -> AgreementReport {
    let n = pulses as f64;
    let score = |name: &str, obs: f64, exp: f64| -> AgreementEntry {
        let p = (exp / n).clamp(0.0, 1.0);
        let sigma = (n * p * (1.0 - p)).sqrt();
        let z = if sigma > 0.0 {
            (obs - exp) / sigma
        } else if obs == exp {
            0.0
        } else {
            f64::INFINITY
        };
        AgreementEntry { name: name.into(), observed: obs, expected: exp, z }
    };
    let mut entries = Vec::with_capacity(14);
    let kinds: [(&str, &IntensityMap, &IntensityMap); 4] = [
        ("n_z", &trial.counts.n_z, &expected.n_z),
        ("n_x", &trial.counts.n_x, &expected.n_x),
        ("n_x_error", &trial.counts.n_x_error, &expected.n_x_error),
        ("n_cross", &trial.counts.n_cross, &expected.n_cross),
    ];
    for (kind, obs, exp) in kinds {
        for (w, label) in [
            (Intensity::Signal, "signal"),
            (Intensity::Decoy, "decoy"),
            (Intensity::Vacuum, "vacuum"),
        ] {
            entries.push(score(&format!("{kind}.{label}"), obs.get(w), exp.get(w)));
        }
    }
    entries.push(score("n_sift", trial.counts.n_sift, expected.n_sift));
    entries.push(score("n_z_error", trial.n_z_error, expected.e_bit * expected.n_sift));
    let max_abs_z = entries.iter().map(|e| e.z.abs()).fold(0.0, f64::max);
    AgreementReport { entries, max_abs_z, z_threshold, pass: max_abs_z <= z_threshold }
}

/// Simulate one run and score it against the closed-form expectations.
///
/// Requires zero misalignment: the closed-form error terms treat misalignment
/// additively, so the exact binomial null only holds without it. The click and
/// cross expectations would match either way.
pub fn validate_channel_model(
    p: &ProtocolParams,
    ch: &ChannelParams,
    pulses: u64,
    seed: u64,
    z_threshold: f64,
) -> Result<AgreementReport> {
    if p.delta_mis != 0.0 {
        return Err(Error::Precondition(
            "channel-model validation requires delta_mis = 0".into(),
        ));
    }
    validate_params(p).into_result()?;
    validate_channel(ch).into_result()?;
    let scaled = ProtocolParams { n: pulses, ..*p };
    let expected = channel::expected_counts(&scaled, ch)?;
    let trial = run_trial(&scaled, ch, pulses, seed);
    Ok(channel_agreement(&trial, &expected, pulses, z_threshold))
}

/// Violation tallies of repeated trials against the finite-key bounds, with
/// the phase-error upper bound optionally rescaled (a deliberately broken
/// bound must produce violations, otherwise the test has no power).
pub fn bounds_violation_counts(
    p: &ProtocolParams,
    ch: &ChannelParams,
    sec: &SecurityParams,
    trials: u64,
    master_seed: u64,
    scale_upper: f64,
) -> Result<(u64, u64)> {
    validate_params(p).into_result()?;
    validate_channel(ch).into_result()?;
    let est = EstimateSet::from_channel_model(p, ch)?;
    let mut z1_violations = 0u64;
    let mut ph_violations = 0u64;
    for t in 0..trials {
        let tally = run_trial(p, ch, p.n, trial_seed(master_seed, t));
        let b = finite_bounds(&tally.counts, &est, p, sec.eps, true)?;
        if b.n_z1_lower > tally.n_z1 {
            z1_violations += 1;
        }
        if scale_upper * b.n_ph1_upper < tally.n_ph1 {
            ph_violations += 1;
        }
    }
    Ok((z1_violations, ph_violations))
}

/// Coverage report of the two finite-key bounds over repeated trials.
#[derive(Debug, Clone, Serialize)]
pub struct BoundsSoundnessReport {
    pub trials: u64,
    pub eps: f64,
    /// Trials where the single-photon lower bound exceeded the true count.
    pub z1_violations: u64,
    /// Trials where the phase-error upper bound fell below the true count.
    pub ph_violations: u64,
    /// Violation budgets (count failure probability times trials) plus three
    /// binomial standard deviations.
    pub z1_allowed: f64,
    pub ph_allowed: f64,
    pub pass: bool,
}

/// Run `trials` independent simulations of `p.n` pulses each and demand that
/// bound violations stay within their failure budgets. The single-photon
/// bound spends 4ε per trial and the phase bound 5ε.
pub fn validate_bounds(
    p: &ProtocolParams,
    ch: &ChannelParams,
    sec: &SecurityParams,
    trials: u64,
    master_seed: u64,
) -> Result<BoundsSoundnessReport> {
    let (z1_violations, ph_violations) =
        bounds_violation_counts(p, ch, sec, trials, master_seed, 1.0)?;
    let t = trials as f64;
    let allowed = |per_trial: f64| {
        let b = (per_trial * t).min(t);
        b + 3.0 * (b * (1.0 - per_trial).max(0.0)).sqrt()
    };
    let z1_allowed = allowed(4.0 * sec.eps);
    let ph_allowed = allowed(5.0 * sec.eps);
    Ok(BoundsSoundnessReport {
        trials,
        eps: sec.eps,
        z1_violations,
        ph_violations,
        z1_allowed,
        ph_allowed,
        pass: (z1_violations as f64) <= z1_allowed && (ph_violations as f64) <= ph_allowed,
    })
}
