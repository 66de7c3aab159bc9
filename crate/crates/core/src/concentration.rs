//! Closed-form coefficients for Kato's refinement of the Azuma-Hoeffding
//! inequality, and the deviation terms built from them.
//!
//! For a sequence ξ₁..ξ_N of Bernoulli random variables adapted to a filtration
//! F₀ ⊆ F₁ ⊆ …, with Λ_N = Σξᵢ, Kato's bound states that for any constants
//! a, b with b ≥ |a|,
//!
//! ```text
//! Pr{ Σᵢ P(ξᵢ=1|F_{i-1}) ≥ Λ_N + [b·N + a·(2Λ_N − N)] / √N }
//!     ≤ exp( −2(b² − a²) / (1 + 4a/(3√N))² ),
//! ```
//!
//! and a mirrored statement bounds the lower tail with (1 − 4a/(3√N))² in the
//! exponent. Fixing the failure probability at ε and minimizing the deviation
//! `φ(a) = b(a)·N + a·(2C − N)` over `a` at an anticipated count `C` gives the
//! closed forms implemented here; `φ` is strictly convex in `a`, so the
//! stationary point is the unique minimum. The anticipated count only tunes
//! the coefficients: the tail bound holds for any constants with b ≥ |a|, so a
//! mis-guessed `C` loosens the deviation term without invalidating it.

use crate::{Error, Result};

/// Optimized pair `(a, b)` for one application of the tail bound at failure
/// probability ε. Satisfies `b ≥ |a|` by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KatoCoefficients {
    pub a: f64,
    pub b: f64,
}

/// Inputs for one deviation term.
///
/// `m` is the realized count the term is applied to and `m_est` the anticipated
/// count at which the coefficients were optimized. Counts are kept as reals so
/// that expected values can be fed through the same formulas as integer tallies.
#[derive(Debug, Clone, Copy)]
pub struct DeviationInput {
    pub m: f64,
    pub m_est: f64,
    pub n: f64,
    pub eps: f64,
}

fn check_domain(n: f64, c: f64, eps: f64) -> Result<()> {
    if !n.is_finite() || n < 1.0 {
        return Err(Error::InvalidInput(format!("N must be finite and >= 1, got {n}")));
    }
    if !c.is_finite() || c < 0.0 || c > n {
        return Err(Error::InvalidInput(format!("count must lie in [0, N] = [0, {n}], got {c}")));
    }
    if !eps.is_finite() || eps <= 0.0 || eps >= 1.0 {
        return Err(Error::InvalidInput(format!("eps must lie in (0, 1), got {eps}")));
    }
    Ok(())
}

/// Common pieces of the two closed forms. `le = ln ε < 0`, so both the bracket
/// `9C(N−C) − 2N·ln ε` and the radical's argument are strictly positive on the
/// validated domain.
fn coeff_pieces(n: f64, c: f64, eps: f64) -> (f64, f64, f64, f64) {
    let le = eps.ln();
    let bracket = 9.0 * c * (n - c) - 2.0 * n * le;
    let radicand = -n * n * le * bracket;
    debug_assert!(radicand >= 0.0 && bracket > 0.0);
    let root = 27.0 * std::f64::consts::SQRT_2 * (n - 2.0 * c) * radicand.sqrt();
    let den = 4.0 * (9.0 * n - 8.0 * le) * bracket;
    (le, bracket, root, den)
}

/// Coefficients minimizing the upper deviation `φ(a) = b(a)·N + a(2C − N)` with
/// `b(a) = sqrt(a² + ½(1 + 4a/(3√N))²·ln(1/ε))`.
pub fn kato_upper_coeffs(n: f64, c: f64, eps: f64) -> Result<KatoCoefficients> {
    check_domain(n, c, eps)?;
    let (le, _, root, den) = coeff_pieces(n, c, eps);
    let a = (216.0 * n.sqrt() * c * (n - c) * le - 48.0 * n.powf(1.5) * le * le + root) / den;
    let b = (a * a + 0.5 * (1.0 + 4.0 * a / (3.0 * n.sqrt())).powi(2) * (-le)).sqrt();
    Ok(KatoCoefficients { a, b })
}

/// Coefficients for the lower tail, where the exponent carries
/// `(1 − 4a/(3√N))²`. Related to the upper pair by the complement symmetry
/// `a_L(N, C, ε) = −a_U(N, N−C, ε)` and `b_L(N, C, ε) = b_U(N, N−C, ε)`.
pub fn kato_lower_coeffs(n: f64, c: f64, eps: f64) -> Result<KatoCoefficients> {
    check_domain(n, c, eps)?;
    let (le, _, root, den) = coeff_pieces(n, c, eps);
    let a = (-216.0 * n.sqrt() * c * (n - c) * le + 48.0 * n.powf(1.5) * le * le + root) / den;
    let b = (a * a + 0.5 * (1.0 - 4.0 * a / (3.0 * n.sqrt())).powi(2) * (-le)).sqrt();
    Ok(KatoCoefficients { a, b })
}

fn deviation(input: DeviationInput, coeffs: KatoCoefficients) -> f64 {
    let DeviationInput { m, n, .. } = input;
    // b ≥ |a| and |2M − N| ≤ N make this nonnegative; only rounding can dip below.
    ((coeffs.b * n + coeffs.a * (2.0 * m - n)) / n.sqrt()).max(0.0)
}

/// Upper deviation term: with probability at least 1 − ε the conditional-mean
/// sum does not exceed the realized count `m` by more than this.
pub fn deviation_upper(input: DeviationInput) -> Result<f64> {
    check_domain(input.n, input.m, input.eps)?;
    let coeffs = kato_upper_coeffs(input.n, input.m_est, input.eps)?;
    Ok(deviation(input, coeffs))
}

/// Lower deviation term: with probability at least 1 − ε the conditional-mean
/// sum does not fall below the realized count `m` by more than this.
pub fn deviation_lower(input: DeviationInput) -> Result<f64> {
    check_domain(input.n, input.m, input.eps)?;
    let coeffs = kato_lower_coeffs(input.n, input.m_est, input.eps)?;
    Ok(deviation(input, coeffs))
}
