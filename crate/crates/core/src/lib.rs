//! Finite-key secret-key rates for decoy-state BB84 with a passive, biased basis choice.
//!
//! The receiver splits incoming light on an asymmetric beam splitter (transmittance
//! `q` toward the X line, `1 - q` toward the Z line) instead of actively switching
//! bases, so every pulse is measured and cross-line clicks carry information that an
//! active receiver would discard. The crate estimates the extractable key length for
//! that setup:
//!
//! * [`concentration`]: closed-form coefficients for Kato's refinement of the
//!   Azuma-Hoeffding inequality and the deviation terms built from them.
//! * [`protocol`] / [`channel`]: protocol parameters, source statistics, and the
//!   expected detection counts of a lossy channel with dark counts.
//! * [`bounds`]: the finite-key phase-error upper bound and single-photon lower
//!   bound assembled from decoy-state linear combinations plus deviation terms.
//! * [`keyrate`]: secrecy/correctness budgets and the key-length formula.
//! * [`optimizer`]: grid + golden-section search over `(p_Z, mu_S)` and rate sweeps
//!   over channel transmittance.
//! * [`montecarlo`]: a per-pulse event simulator used to validate both the channel
//!   model and the statistical soundness of the bounds.

pub mod bounds;
pub mod channel;
pub mod concentration;
pub mod keyrate;
pub mod montecarlo;
pub mod optimizer;
pub mod protocol;

/// Crate-wide error type. Statistical check failures are not errors; they are
/// reported through the `pass` flags of the validation reports.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// A numeric argument is outside its documented domain.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// The channel model produced no sifted events, so rates are undefined.
    #[error("degenerate channel: {0}")]
    DegenerateChannel(String),
    /// An operation was invoked outside its stated preconditions.
    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, Error>;
