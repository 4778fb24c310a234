//! Error taxonomy shared by all modules.
//!
//! Failure classes map one-to-one onto the CLI exit codes: configuration
//! problems (bad grids, bad parameters) are distinguished from numerical
//! blow-ups so that batch drivers can react differently to each.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// An evaluation was requested outside the domain of definition,
    /// e.g. a time outside `[0, T]` or a point in no partition cell.
    #[error("domain error: {0}")]
    Domain(String),

    /// Mismatched or invalid grids, shapes or parameter combinations.
    #[error("configuration error: {0}")]
    Config(String),

    /// A trajectory produced a non-finite coordinate. The step index is
    /// reported so the offending configuration can be rerun with smaller
    /// steps; positions are never clamped.
    #[error("numerical blow-up at step {step}: {detail}")]
    BlowUp { step: usize, detail: String },

    /// An operation needs a capability the inputs do not provide
    /// (typically analytic gradients of the basis fields).
    #[error("capability error: {0}")]
    Capability(String),

    /// Invalid constructor arguments for a basis or template.
    #[error("construction error: {0}")]
    Construction(String),

    /// All Monte Carlo weights degenerated to zero.
    #[error("weight underflow: {0}; retry with a larger eps or fewer samples")]
    Underflow(String),

    /// A brute-force scan was asked to enumerate an unreasonably large set.
    #[error("size error: {0}")]
    Size(String),

    /// A transported point left the closed image domain. With modes that
    /// vanish on the boundary this signals a broken basis, not roundoff.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// A cached quantity (such as the minimal matching objective) must be
    /// computed before the requested operation.
    #[error("missing cache: {0}")]
    MissingCache(String),
}

pub type Result<T> = std::result::Result<T, Error>;
