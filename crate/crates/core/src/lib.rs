//! Laser-method value computations for the Coppersmith–Winograd tensor
//! family.
//!
//! * [`tensor`]: exact sparse trilinear forms and matmul recognition.
//! * [`identity`]: ε-polynomial expansion and the CW border-rank identity.
//! * [`partition`]: partitioned tensors, canonical squaring, structural
//!   predicates.
//! * [`entropy`]: entropies, concave maximization on simplices,
//!   max-entropy with fixed marginals, root finding.
//! * [`values`]: value functionals and exponent-bound solvers.
//! * [`oracle`]: exhaustive finite-power checks.
//!
//! All logarithms are base 2.

pub mod entropy;
pub mod error;
pub mod identity;
pub mod oracle;
pub mod partition;
pub mod tensor;
pub mod values;

pub use error::{Error, Result};
