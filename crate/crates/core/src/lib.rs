//! Numerical laboratory for weak-type estimates of difference quotients of
//! Sobolev functions: level-set measures of `|u(x) - u(y)| / |x - y|^alpha`,
//! their weak-`L^p` quasinorms and limits, Gagliardo seminorms, covering
//! lemmas, maximal-function bounds and interpolation corollaries.

pub mod corollaries;
pub mod covering;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod fields;
pub mod levelset;
pub mod maximal;
pub mod quadrature;
pub mod rng;
pub mod seminorms;

pub use error::{Error, Result};

/// Largest spatial dimension supported.
pub const MAX_DIM: usize = 4;
