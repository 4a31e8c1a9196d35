//! Smallest eigenvalues of Hankel moment matrices `H[i][j] = μ_{i+j}` for the
//! weight `e^{-x^β}`, computed in exact fixed-point arithmetic.
//!
//! The pipeline runs [`moments`] → [`ldlt`] → [`inversion`] → [`eigen`], and
//! [`pipeline`] drives it end to end. [`asymptotics`] holds the closed-form
//! large-N predictions and the exponent fit.
//!
//! ```
//! use hankel::pipeline::{compute, ComputeParams};
//!
//! let r = compute(&ComputeParams::new(2, 128).with_k(2)).unwrap();
//! // [[2, 12], [12, 240]] has smallest eigenvalue 121 - √14305
//! assert!((r.lambda1.unwrap() - (121.0 - 14305f64.sqrt())).abs() < 1e-13);
//! ```

pub mod asymptotics;
pub mod eigen;
pub mod error;
pub mod fixedpoint;
pub mod inversion;
pub mod ldlt;
pub mod moments;
pub mod pipeline;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/fixed-point.md")]
    mod fixed_point {}
    #[doc = include_str!("../../../book/src/moments.md")]
    mod moments {}
    #[doc = include_str!("../../../book/src/ldlt.md")]
    mod ldlt {}
    #[doc = include_str!("../../../book/src/inversion.md")]
    mod inversion {}
    #[doc = include_str!("../../../book/src/eigen.md")]
    mod eigen {}
    #[doc = include_str!("../../../book/src/asymptotics.md")]
    mod asymptotics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
