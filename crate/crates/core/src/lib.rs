//! Fully hyperbolic transformer components on the Lorentz model.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod autodiff;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod layers;
pub mod lorentz;
pub mod mice;
pub mod model;
pub mod ricci;
pub mod verify;

pub use error::{Error, Result};
pub use lorentz::{Curvature, LorentzBatch, LorentzPoint};
