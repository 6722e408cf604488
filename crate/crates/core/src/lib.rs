#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod experiments;
pub mod functionals;
pub mod maps;
pub mod quadrature;
pub mod ramp;
pub mod tensor3;

pub use error::{Error, Result};
pub use tensor3::{Mat3, Vec3};
