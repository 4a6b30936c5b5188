#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Moment models for glioma invasion along anisotropic brain tissue.
//!
//! The crate covers the velocity quadrature, tissue-derived coefficients,
//! first- and higher-order moment closures, a second-order finite-volume
//! solver for the resulting hyperbolic relaxation systems, the macroscopic
//! diffusion limit, and scenario drivers used by the `moment-glioma` binary.

pub mod closures;
pub mod compare;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod field_io;
pub mod fv;
pub mod grid;
pub mod kinetic;
pub mod linalg;
pub mod quadrature;
pub mod scenario;
pub mod tissue;

pub use error::{Error, Result};
