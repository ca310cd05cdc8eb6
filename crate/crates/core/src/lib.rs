//! Nonlocal calibrations, fields of extremals and their numerical
//! certification at desk scale.

pub mod certificate;
pub mod cli;
pub mod field;
pub mod functional;
pub mod gauss;
pub mod lagrangian;
pub mod mesh;
pub mod nltv;
pub mod par;
pub mod verify;

/// A point of `ℝⁿ`, `n ≤ 2`; in 1D the second coordinate is zero.
pub type Point = [f64; 2];

pub use certificate::{Certificate, Counterexample, Verdict};
