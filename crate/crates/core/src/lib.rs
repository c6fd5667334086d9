//! Numerical workbench for the intrinsic geometry of non-CMC biconservative
//! surfaces in three-dimensional space forms.
//!
//! The pipeline integrates the curvature ODE ([`profile`]), builds the explicit
//! `(u, s)` metric and its connection ([`metric`]), checks conformal and
//! Ricci-type identities ([`conformal`]), solves the flattening exponent
//! problem ([`flattener`]) and verifies the extrinsic Gauss, Codazzi and
//! biconservativity equations ([`embedding`]). [`pipeline`] runs the stages from a
//! single configuration and writes the reports.

pub mod conformal;
pub mod embedding;
pub mod error;
pub mod fixtures;
pub mod flattener;
pub mod grid;
pub mod jet;
pub mod metric;
pub mod ode;
pub mod pipeline;
pub mod profile;
pub mod report;
pub mod stencil;

pub use error::{Error, Result};
