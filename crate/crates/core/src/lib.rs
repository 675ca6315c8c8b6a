//! Price formation in electricity markets as a constrained mean-field game.
//!
//! A continuum of storage owners trades energy at a spot price `ϖ(t)` chosen so
//! that aggregate trading balances the production rate `Q(t)`. The crate solves
//! the coupled backward value-function equation, the forward density equation
//! and the balance constraint, provides the closed-form linear-quadratic
//! models, and calibrates the wear constant against a reference price.

pub mod calibration;
pub mod csvio;
pub mod equilibrium;
pub mod error;
pub mod fp;
pub mod hjb;
pub mod lq;
pub mod model;
pub mod monotonicity;
pub mod report;
pub mod verify;

pub use error::ModelError;
