//! Safety filtering for linear systems whose model is known only through
//! recorded input-output data.
//!
//! The pipeline: record one persistently exciting trajectory ([`data`]),
//! fit a one-step output predictor and wrap it into an extended-state
//! linear model ([`model`]), compute the maximal control-invariant subset
//! of the input-output constraint polytope ([`geometry`]), then use the
//! margin to that set as a discrete-time barrier certificate inside a
//! minimally invasive QP filter ([`filter`]). [`sim`] closes the loop
//! against a ground-truth plant, and [`numkit`] holds the dense LP/QP
//! kernels everything else sits on.

pub mod data;
pub mod filter;
pub mod geometry;
pub mod model;
pub mod numkit;
pub mod sim;
