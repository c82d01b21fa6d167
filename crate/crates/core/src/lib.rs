//! Articulated multi-person pose tracking by minimum-cost subgraph multicut.
//!
//! Body-part proposals from every frame of a clip become nodes of a
//! spatio-temporal graph. Edges carry log-odds costs from logistic models
//! (cross-type geometry, same-type distance, temporal appearance and motion
//! agreement, or person-conditioned attachment probabilities). Solving the
//! multicut selects the proposals to keep and groups them into person tracks.

// NaN-rejecting `!(x > 0.0)` checks are intentional
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::type_complexity,
    clippy::needless_range_loop,
    clippy::single_range_in_vec_init
)]

pub mod builder;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod solver;
pub mod synth;
pub mod temporal;

pub use error::{Error, Result};
