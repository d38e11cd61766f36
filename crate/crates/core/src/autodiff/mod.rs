//! Minimal reverse-mode differentiation over dense arrays.
//!
//! A fresh expression graph is built for every evaluation; only parameter
//! leaves (held in a [`ParamStore`]) persist across steps. `backward` walks
//! the graph once in reverse topological order and accumulates gradients
//! into every ancestor, so repeated calls without zeroing add up.

mod gradcheck;
mod graph;
mod params;

pub use gradcheck::{grad_check, GradCheckReport, ParamCheck};
pub use graph::{GraphError, Node};
pub use params::ParamStore;
