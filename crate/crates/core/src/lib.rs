// `!(x > 0.0)` and friends are used on purpose: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod arena;
pub mod cohortgen;
pub mod eval;
pub mod fixtures;
pub mod http;
pub mod metrics;
pub mod model;
pub mod persist;
pub mod retrieval;
pub mod rng;
pub mod stats;
pub mod welfare;
