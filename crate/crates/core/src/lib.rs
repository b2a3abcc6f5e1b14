//! Heterogeneous graph foundation model toolkit.

pub mod hetgraph;
pub mod numerics;
pub mod syngen;
pub mod model;
pub mod batching;
pub mod pretrain;
pub mod eval;
pub mod scaling;
pub mod expressivity;
