//! Safety-guaranteed model predictive control for signalized traffic networks.

pub mod abstraction;
pub mod control;
pub mod games;
pub mod geometry;
pub mod milp;
pub mod mpc;
pub mod network;
pub mod pipeline;
pub mod reach;
pub mod sampler;
pub mod scenario;
