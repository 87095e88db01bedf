//! Graph Hierarchical Recurrence: two-timescale recurrent message passing over
//! a graph and its pooled abstraction, with a random-geometric-graph
//! shortest-path harness.

pub mod autodiff;
pub mod baselines;
pub mod checks;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod hierarchy;
pub mod layers;
pub mod model;
pub mod network;
pub mod seeding;
pub mod train;

pub use error::{Error, Result};
