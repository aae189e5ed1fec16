//! MXGNet: multiplex graph networks for diagrammatic reasoning, with a
//! procedural generator for verifiable matrix-reasoning and Euler-syllogism
//! tasks, a deterministic differentiable array engine, and a training
//! harness.

pub mod error;
pub mod harness;
pub mod nn;
pub mod model;
pub mod mxgraph;
pub mod objrepr;
pub mod reasoner;
pub mod ssr;
pub mod taskgen;
pub mod numerics;

pub use error::{Error, Result};
