//! Self-evolving few-shot imitation learning on a deterministic 2-D
//! pick-and-place micro-benchmark.

pub mod cli;
pub mod evolution;
pub mod microsim;
pub mod nn;
pub mod policy;
pub mod rng;
pub mod selector;
pub mod selftest;
pub mod storage;
