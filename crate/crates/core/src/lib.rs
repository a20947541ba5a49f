#![no_std]

extern crate alloc;

pub mod nn;
pub mod stochastic;
pub mod env;
pub mod scenarios;
pub mod agents;
pub mod metrics;
