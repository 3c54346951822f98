//! Configuration-driven experiment runner for the twisting-echo simulations.

pub mod config;
pub mod figures;
pub mod output;
pub mod run;
