//! Intermediate generator optimization on simulated SDE corruption processes.
//!
//! The crate covers the whole pipeline at desk scale: Euler–Maruyama simulation
//! of forward processes ([`sde`]), a small reverse-mode MLP substrate ([`nn`]),
//! the score network with its intermediate pathway and training loop
//! ([`score`]), reverse-time samplers ([`sampling`]), and downstream probes over
//! trained or rigged generators ([`downstream`]).

pub mod datasets;
pub mod downstream;
pub mod io;
pub mod nn;
pub mod rng;
pub mod sde;
pub mod sampling;
pub mod score;
