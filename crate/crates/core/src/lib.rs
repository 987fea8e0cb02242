//! Entropy-variable finite-volume solver for Maxwell-Stefan diffusion of
//! multicomponent mixtures.

pub mod banded;
pub mod config;
pub mod diagnostics;
pub mod grid;
pub mod mixture;
pub mod runner;
pub mod spectral;
pub mod state;
pub mod stepper;
