//! Multiscale diffusion prediction network for gridded dynamical systems.
//!
//! The crate is self-contained: a small tensor engine with reverse-mode
//! autodiff ([`tensor`]), PDE simulators that generate ground truth ([`pde`]),
//! a bit-exact dataset/checkpoint container ([`io`]), the multiscale residual
//! codec ([`codec`]), a coarsening-staged conditional diffusion decoder
//! ([`diffusion`]), a graph-attention latent ODE predictor ([`gnode`]),
//! two-stage training with autoregressive rollout ([`training`]) and the
//! evaluation metrics ([`metrics`]).

pub mod codec;
pub mod diffusion;
pub mod error;
pub mod gnode;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pde;
pub mod rng;
pub mod tensor;
pub mod training;
