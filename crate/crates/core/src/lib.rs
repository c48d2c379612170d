//! Simulation core for Schmidt-number distillation of spatially entangled
//! photon pairs with a local filter on the pump.

pub mod error;
pub mod fieldgrid;
pub mod physmodel;
pub mod biphoton;
pub mod schmidt;
pub mod emccd;
pub mod fitting;

pub use error::{Error, Result};
