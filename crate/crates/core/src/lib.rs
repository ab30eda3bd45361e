//! Differentiable 2D traffic simulation for generating safety-critical
//! driving scenarios by gradient descent through a kinematic bicycle model.

pub mod adam;
pub mod agents;
pub mod builder;
pub mod costs;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod kinematics;
pub mod mapgen;
pub mod optimizers;
pub mod route;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
