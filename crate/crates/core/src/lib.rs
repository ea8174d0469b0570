//! Camera-view scaling for imitation learning.
//!
//! A single robot demonstration seen from several cameras becomes several
//! training examples once its actions are expressed in each camera's frame.
//! This crate provides the geometry for that relabeling, a small tabletop
//! simulator with a camera rig, a from-scratch conditional diffusion policy,
//! multiview composition of that policy at inference, and an experiment
//! harness that ties them together.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar to `f64`.

pub mod checkpoint;
pub mod compose;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod scalar;
pub mod sim;

pub use error::{DatasetError, Error, Result};
pub use geometry::{ActionSpace, ActionSpaceTag};
pub use scalar::Real;

pub type Vec3 = geometry::Vec3<f64>;
pub type Rotation = geometry::Rotation<f64>;
pub type Pose = geometry::Pose<f64>;
pub type Action = geometry::Action<f64>;
pub type NoiseSchedule = diffusion::NoiseSchedule<f64>;
pub type DenoiserParams = diffusion::DenoiserParams<f64>;
pub type DiffusionPolicy = compose::DiffusionPolicy<f64>;
