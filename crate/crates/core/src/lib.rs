//! Pedestrian crossing-intention prediction from trajectories and scene
//! frames: a non-autoregressive trajectory transformer, a sequence attention
//! branch, a visual attention branch over overlay-rendered frames, late
//! fusion, staged training and evaluation.

pub mod data;
mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod sam;
pub mod train;
pub mod trajpred;
pub mod vam;

pub use error::{Error, Result};
