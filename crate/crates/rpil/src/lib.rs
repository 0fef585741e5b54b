//! Relative-pose imitation learning pipeline.
//!
//! An omniscient smooth pose controller drives a simulated differential-drive
//! robot to goal poses near a horseshoe-shaped object. The recorded runs
//! become datasets on which small convolutional networks are trained to
//! reproduce the behaviour from 360° range-and-colour scans alone.
//!
//! Modules, bottom up:
//! - [`geom`]: poses, angle arithmetic, the egocentric polar transform,
//!   differential-drive velocity conversions.
//! - [`control`]: the omniscient pose controller (curvature law, speed
//!   shaping, reverse gear).
//! - [`sim`]: planar world, ray-cast scanner, kinematic integration,
//!   collision handling, run loop.
//! - [`dataset`]: spawn sampling, run generation, splits, normalization
//!   statistics, binary persistence.
//! - [`nn`]: self-contained network engine (circular 1-D conv, max pooling,
//!   dense layers, dropout, Adam, training loop, gradient checking).
//! - [`eval`]: regression metrics, closed-loop rollouts, CSV exports.
//! - [`cli`]: command-line front end.

pub mod binio;
pub mod cli;
pub mod control;
pub mod dataset;
pub mod eval;
pub mod geom;
pub mod nn;
pub mod sim;
