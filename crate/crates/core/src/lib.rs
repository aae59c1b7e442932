//! Scan-to-map LiDAR registration with information-driven good feature
//! selection.
//!
//! A frame flows through [`features`] (curvature-based edge/planar
//! extraction), [`association`] (local line/plane models from the map),
//! [`selector`] (stochastic-greedy log-det maximization over per-feature
//! information matrices), [`solver`] (IRLS Gauss-Newton) and back into the
//! map; [`degeneracy`] adapts the selection budget online. [`synth`] and
//! [`eval`] provide ground truth and accuracy metrics.

pub mod association;
pub mod cloud_io;
pub mod config;
pub mod degeneracy;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod pipeline;
pub mod residuals;
pub mod selector;
pub mod solver;
pub mod synth;
