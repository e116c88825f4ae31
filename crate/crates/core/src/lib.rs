//! Deterministic voxel drilling simulator: volume I/O, tick-based burr
//! cutting, iso-surface normals, event recording, kinematic metrics and a
//! websocket gateway.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod drill;
pub mod event;
pub mod gateway;
pub mod isosmooth;
pub mod metrics;
pub mod nrrd;
pub mod recorder;
pub mod session;
pub mod stack;
pub mod volume;

pub type Vec3 = nalgebra::Vector3<f64>;
