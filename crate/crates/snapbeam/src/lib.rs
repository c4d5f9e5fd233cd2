//! Planar co-rotational beam solver for snap-through analysis of bistable
//! grippers: equilibrium path continuation through limit points, double-well
//! energy landscapes, and grasp-event detection on pressure traces.

pub mod bistability;
pub mod cli;
pub mod corotational;
pub mod model;
pub mod scenarios;
pub mod sensing;
pub mod solver;
mod svg;
