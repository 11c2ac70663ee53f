//! Simulation and shape control of gyroscopic tensegrity structures.

pub mod dynamics;
pub mod gain_synthesis;
pub mod optimize;
pub mod scenario;
pub mod shape_control;
pub mod topology;
