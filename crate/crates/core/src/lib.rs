//! Discrete-event simulator for secure anonymous position-based routing in
//! mobile ad hoc networks.

pub mod defense;
pub mod discovery;
pub mod harness;
pub mod kernel;
pub mod message;
pub mod model;
pub mod neighbor;
pub mod trust;
pub mod vhr;
