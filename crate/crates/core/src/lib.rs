//! A deterministic, cycle-accounted simulator of a small speculative core,
//! with transient-execution attacks and a return-stack-buffer covert channel
//! built on top of it.

pub mod attacks;
pub mod countermeasures;
pub mod covert;
pub mod harness;
pub mod isa;
pub mod memory;
pub mod microarch;
