//! Compiles and runs the guide's code snippets.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/isa.md")]
pub mod isa {}

#[doc = include_str!("../../../book/src/memory.md")]
pub mod memory {}

#[doc = include_str!("../../../book/src/core.md")]
pub mod core_chapter {}

#[doc = include_str!("../../../book/src/attacks.md")]
pub mod attacks {}

#[doc = include_str!("../../../book/src/covert.md")]
pub mod covert {}

#[doc = include_str!("../../../book/src/countermeasures.md")]
pub mod countermeasures {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

#[doc = include_str!("../../../README.md")]
pub mod readme {}
