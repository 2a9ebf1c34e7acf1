//! Fixed data addresses shared by the attack programs.
//!
//! Each object sits on its own page so a page fault on one never disturbs
//! another, and the line offsets are staggered so no two objects share an L1
//! set on any built-in profile.

/// Probe array: 256 lines, one per byte value.
pub const ORACLE: u64 = 0x10_0000;
pub const ORACLE_LINES: usize = 256;

/// Address of oracle line `index`.
pub const fn oracle_line(index: u64) -> u64 {
    ORACLE + index * 64
}

/// Public array the V1 victim indexes.
pub const ARRAY1: u64 = 0x2_0040;
pub const ARRAY1_LEN: u64 = 16;
/// Cell holding `ARRAY1_LEN`; unmapped to open a page-fault window.
pub const BOUND: u64 = 0x3_0080;
/// User-space secret, one byte per cell.
pub const SECRET: u64 = 0x4_00c0;
/// Secret on a kernel-only page.
pub const KERNEL_SECRET: u64 = 0x5_0100;
/// V4: slow cell holding the pointer's address.
pub const V4_SLOW: u64 = 0x6_0140;
/// V4: the pointer the attacker redirects.
pub const V4_PTR: u64 = 0x6_1180;
/// V4: cell the pointer is legitimately overwritten to.
pub const V4_PUBLIC: u64 = 0x6_21c0;
/// Meltdown: an evicted cell that keeps the faulting load from retiring early.
pub const DELAY: u64 = 0x7_0200;
/// Oracle line the one-instruction gadget loads.
pub const PROBE_INDEX: u64 = 0x5a;
