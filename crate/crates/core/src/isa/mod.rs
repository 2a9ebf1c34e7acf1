//! The toy instruction set: instruction types, the text assembler, and
//! static validation.

mod assembler;
mod instruction;
mod validate;

pub use assembler::{assemble, disassemble, AsmError, AsmErrorKind, Program};
pub use instruction::{
    Constant, Instruction, MemOperand, Opcode, Operand, Reg, SysReg, NUM_REGS, SP,
};
pub use validate::{validate, CallDepth, ValidateOptions, ValidationReport};
