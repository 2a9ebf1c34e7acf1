use std::fmt;

use serde::{Deserialize, Serialize};

/// Number of general-purpose registers.
pub const NUM_REGS: usize = 16;

/// Register used as the software stack pointer.
pub const SP: Reg = Reg(15);

/// A general-purpose register index in `0..=15`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Reg(u8);

impl Reg {
    pub fn new(index: u8) -> Option<Reg> {
        (usize::from(index) < NUM_REGS).then_some(Reg(index))
    }

    pub fn index(self) -> usize {
        usize::from(self.0)
    }
}

impl TryFrom<u8> for Reg {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Reg::new(value).ok_or_else(|| format!("register index {value} out of range"))
    }
}

impl From<Reg> for u8 {
    fn from(r: Reg) -> u8 {
        r.0
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// System register identifier, read with `MRS`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SysReg(pub u16);

impl fmt::Display for SysReg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// Second source of an ALU operation or comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operand {
    Reg(Reg),
    Imm(i64),
}

/// Value loaded by `MOVI`: a plain immediate or the address of a code label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Constant {
    Imm(i64),
    Code(usize),
}

/// Base register plus signed displacement, written `[rN+off]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemOperand {
    pub base: Reg,
    pub offset: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Opcode {
    Movi,
    Ld,
    St,
    Add,
    Shl,
    And,
    Cmp,
    Bge,
    Call,
    Ret,
    Flush,
    Rdcyc,
    Mrs,
    Yield,
    Fence,
    Halt,
    Nop,
}

impl Opcode {
    pub const ALL: [Opcode; 17] = [
        Opcode::Movi,
        Opcode::Ld,
        Opcode::St,
        Opcode::Add,
        Opcode::Shl,
        Opcode::And,
        Opcode::Cmp,
        Opcode::Bge,
        Opcode::Call,
        Opcode::Ret,
        Opcode::Flush,
        Opcode::Rdcyc,
        Opcode::Mrs,
        Opcode::Yield,
        Opcode::Fence,
        Opcode::Halt,
        Opcode::Nop,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Movi => "MOVI",
            Opcode::Ld => "LD",
            Opcode::St => "ST",
            Opcode::Add => "ADD",
            Opcode::Shl => "SHL",
            Opcode::And => "AND",
            Opcode::Cmp => "CMP",
            Opcode::Bge => "BGE",
            Opcode::Call => "CALL",
            Opcode::Ret => "RET",
            Opcode::Flush => "FLUSH",
            Opcode::Rdcyc => "RDCYC",
            Opcode::Mrs => "MRS",
            Opcode::Yield => "YIELD",
            Opcode::Fence => "FENCE",
            Opcode::Halt => "HALT",
            Opcode::Nop => "NOP",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        Opcode::ALL
            .into_iter()
            .find(|op| op.mnemonic().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

/// One instruction of the toy ISA. Code targets are instruction indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Instruction {
    Movi {
        rd: Reg,
        value: Constant,
    },
    Ld {
        rd: Reg,
        addr: MemOperand,
    },
    /// Stores `rs` to memory.
    St {
        rs: Reg,
        addr: MemOperand,
    },
    Add {
        rd: Reg,
        ra: Reg,
        rb: Operand,
    },
    Shl {
        rd: Reg,
        ra: Reg,
        rb: Operand,
    },
    And {
        rd: Reg,
        ra: Reg,
        rb: Operand,
    },
    Cmp {
        ra: Reg,
        rb: Operand,
    },
    /// Taken when the last `CMP` found `ra >= rb` (signed).
    Bge {
        target: usize,
    },
    Call {
        target: usize,
    },
    Ret,
    Flush {
        addr: MemOperand,
    },
    Rdcyc {
        rd: Reg,
    },
    Mrs {
        rd: Reg,
        sysreg: SysReg,
    },
    Yield,
    Fence,
    Halt,
    Nop,
}

impl Instruction {
    pub fn opcode(&self) -> Opcode {
        match self {
            Instruction::Movi { .. } => Opcode::Movi,
            Instruction::Ld { .. } => Opcode::Ld,
            Instruction::St { .. } => Opcode::St,
            Instruction::Add { .. } => Opcode::Add,
            Instruction::Shl { .. } => Opcode::Shl,
            Instruction::And { .. } => Opcode::And,
            Instruction::Cmp { .. } => Opcode::Cmp,
            Instruction::Bge { .. } => Opcode::Bge,
            Instruction::Call { .. } => Opcode::Call,
            Instruction::Ret => Opcode::Ret,
            Instruction::Flush { .. } => Opcode::Flush,
            Instruction::Rdcyc { .. } => Opcode::Rdcyc,
            Instruction::Mrs { .. } => Opcode::Mrs,
            Instruction::Yield => Opcode::Yield,
            Instruction::Fence => Opcode::Fence,
            Instruction::Halt => Opcode::Halt,
            Instruction::Nop => Opcode::Nop,
        }
    }

    /// Code addresses this instruction names statically.
    pub fn code_refs(&self) -> Option<usize> {
        match *self {
            Instruction::Bge { target } | Instruction::Call { target } => Some(target),
            Instruction::Movi {
                value: Constant::Code(target),
                ..
            } => Some(target),
            _ => None,
        }
    }
}
