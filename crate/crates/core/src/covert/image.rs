use std::collections::BTreeMap;

use crate::isa::{Instruction, MemOperand, Operand, Program, Reg};

/// Index of the first injection gadget.
pub const GADGET_BASE: usize = 8;
/// Instructions per gadget slot.
pub const GADGET_STRIDE: usize = 8;
/// Offset of the landing pad (the return address the gadget pushes).
const PAD: usize = 5;
const RECEIVER_ENTRY: usize = 0;

fn r(i: u8) -> Reg {
    Reg::new(i).expect("register index")
}

fn pad(symbol: usize) -> Instruction {
    Instruction::Ld {
        rd: r(4),
        addr: MemOperand {
            base: r(3),
            offset: symbol as i64 * 64,
        },
    }
}

/// Code of both channel ends. Gadget `k`'s landing pad sits at the same
/// index in both programs unless the receiver was built shifted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelImage {
    pub sender: Program,
    pub receiver: Program,
    pub receiver_entry: usize,
    symbols: usize,
}

impl ChannelImage {
    pub fn build(bits: u32, receiver_shift: usize) -> ChannelImage {
        let symbols = 1usize << bits;
        let len = GADGET_BASE + symbols * GADGET_STRIDE + receiver_shift + 2;
        let mut sender = vec![Instruction::Halt; len];
        let mut receiver = vec![Instruction::Halt; len];
        let mut sl = BTreeMap::new();
        let mut rl = BTreeMap::new();

        // r1 counts the remaining calls; each call pushes g + PAD.
        for k in 0..symbols {
            let g = GADGET_BASE + k * GADGET_STRIDE;
            sender[g] = Instruction::Add {
                rd: r(1),
                ra: r(1),
                rb: Operand::Imm(-1),
            };
            sender[g + 1] = Instruction::Cmp {
                ra: r(1),
                rb: Operand::Imm(0),
            };
            sender[g + 2] = Instruction::Bge { target: g + 4 };
            sender[g + 3] = Instruction::Yield;
            sender[g + 4] = Instruction::Call { target: g };
            sender[g + PAD] = pad(k);
            sl.insert(format!("inject{k}"), g);
            receiver[g + PAD + receiver_shift] = pad(k);
            rl.insert(format!("land{k}"), g + PAD + receiver_shift);
        }

        // Call one level deep, yield, return through the stack.
        receiver[RECEIVER_ENTRY] = Instruction::Call {
            target: RECEIVER_ENTRY + 2,
        };
        receiver[RECEIVER_ENTRY + 2] = Instruction::Yield;
        receiver[RECEIVER_ENTRY + 3] = Instruction::Ret;
        rl.insert("entry".into(), RECEIVER_ENTRY);
        rl.insert("wait".into(), RECEIVER_ENTRY + 2);

        ChannelImage {
            sender: Program {
                instructions: sender,
                labels: sl,
                entry: GADGET_BASE,
            },
            receiver: Program {
                instructions: receiver,
                labels: rl,
                entry: RECEIVER_ENTRY,
            },
            receiver_entry: RECEIVER_ENTRY,
            symbols,
        }
    }

    pub fn gadget_entry(&self, symbol: usize) -> usize {
        assert!(symbol < self.symbols);
        GADGET_BASE + symbol * GADGET_STRIDE
    }

    /// Return address gadget `symbol` leaves in the RSB.
    pub fn landing_pad(&self, symbol: usize) -> usize {
        self.gadget_entry(symbol) + PAD
    }
}

/// An unrelated context: calls once, touches the line in `r3`, yields.
/// Its return address is never a landing pad.
pub(crate) fn interloper() -> Program {
    let instructions = vec![
        Instruction::Call { target: 2 },
        Instruction::Halt,
        Instruction::Ld {
            rd: r(4),
            addr: MemOperand {
                base: r(3),
                offset: 0,
            },
        },
        Instruction::Yield,
    ];
    Program {
        instructions,
        labels: BTreeMap::new(),
        entry: 0,
    }
}
