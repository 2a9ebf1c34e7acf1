//! Test oracles shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transient_sim::isa::{Constant, Instruction, MemOperand, Operand, Program, Reg, NUM_REGS, SP};
use transient_sim::memory::{line_of, Latencies, PageTable, Privilege};
use transient_sim::microarch::{run, CpuProfile, Exit, MachineState, RunError, RunLimits};

/// Architectural state after a run, as both interpreters report it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Final {
    pub regs: [u64; NUM_REGS],
    pub flags: bool,
    pub pc: usize,
    pub memory: BTreeMap<u64, u64>,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Halted,
    Yielded,
    /// Fault with no recovery pc, at this pc.
    Fault(usize),
    InvalidPc(usize),
    OutOfSteps,
}

/// The obvious one-instruction-at-a-time interpreter. No caches, no
/// prediction, no timing.
pub struct Reference<'a> {
    pub regs: [u64; NUM_REGS],
    pub flags: bool,
    pub pc: usize,
    pub memory: BTreeMap<u64, u64>,
    pub pages: &'a PageTable,
    pub privilege: Privilege,
    pub recovery_pc: Option<usize>,
    pub sysregs: BTreeMap<u16, u64>,
}

impl<'a> Reference<'a> {
    pub fn new(pages: &'a PageTable, regs: [u64; NUM_REGS], memory: BTreeMap<u64, u64>) -> Self {
        Reference {
            regs,
            flags: false,
            pc: 0,
            memory,
            pages,
            privilege: Privilege::User,
            recovery_pc: None,
            sysregs: BTreeMap::new(),
        }
    }

    fn reg(&self, r: Reg) -> u64 {
        self.regs[r.index()]
    }

    fn operand(&self, o: Operand) -> u64 {
        match o {
            Operand::Reg(r) => self.reg(r),
            Operand::Imm(i) => i as u64,
        }
    }

    fn addr(&self, m: MemOperand) -> u64 {
        self.reg(m.base).wrapping_add(m.offset as u64)
    }

    fn ok(&self, a: u64) -> bool {
        self.pages.check(a, self.privilege) == Ok(())
    }

    fn read(&self, a: u64) -> u64 {
        self.memory.get(&a).copied().unwrap_or(0)
    }

    pub fn run(mut self, program: &Program, max_steps: usize) -> Final {
        let mut outcome = Outcome::OutOfSteps;
        for _ in 0..max_steps {
            let Some(&instr) = program.get(self.pc) else {
                outcome = Outcome::InvalidPc(self.pc);
                break;
            };
            let mut next = self.pc + 1;
            let mut faulted = false;
            match instr {
                Instruction::Movi { rd, value } => {
                    self.regs[rd.index()] = match value {
                        Constant::Imm(i) => i as u64,
                        Constant::Code(c) => c as u64,
                    }
                }
                Instruction::Add { rd, ra, rb } => {
                    self.regs[rd.index()] = self.reg(ra).wrapping_add(self.operand(rb))
                }
                Instruction::Shl { rd, ra, rb } => {
                    self.regs[rd.index()] = self.reg(ra) << (self.operand(rb) % 64)
                }
                Instruction::And { rd, ra, rb } => {
                    self.regs[rd.index()] = self.reg(ra) & self.operand(rb)
                }
                Instruction::Cmp { ra, rb } => {
                    self.flags = (self.reg(ra) as i64) >= (self.operand(rb) as i64)
                }
                Instruction::Bge { target } => {
                    if self.flags {
                        next = target;
                    }
                }
                Instruction::Call { target } => {
                    let slot = self.reg(SP).wrapping_sub(8);
                    if self.ok(slot) {
                        self.memory.insert(slot, (self.pc + 1) as u64);
                        self.regs[SP.index()] = slot;
                        next = target;
                    } else {
                        faulted = true;
                    }
                }
                Instruction::Ret => {
                    let sp = self.reg(SP);
                    if self.ok(sp) {
                        next = self.read(sp) as usize;
                        self.regs[SP.index()] = sp.wrapping_add(8);
                    } else {
                        faulted = true;
                    }
                }
                Instruction::Ld { rd, addr } => {
                    let a = self.addr(addr);
                    if self.ok(a) {
                        self.regs[rd.index()] = self.read(a);
                    } else {
                        faulted = true;
                    }
                }
                Instruction::St { rs, addr } => {
                    let a = self.addr(addr);
                    if self.ok(a) {
                        self.memory.insert(a, self.reg(rs));
                    } else {
                        faulted = true;
                    }
                }
                Instruction::Mrs { rd, sysreg } => {
                    if self.privilege == Privilege::Kernel {
                        self.regs[rd.index()] = self.sysregs.get(&sysreg.0).copied().unwrap_or(0);
                    } else {
                        faulted = true;
                    }
                }
                Instruction::Flush { .. } | Instruction::Rdcyc { .. } => {
                    panic!("the reference interpreter has no caches or counter")
                }
                Instruction::Fence | Instruction::Nop => {}
                Instruction::Halt => {
                    outcome = Outcome::Halted;
                    break;
                }
                Instruction::Yield => {
                    self.pc += 1;
                    outcome = Outcome::Yielded;
                    break;
                }
            }
            if faulted {
                match self.recovery_pc {
                    Some(r) => next = r,
                    None => {
                        outcome = Outcome::Fault(self.pc);
                        break;
                    }
                }
            }
            self.pc = next;
        }
        Final {
            regs: self.regs,
            flags: self.flags,
            pc: self.pc,
            memory: self.memory,
            outcome,
        }
    }
}

/// Base of the scratch data the random programs load from and store to.
pub const DATA: u64 = 0x4000;
/// A page left unmapped; loads through `r12` fault when faults are allowed.
pub const UNMAPPED: u64 = 0x90_0000;
/// Offset from [`DATA`] of the pointer cells random stores never touch.
const POINTERS: u64 = 0x3000;
const DATA_REG: u8 = 14;
const FAULT_REG: u8 = 12;
const LOOP_REG: u8 = 13;

fn reg(i: u8) -> Reg {
    Reg::new(i).unwrap()
}

/// Registers random code may write: everything but the data, fault, loop
/// and stack pointers.
fn scratch(rng: &mut ChaCha8Rng) -> Reg {
    reg(rng.gen_range(0..12))
}

fn any_reg(rng: &mut ChaCha8Rng) -> Reg {
    reg(rng.gen_range(0..16))
}

fn operand(rng: &mut ChaCha8Rng) -> Operand {
    if rng.gen_bool(0.5) {
        Operand::Reg(any_reg(rng))
    } else {
        Operand::Imm(rng.gen_range(-64..=64))
    }
}

fn data_slot(rng: &mut ChaCha8Rng) -> MemOperand {
    // Spread over a few lines and sets so caches both hit and miss.
    let cell = rng.gen_range(0..24) * 8 + rng.gen_range(0..3) * 0x1000;
    MemOperand {
        base: reg(DATA_REG),
        offset: cell as i64,
    }
}

/// One straight-line instruction: no control flow, stack or privileged ops.
fn simple(rng: &mut ChaCha8Rng, allow_fault: bool) -> Instruction {
    match rng.gen_range(0..100) {
        0..=11 => Instruction::Movi {
            rd: scratch(rng),
            value: Constant::Imm(rng.gen_range(-1000..1000)),
        },
        12..=29 => Instruction::Add {
            rd: scratch(rng),
            ra: any_reg(rng),
            rb: operand(rng),
        },
        30..=36 => Instruction::Shl {
            rd: scratch(rng),
            ra: any_reg(rng),
            rb: operand(rng),
        },
        37..=43 => Instruction::And {
            rd: scratch(rng),
            ra: any_reg(rng),
            rb: operand(rng),
        },
        44..=53 => Instruction::Cmp {
            ra: any_reg(rng),
            rb: operand(rng),
        },
        54..=71 => Instruction::Ld {
            rd: scratch(rng),
            addr: data_slot(rng),
        },
        72..=74 => Instruction::Ld {
            // Through a computed pointer: anywhere mapped, usually unwritten.
            rd: scratch(rng),
            addr: MemOperand {
                base: scratch(rng),
                offset: 0,
            },
        },
        75..=89 => Instruction::St {
            rs: any_reg(rng),
            addr: data_slot(rng),
        },
        90..=91 if allow_fault => Instruction::Ld {
            rd: scratch(rng),
            addr: MemOperand {
                base: reg(FAULT_REG),
                offset: 0,
            },
        },
        92..=93 => Instruction::Fence,
        _ => Instruction::Nop,
    }
}

/// A random terminating program: straight-line code, forward branches,
/// counted loops, and calls into leaf functions placed after the `HALT`.
/// The last instruction is `recover: HALT`, where faults resume.
pub struct Generated {
    pub program: Program,
    pub regs: [u64; NUM_REGS],
    pub memory: BTreeMap<u64, u64>,
    pub recovery_pc: usize,
}

pub fn random_program(seed: u64, allow_fault: bool) -> Generated {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_funcs = rng.gen_range(0..4usize);
    let mut main: Vec<Instruction> = Vec::new();
    // Forward branches and calls are patched once the layout is known.
    let mut fwd: Vec<(usize, usize)> = Vec::new();
    let mut calls: Vec<(usize, usize)> = Vec::new();
    let blocks = rng.gen_range(1..12);
    for _ in 0..blocks {
        match rng.gen_range(0..10) {
            0..=4 => {
                for _ in 0..rng.gen_range(1..6) {
                    main.push(simple(&mut rng, allow_fault));
                }
            }
            9 if rng.gen_bool(0.5) => {
                // A store whose address comes from memory, then a load that
                // may alias it: the store-to-load bypass case.
                let k = rng.gen_range(0..4i64);
                main.push(Instruction::Ld {
                    rd: reg(11),
                    addr: MemOperand {
                        base: reg(DATA_REG),
                        offset: POINTERS as i64 + k * 8,
                    },
                });
                main.push(Instruction::St {
                    rs: any_reg(&mut rng),
                    addr: MemOperand {
                        base: reg(11),
                        offset: 0,
                    },
                });
                main.push(Instruction::Ld {
                    rd: scratch(&mut rng),
                    addr: MemOperand {
                        base: reg(DATA_REG),
                        offset: 8 * rng.gen_range(0..4),
                    },
                });
            }
            5 | 6 => {
                // CMP; BGE over a few instructions.
                main.push(Instruction::Cmp {
                    ra: any_reg(&mut rng),
                    rb: operand(&mut rng),
                });
                let at = main.len();
                main.push(Instruction::Bge { target: 0 });
                let skip = rng.gen_range(1..5);
                for _ in 0..skip {
                    main.push(simple(&mut rng, allow_fault));
                }
                fwd.push((at, main.len()));
            }
            7 | 8 => {
                // for r13 in n..0 { body }
                main.push(Instruction::Movi {
                    rd: reg(LOOP_REG),
                    value: Constant::Imm(rng.gen_range(1..7)),
                });
                let top = main.len();
                for _ in 0..rng.gen_range(1..5) {
                    main.push(simple(&mut rng, allow_fault));
                }
                main.push(Instruction::Add {
                    rd: reg(LOOP_REG),
                    ra: reg(LOOP_REG),
                    rb: Operand::Imm(-1),
                });
                main.push(Instruction::Cmp {
                    ra: reg(LOOP_REG),
                    rb: Operand::Imm(1),
                });
                main.push(Instruction::Bge { target: top });
            }
            _ if n_funcs > 0 => {
                calls.push((main.len(), rng.gen_range(0..n_funcs)));
                main.push(Instruction::Call { target: 0 });
            }
            _ => main.push(Instruction::Nop),
        }
    }
    main.push(Instruction::Halt);
    for (at, to) in fwd {
        main[at] = Instruction::Bge { target: to };
    }
    // Leaf-ish functions; function k may call functions after it.
    let mut starts = Vec::new();
    let mut inner_calls: Vec<(usize, usize)> = Vec::new();
    for k in 0..n_funcs {
        starts.push(main.len());
        for _ in 0..rng.gen_range(1..6) {
            main.push(simple(&mut rng, allow_fault));
        }
        if k + 1 < n_funcs && rng.gen_bool(0.4) {
            inner_calls.push((main.len(), rng.gen_range(k + 1..n_funcs)));
            main.push(Instruction::Call { target: 0 });
        }
        main.push(Instruction::Ret);
    }
    for (at, f) in calls.into_iter().chain(inner_calls) {
        main[at] = Instruction::Call { target: starts[f] };
    }
    let recovery_pc = main.len();
    main.push(Instruction::Halt);

    let mut labels = BTreeMap::new();
    labels.insert("entry".to_string(), 0);
    labels.insert("recover".to_string(), recovery_pc);
    let program = Program {
        instructions: main,
        labels,
        entry: 0,
    };

    let mut regs = [0u64; NUM_REGS];
    for r in regs.iter_mut().take(12) {
        *r = rng.gen_range(0..64);
    }
    // Copies of r12 reach computed-pointer loads, so fault-free programs
    // point it at mapped data instead.
    regs[FAULT_REG as usize] = if allow_fault { UNMAPPED } else { DATA };
    regs[SP.index()] = transient_sim::microarch::DEFAULT_STACK_TOP;
    regs[DATA_REG as usize] = DATA;
    let mut memory = BTreeMap::new();
    for i in 0..8u64 {
        memory.insert(DATA + i * 8, rng.gen_range(0..1 << 20));
    }
    for k in 0..4u64 {
        memory.insert(DATA + POINTERS + k * 8, DATA + 8 * rng.gen_range(0..4));
    }
    Generated {
        program,
        regs,
        memory,
        recovery_pc,
    }
}

/// Runs `g` on the simulated core, after warming a few random data lines.
pub fn run_model(g: &Generated, profile: &CpuProfile, warm_seed: u64) -> Final {
    let mut st = MachineState::new(profile, 1);
    st.arch.regs = g.regs;
    st.arch.pc = g.program.entry;
    st.arch.recovery_pc = Some(g.recovery_pc);
    for (&a, &v) in &g.memory {
        st.mem.poke(a, v);
    }
    st.mem.page_table.unmap(UNMAPPED);
    // Random warm lines, so the same program meets hits and misses.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(warm_seed);
    for _ in 0..rng.gen_range(0..20) {
        let a = DATA + rng.gen_range(0..3u64) * 0x1000 + rng.gen_range(0..4u64) * 64;
        st.mem.cache.access_line(line_of(a));
    }
    let outcome = match run(&g.program, &mut st, profile, RunLimits::default()) {
        Ok(r) => match r.exit {
            Exit::Halted => Outcome::Halted,
            Exit::Yielded => Outcome::Yielded,
        },
        Err(RunError::Fault { pc, .. }) => Outcome::Fault(pc),
        Err(RunError::InvalidPc { pc, .. }) => Outcome::InvalidPc(pc),
        Err(e) => panic!("{e}"),
    };
    Final {
        regs: st.arch.regs,
        flags: st.arch.flags,
        pc: st.arch.pc,
        memory: st.mem.cells(),
        outcome,
    }
}

/// Runs `g` on [`Reference`].
pub fn run_reference(g: &Generated) -> Final {
    let mut pages = PageTable::default();
    pages.unmap(UNMAPPED);
    let mut r = Reference::new(&pages, g.regs, g.memory.clone());
    r.recovery_pc = Some(g.recovery_pc);
    r.run(&g.program, 100_000)
}

/// Hit/miss classifier accuracy under counter noise, computed exactly.
/// Each reading carries independent uniform noise in [-a, a], so a timed
/// difference carries the difference of two: triangular on [-2a, 2a].
pub fn analytic_accuracy(l: Latencies, a: u64) -> f64 {
    let threshold = ((l.l1 + l.dram) / 2) as i64;
    let a = a as i64;
    let n = (2 * a + 1) as f64;
    let p = |d: i64| (2 * a + 1 - d.abs()).max(0) as f64 / (n * n);
    let hit_wrong: f64 = (-2 * a..=2 * a)
        .filter(|d| l.l1 as i64 + d >= threshold)
        .map(p)
        .sum();
    let miss_wrong: f64 = (-2 * a..=2 * a)
        .filter(|d| l.dram as i64 + d < threshold)
        .map(p)
        .sum();
    1.0 - 0.5 * (hit_wrong + miss_wrong)
}
