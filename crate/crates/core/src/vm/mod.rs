//! The encrypted machine. Registers and memory hold ciphertext only; memory is
//! reached through a TLB keyed on full address blocks, so two aliases of one
//! plaintext address are two different cells.

pub mod tlb;
pub mod trace;

use thiserror::Error;

use crate::cipher::{Cipher, Ciphertext};
use crate::isa::semantics::{self, Violation, Written};
use crate::isa::{Instr, Opcode, Program, Reg};

pub use tlb::{CapacityFault, Tlb};
pub use trace::{
    Effect, Header, InputLoc, Inputs, Location, Status, StructKey, Trace, TraceEvent, TracePoint,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VmError {
    #[error("pc {pc}: no input for {loc:?}")]
    MissingInput { pc: usize, loc: InputLoc },
    #[error("pc {pc}: {violation}")]
    Violation { pc: usize, violation: Violation },
    #[error("pc {pc} outside program of length {len}")]
    PcOutOfRange { pc: u64, len: usize },
    #[error("pc {pc}: {fault}")]
    Capacity { pc: usize, fault: CapacityFault },
    #[error("no return sentinel in ra")]
    NoSentinel,
}

#[derive(Debug, Clone)]
pub struct VmConfig {
    pub fuel: u64,
    pub strict: bool,
    pub mem_capacity: usize,
}

impl Default for VmConfig {
    fn default() -> VmConfig {
        VmConfig {
            fuel: 10_000_000,
            strict: false,
            mem_capacity: tlb::DEFAULT_CAPACITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineState {
    pub regs: [Option<Ciphertext>; 32],
    pub pc: usize,
    pub fuel: u64,
    pub halted: bool,
}

impl MachineState {
    pub fn reg(&self, r: Reg) -> Option<Ciphertext> {
        self.regs[r.index()]
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Cell {
    value: Option<Ciphertext>,
    touched: bool,
}

/// Outcome of a run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Trace,
    pub state: MachineState,
    pub tlb: Tlb,
    pub steps: u64,
    /// Final contents of each physical slot.
    pub mem: Vec<Option<Ciphertext>>,
}

impl RunOutput {
    /// Final value stored under an address block, if that block is mapped.
    pub fn read_mem(&self, addr: Ciphertext) -> Option<Ciphertext> {
        self.mem.get(self.tlb.lookup(addr)?).copied().flatten()
    }
}

struct Machine<'a> {
    cipher: &'a Cipher,
    program: &'a Program,
    config: &'a VmConfig,
    state: MachineState,
    touched: [bool; 32],
    defaults: Inputs,
    sentinel: Ciphertext,
    tlb: Tlb,
    mem: Vec<Cell>,
    trace: Trace,
}

impl Machine<'_> {
    fn garbage(&self, parts: &[u64]) -> Ciphertext {
        let mut ctx = vec![self.state.pc as u64, self.trace.events.len() as u64];
        ctx.extend_from_slice(parts);
        self.cipher.garbage(&ctx)
    }

    fn read_reg(&mut self, r: Reg) -> Result<Ciphertext, VmError> {
        let i = r.index();
        if !self.touched[i] {
            self.touched[i] = true;
            let loc = InputLoc::Reg(r);
            let v = match self.defaults.regs.get(&r) {
                Some(&v) => v,
                None if self.config.strict => {
                    return Err(VmError::MissingInput {
                        pc: self.state.pc,
                        loc,
                    })
                }
                None => self.garbage(&[0x7e9, i as u64]),
            };
            self.state.regs[i] = Some(v);
            self.trace.inputs.push((loc, v));
        }
        Ok(self.state.regs[i].expect("touched registers hold a value"))
    }

    fn write_reg(&mut self, r: Reg, v: Ciphertext) {
        self.touched[r.index()] = true;
        self.state.regs[r.index()] = Some(v);
    }

    fn translate(&mut self, addr: Ciphertext) -> Result<usize, VmError> {
        let (slot, _) = self.tlb.translate(addr).map_err(|fault| VmError::Capacity {
            pc: self.state.pc,
            fault,
        })?;
        if slot >= self.mem.len() {
            self.mem.resize(slot + 1, Cell::default());
        }
        Ok(slot)
    }

    fn load(&mut self, addr: Ciphertext) -> Result<(usize, Ciphertext), VmError> {
        let slot = self.translate(addr)?;
        let cell = self.mem[slot];
        if cell.touched {
            return Ok((slot, cell.value.expect("touched cells hold a value")));
        }
        let loc = InputLoc::Mem(addr);
        let v = match cell.value {
            Some(v) => v,
            None if self.config.strict => {
                return Err(VmError::MissingInput {
                    pc: self.state.pc,
                    loc,
                })
            }
            None => self.garbage(&[0x3e3, addr.0]),
        };
        self.mem[slot] = Cell {
            value: Some(v),
            touched: true,
        };
        self.trace.inputs.push((loc, v));
        Ok((slot, v))
    }

    fn store(&mut self, addr: Ciphertext, v: Ciphertext) -> Result<usize, VmError> {
        let slot = self.translate(addr)?;
        self.mem[slot] = Cell {
            value: Some(v),
            touched: true,
        };
        Ok(slot)
    }

    /// Strict mode turns a violation into an error; otherwise the caller
    /// substitutes garbage.
    fn soft<T>(&self, r: Result<T, Violation>) -> Result<Option<T>, VmError> {
        match r {
            Ok(v) => Ok(Some(v)),
            Err(violation) if self.config.strict => Err(VmError::Violation {
                pc: self.state.pc,
                violation,
            }),
            Err(_) => Ok(None),
        }
    }

    fn emit(&mut self, opcode: Opcode, effect: Effect) {
        self.trace.events.push(TraceEvent {
            pc: self.state.pc,
            opcode,
            effect,
        });
    }

    fn step(&mut self) -> Result<(), VmError> {
        let pc = self.state.pc;
        let len = self.program.len();
        let ins: &Instr = self.program.instrs.get(pc).ok_or(VmError::PcOutOfRange {
            pc: pc as u64,
            len,
        })?;
        let op = ins.opcode();
        let cipher = self.cipher;
        let mut regs = [None; 32];
        for r in semantics::reads(cipher, ins) {
            regs[r.index()] = Some(self.read_reg(r)?);
        }
        let get = |r: Reg| regs[r.index()].expect("operand was read");
        let mut next = pc + 1;
        match *ins {
            _ if op.is_arith() => {
                let w = self.soft(semantics::compute(cipher, ins, &get))?;
                let w = w.unwrap_or_else(|| match ins.dest() {
                    Some(rd) if ins.writes_pair() => {
                        Written::Pair(rd, self.garbage(&[0]), self.garbage(&[1]))
                    }
                    Some(rd) => Written::One(rd, self.garbage(&[0])),
                    None => unreachable!("arithmetic always writes"),
                });
                match w {
                    Written::One(rd, v) => {
                        self.write_reg(rd, v);
                        self.emit(op, Effect::Reg { reg: rd, value: v });
                    }
                    Written::Pair(rd, hi, lo) => {
                        self.write_reg(rd, hi);
                        self.write_reg(rd.pair_low(), lo);
                        self.emit(op, Effect::Pair { reg: rd, hi, lo });
                    }
                }
            }
            Instr::Mov { rd, rs } => {
                let v = get(rs);
                self.write_reg(rd, v);
                self.emit(op, Effect::Reg { reg: rd, value: v });
            }
            Instr::Branch { disp, .. } | Instr::FBranch { disp, .. } => {
                let t = self.soft(semantics::branch_taken(cipher, ins, &get))?;
                let taken = t.unwrap_or_else(|| self.garbage(&[2]).0 & 1 == 1);
                if taken {
                    next = (pc as i64 + 1 + disp) as usize;
                }
                self.emit(op, Effect::Branch { taken });
            }
            Instr::B { disp } => {
                next = (pc as i64 + 1 + disp) as usize;
                self.emit(op, Effect::Jump);
            }
            Instr::J { target } => {
                next = target;
                self.emit(op, Effect::Jump);
            }
            Instr::Jal { target } => {
                let link = semantics::link_block(cipher, pc);
                self.write_reg(Reg::RA, link);
                next = target;
                self.emit(
                    op,
                    Effect::Reg {
                        reg: Reg::RA,
                        value: link,
                    },
                );
            }
            Instr::Jr { rs } => {
                let v = get(rs);
                self.emit(op, Effect::Jump);
                if v == self.sentinel {
                    self.state.halted = true;
                    return Ok(());
                }
                let t = self.soft(semantics::operand(cipher, rs, v))?;
                let t = t.unwrap_or(u64::MAX);
                if t >= len as u64 {
                    return Err(VmError::PcOutOfRange { pc: t, len });
                }
                next = t as usize;
            }
            Instr::Lw { rd, base, .. } => {
                let ea = self.soft(semantics::effective_address(cipher, ins, get(base)))?;
                let addr = ea.unwrap_or_else(|| self.garbage(&[3]));
                let (slot, v) = self.load(addr)?;
                self.write_reg(rd, v);
                self.emit(
                    op,
                    Effect::Load {
                        reg: rd,
                        addr,
                        slot,
                        value: v,
                    },
                );
            }
            Instr::Sw { base, src, .. } => {
                let ea = self.soft(semantics::effective_address(cipher, ins, get(base)))?;
                let addr = ea.unwrap_or_else(|| self.garbage(&[4]));
                let v = get(src);
                let slot = self.store(addr, v)?;
                self.emit(op, Effect::Store { addr, slot, value: v });
            }
            Instr::Mtspr { rs, .. } => {
                let addr = get(rs);
                if let Some(slot) = self.tlb.invalidate(addr) {
                    self.mem[slot] = Cell::default();
                }
                self.emit(op, Effect::Invalidate { addr });
            }
            _ => unreachable!("{op} handled above"),
        }
        self.state.pc = next;
        Ok(())
    }
}

/// Execute from the program entry until `jr` reaches the return sentinel held
/// in `ra`, or fuel runs out.
pub fn run(
    program: &Program,
    inputs: &Inputs,
    cipher: &Cipher,
    config: &VmConfig,
) -> Result<RunOutput, VmError> {
    let sentinel = *inputs.regs.get(&Reg::RA).ok_or(VmError::NoSentinel)?;
    let mut m = Machine {
        cipher,
        program,
        config,
        state: MachineState {
            regs: [None; 32],
            pc: program.entry,
            fuel: config.fuel,
            halted: false,
        },
        touched: [false; 32],
        defaults: inputs.clone(),
        sentinel,
        tlb: Tlb::new(config.mem_capacity),
        mem: Vec::new(),
        trace: Trace {
            events: Vec::new(),
            inputs: Vec::new(),
            status: Status::OutOfFuel,
        },
    };
    m.state.regs[Reg::RA.index()] = Some(sentinel);
    m.touched[Reg::RA.index()] = true;
    for &(addr, v) in &inputs.mem {
        let slot = m.translate(addr)?;
        m.mem[slot].value = Some(v);
    }
    let mut steps = 0;
    while !m.state.halted && m.state.fuel > 0 {
        m.step()?;
        m.state.fuel -= 1;
        steps += 1;
    }
    if m.state.halted {
        m.trace.status = Status::Returned;
    }
    Ok(RunOutput {
        trace: m.trace,
        state: m.state,
        tlb: m.tlb,
        steps,
        mem: m.mem.iter().map(|c| c.value).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cipher::{Key, Padding, Width};
    use crate::isa::assemble;

    fn setup() -> Cipher {
        Cipher::standard(&Key::default(), Width::W16)
    }

    fn data(c: &Cipher, v: u64, n: u64) -> Ciphertext {
        c.encrypt(v, Padding::data(n)).unwrap()
    }

    fn inputs(c: &Cipher, regs: &[(Reg, u64)]) -> Inputs {
        let mut i = Inputs::default();
        i.regs.insert(Reg::RA, data(c, 0xffff, 999));
        for (n, &(r, v)) in regs.iter().enumerate() {
            i.regs.insert(r, data(c, v, n as u64 + 1));
        }
        i
    }

    #[test]
    fn empty_program_returns_immediately() {
        let c = setup();
        let p = assemble("jr ra", Some(&c)).unwrap();
        let inp = inputs(&c, &[(Reg::A0, 3)]);
        let out = run(&p, &inp, &c, &VmConfig::default()).unwrap();
        assert_eq!(out.trace.status, Status::Returned);
        assert_eq!(out.steps, 1);
        assert!(out.trace.inputs.is_empty());
    }

    #[test]
    fn add_then_return() {
        let c = setup();
        let p = assemble("add v0 a0 a1 #2\njr ra", Some(&c)).unwrap();
        let inp = inputs(&c, &[(Reg::A0, 5), (Reg::arg(1), 7)]);
        let out = run(&p, &inp, &c, &VmConfig::default()).unwrap();
        assert_eq!(c.value(out.state.reg(Reg::V0).unwrap()), 14);
        assert_eq!(out.trace.inputs.len(), 2);
    }

    #[test]
    fn store_then_load_same_alias() {
        let c = setup();
        let src = "
            sw #4|11(sp) a0
            lw v0 #4|11(sp)
            lw v1 #4|12(sp)
            jr ra";
        let p = assemble(src, Some(&c)).unwrap();
        let inp = inputs(&c, &[(Reg::A0, 42), (Reg::SP, 1000)]);
        let out = run(&p, &inp, &c, &VmConfig::default()).unwrap();
        assert_eq!(out.state.reg(Reg::V0), inp.regs.get(&Reg::A0).copied());
        // A different nonce is a different alias and so a different cell.
        match out.trace.events[2].effect {
            Effect::Load { slot, .. } => assert_eq!(slot, 1),
            e => panic!("{e:?}"),
        }
        let strict = VmConfig {
            strict: true,
            ..VmConfig::default()
        };
        assert!(matches!(
            run(&p, &inp, &c, &strict),
            Err(VmError::MissingInput { pc: 2, .. })
        ));
    }

    #[test]
    fn release_invalidates_the_load_alias() {
        let c = setup();
        let src = "
            sw #4|11(sp) a0
            addi k1 sp #4|11
            mtspr UDTLBEIR k1
            lw v0 #4|11(sp)
            jr ra";
        let p = assemble(src, Some(&c)).unwrap();
        let inp = inputs(&c, &[(Reg::A0, 42), (Reg::SP, 1000)]);
        let strict = VmConfig {
            strict: true,
            ..VmConfig::default()
        };
        assert!(matches!(
            run(&p, &inp, &c, &strict),
            Err(VmError::MissingInput { pc: 3, .. })
        ));
        let out = run(&p, &inp, &c, &VmConfig::default()).unwrap();
        assert_eq!(out.tlb.occupancy(), 1);
        match out.trace.events[3].effect {
            Effect::Load { slot, .. } => assert_eq!(slot, 1),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn fuel_bounds_steps() {
        let c = setup();
        let p = assemble("loop: b loop", Some(&c)).unwrap();
        let cfg = VmConfig {
            fuel: 17,
            ..VmConfig::default()
        };
        let out = run(&p, &inputs(&c, &[]), &c, &cfg).unwrap();
        assert_eq!(out.steps, 17);
        assert_eq!(out.trace.status, Status::OutOfFuel);
        assert_eq!(out.trace.events.len(), 17);
    }

    #[test]
    fn strict_mode_reports_violations() {
        let c = setup();
        // An add constant in an addi slot: the raw block carries the wrong tag.
        let k = c
            .encrypt(
                1,
                Padding {
                    tag: Opcode::Add.const_tag(0),
                    nonce: 5,
                },
            )
            .unwrap();
        let src = format!("addi v0 a0 ${:x}\njr ra", k.0);
        let p = assemble(&src, None).unwrap();
        let inp = inputs(&c, &[(Reg::A0, 1)]);
        let strict = VmConfig {
            strict: true,
            ..VmConfig::default()
        };
        assert!(matches!(
            run(&p, &inp, &c, &strict),
            Err(VmError::Violation { pc: 0, .. })
        ));
        let out = run(&p, &inp, &c, &VmConfig::default()).unwrap();
        assert!(c.tag(out.state.reg(Reg::V0).unwrap()).is_data());
    }

    #[test]
    fn call_and_return() {
        let c = setup();
        let src = "
            mov s0 ra
            jal f
            mov ra s0
            jr ra
        f:  addi v0 a0 #1
            jr ra";
        let p = assemble(src, Some(&c)).unwrap();
        let out = run(&p, &inputs(&c, &[(Reg::A0, 9)]), &c, &VmConfig::default()).unwrap();
        assert_eq!(c.value(out.state.reg(Reg::V0).unwrap()), 10);
        assert_eq!(out.trace.status, Status::Returned);
    }

    #[test]
    fn missing_sentinel_is_an_error() {
        let c = setup();
        let p = assemble("jr ra", Some(&c)).unwrap();
        assert_eq!(
            run(&p, &Inputs::default(), &c, &VmConfig::default()).unwrap_err(),
            VmError::NoSentinel
        );
    }
}
