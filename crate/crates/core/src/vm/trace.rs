//! Trace events, input maps and their line-oriented file formats.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::cipher::{Ciphertext, Width};
use crate::isa::{Opcode, Reg};

pub const TRACE_MAGIC: &str = "chaotic-trace";
pub const INPUTS_MAGIC: &str = "chaotic-inputs";
pub const FORMAT_VERSION: u32 = 1;

/// What one executed instruction did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Effect {
    Reg { reg: Reg, value: Ciphertext },
    Pair { reg: Reg, hi: Ciphertext, lo: Ciphertext },
    Store { addr: Ciphertext, slot: usize, value: Ciphertext },
    Load { reg: Reg, addr: Ciphertext, slot: usize, value: Ciphertext },
    Branch { taken: bool },
    Jump,
    Invalidate { addr: Ciphertext },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TraceEvent {
    pub pc: usize,
    pub opcode: Opcode,
    pub effect: Effect,
}

/// An observed storage location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Location {
    Reg(Reg),
    Mem(usize),
}

/// One observed word: the event that wrote it and where.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TracePoint {
    pub event: usize,
    pub loc: Location,
}

/// Where an input word lives before the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InputLoc {
    Reg(Reg),
    Mem(Ciphertext),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Returned,
    OutOfFuel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
    /// Locations read before written, in first-read order.
    pub inputs: Vec<(InputLoc, Ciphertext)>,
    pub status: Status,
}

/// Event identity as seen by an observer who cannot decrypt: diddle partners
/// are indistinguishable, ciphertexts are dropped.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StructKey {
    pub pc: usize,
    pub class: Opcode,
    pub loc: Option<Location>,
    pub taken: Option<bool>,
}

impl TraceEvent {
    /// Data words this event wrote.
    pub fn observations(&self) -> Vec<(Location, Ciphertext)> {
        match self.effect {
            Effect::Reg { reg, value } => vec![(Location::Reg(reg), value)],
            Effect::Pair { reg, hi, lo } => vec![
                (Location::Reg(reg), hi),
                (Location::Reg(reg.pair_low()), lo),
            ],
            Effect::Store { slot, value, .. } => vec![(Location::Mem(slot), value)],
            Effect::Load { reg, value, .. } => vec![(Location::Reg(reg), value)],
            Effect::Branch { .. } | Effect::Jump | Effect::Invalidate { .. } => vec![],
        }
    }

    pub fn struct_key(&self) -> StructKey {
        let loc = match self.effect {
            Effect::Reg { reg, .. } | Effect::Pair { reg, .. } | Effect::Load { reg, .. } => {
                Some(Location::Reg(reg))
            }
            Effect::Store { slot, .. } => Some(Location::Mem(slot)),
            _ => None,
        };
        let taken = match self.effect {
            Effect::Branch { taken } => Some(taken),
            _ => None,
        };
        StructKey {
            pc: self.pc,
            class: self.opcode.class(),
            loc,
            taken,
        }
    }

    /// Every ciphertext block the event exposes, addresses included.
    pub fn blocks(&self) -> Vec<Ciphertext> {
        match self.effect {
            Effect::Reg { value, .. } => vec![value],
            Effect::Pair { hi, lo, .. } => vec![hi, lo],
            Effect::Store { addr, value, .. } | Effect::Load { addr, value, .. } => {
                vec![addr, value]
            }
            Effect::Invalidate { addr } => vec![addr],
            Effect::Branch { .. } | Effect::Jump => vec![],
        }
    }
}

impl Trace {
    pub fn points(&self) -> Vec<(TracePoint, Ciphertext)> {
        self.events
            .iter()
            .enumerate()
            .flat_map(|(i, e)| {
                e.observations()
                    .into_iter()
                    .map(move |(loc, c)| (TracePoint { event: i, loc }, c))
            })
            .collect()
    }

    pub fn value_at(&self, p: TracePoint) -> Option<Ciphertext> {
        self.events
            .get(p.event)?
            .observations()
            .into_iter()
            .find(|(l, _)| *l == p.loc)
            .map(|(_, c)| c)
    }

    pub fn structure(&self) -> Vec<StructKey> {
        self.events.iter().map(TraceEvent::struct_key).collect()
    }

    /// Indices where two traces differ structurally.
    pub fn structural_diff(&self, other: &Trace) -> Vec<usize> {
        let mut d: Vec<usize> = self
            .events
            .iter()
            .zip(&other.events)
            .enumerate()
            .filter(|(_, (a, b))| a.struct_key() != b.struct_key())
            .map(|(i, _)| i)
            .collect();
        if self.events.len() != other.events.len() {
            d.push(self.events.len().min(other.events.len()));
        }
        d
    }

    /// Indices where the exposed ciphertexts differ.
    pub fn ciphertext_diff(&self, other: &Trace) -> Vec<usize> {
        self.events
            .iter()
            .zip(&other.events)
            .enumerate()
            .filter(|(_, (a, b))| a.blocks() != b.blocks())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn branch_outcomes(&self) -> Vec<bool> {
        self.events
            .iter()
            .filter_map(|e| match e.effect {
                Effect::Branch { taken } => Some(taken),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("bad header: {0}")]
    Header(String),
}

fn line_err(line: usize, msg: impl Into<String>) -> FormatError {
    FormatError::Line {
        line,
        msg: msg.into(),
    }
}

fn hex_block(s: &str, line: usize) -> Result<Ciphertext, FormatError> {
    u64::from_str_radix(s, 16)
        .map(Ciphertext)
        .map_err(|_| line_err(line, format!("bad block `{s}`")))
}

fn reg(s: &str, line: usize) -> Result<Reg, FormatError> {
    s.parse().map_err(|_| line_err(line, format!("bad register `{s}`")))
}

/// Header fields shared by trace and input files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub width: Width,
    pub fingerprint: String,
}

fn write_header(out: &mut String, magic: &str, h: &Header, extra: &str) {
    let _ = writeln!(
        out,
        "{magic} {FORMAT_VERSION} w={} fingerprint={}{extra}",
        h.width.bits(),
        h.fingerprint
    );
}

fn parse_header<'a>(
    text: &'a str,
    magic: &str,
) -> Result<(Header, BTreeMap<String, String>, &'a str), FormatError> {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let mut it = first.split_whitespace();
    if it.next() != Some(magic) {
        return Err(FormatError::Header(format!("expected `{magic}`")));
    }
    if it.next() != Some(&FORMAT_VERSION.to_string()) {
        return Err(FormatError::Header("unsupported version".into()));
    }
    let fields: BTreeMap<String, String> = it
        .filter_map(|f| f.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let bits: u32 = fields
        .get("w")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| FormatError::Header("missing width".into()))?;
    let width = Width::new(bits).map_err(|e| FormatError::Header(e.to_string()))?;
    let fingerprint = fields
        .get("fingerprint")
        .cloned()
        .ok_or_else(|| FormatError::Header("missing fingerprint".into()))?;
    Ok((Header { width, fingerprint }, fields, rest))
}

fn input_line(loc: InputLoc, c: Ciphertext) -> String {
    match loc {
        InputLoc::Reg(r) => format!("{r} {:x}", c.0),
        InputLoc::Mem(a) => format!("mem:{:x} {:x}", a.0, c.0),
    }
}

fn parse_input_line(s: &str, line: usize) -> Result<(InputLoc, Ciphertext), FormatError> {
    let (l, v) = s
        .split_once(' ')
        .ok_or_else(|| line_err(line, "expected `loc block`"))?;
    let loc = match l.strip_prefix("mem:") {
        Some(a) => InputLoc::Mem(hex_block(a, line)?),
        None => InputLoc::Reg(reg(l, line)?),
    };
    Ok((loc, hex_block(v.trim(), line)?))
}

pub fn write_trace(t: &Trace, h: &Header) -> String {
    let mut out = String::new();
    let status = match t.status {
        Status::Returned => "returned",
        Status::OutOfFuel => "out-of-fuel",
    };
    write_header(&mut out, TRACE_MAGIC, h, &format!(" status={status}"));
    for (loc, c) in &t.inputs {
        let _ = writeln!(out, "in {}", input_line(*loc, *c));
    }
    for e in &t.events {
        let body = match e.effect {
            Effect::Reg { reg, value } => format!("{reg} {:x}", value.0),
            Effect::Pair { reg, hi, lo } => format!("{reg}:{} {:x} {:x}", reg.pair_low(), hi.0, lo.0),
            Effect::Store { addr, slot, value } => format!("@{slot} {:x} addr={:x}", value.0, addr.0),
            Effect::Load {
                reg,
                addr,
                slot,
                value,
            } => format!("{reg} {:x} addr={:x}@{slot}", value.0, addr.0),
            Effect::Branch { taken } => {
                format!("- {}", if taken { "taken" } else { "not-taken" })
            }
            Effect::Jump => "- -".to_string(),
            Effect::Invalidate { addr } => format!("tlb {:x}", addr.0),
        };
        let _ = writeln!(out, "{} {} {body}", e.pc, e.opcode);
    }
    out
}

pub fn parse_trace(text: &str) -> Result<(Header, Trace), FormatError> {
    let (h, fields, rest) = parse_header(text, TRACE_MAGIC)?;
    let status = match fields.get("status").map(String::as_str) {
        Some("returned") => Status::Returned,
        Some("out-of-fuel") => Status::OutOfFuel,
        _ => return Err(FormatError::Header("missing status".into())),
    };
    let mut t = Trace {
        events: vec![],
        inputs: vec![],
        status,
    };
    for (i, raw) in rest.lines().enumerate() {
        let line = i + 2;
        let s = raw.trim();
        if s.is_empty() {
            continue;
        }
        if let Some(inp) = s.strip_prefix("in ") {
            t.inputs.push(parse_input_line(inp, line)?);
            continue;
        }
        let f: Vec<&str> = s.split_whitespace().collect();
        if f.len() < 4 {
            return Err(line_err(line, "too few fields"));
        }
        let pc = f[0].parse().map_err(|_| line_err(line, "bad pc"))?;
        let opcode = Opcode::from_mnemonic(f[1]).ok_or_else(|| line_err(line, "bad opcode"))?;
        let effect = match (f[2], f.len()) {
            ("-", 4) if f[3] == "-" => Effect::Jump,
            ("-", 4) => Effect::Branch {
                taken: match f[3] {
                    "taken" => true,
                    "not-taken" => false,
                    _ => return Err(line_err(line, "bad branch outcome")),
                },
            },
            ("tlb", 4) => Effect::Invalidate {
                addr: hex_block(f[3], line)?,
            },
            (loc, 5) if loc.starts_with('@') => {
                let slot = loc[1..].parse().map_err(|_| line_err(line, "bad slot"))?;
                let addr = f[4]
                    .strip_prefix("addr=")
                    .ok_or_else(|| line_err(line, "missing addr"))?;
                Effect::Store {
                    addr: hex_block(addr, line)?,
                    slot,
                    value: hex_block(f[3], line)?,
                }
            }
            (loc, 5) if loc.contains(':') => {
                let (hi, _) = loc.split_once(':').unwrap();
                Effect::Pair {
                    reg: reg(hi, line)?,
                    hi: hex_block(f[3], line)?,
                    lo: hex_block(f[4], line)?,
                }
            }
            (loc, 5) => {
                let a = f[4]
                    .strip_prefix("addr=")
                    .and_then(|a| a.split_once('@'))
                    .ok_or_else(|| line_err(line, "missing addr"))?;
                Effect::Load {
                    reg: reg(loc, line)?,
                    addr: hex_block(a.0, line)?,
                    slot: a.1.parse().map_err(|_| line_err(line, "bad slot"))?,
                    value: hex_block(f[3], line)?,
                }
            }
            (loc, 4) => Effect::Reg {
                reg: reg(loc, line)?,
                value: hex_block(f[3], line)?,
            },
            _ => return Err(line_err(line, "unrecognized event")),
        };
        t.events.push(TraceEvent { pc, opcode, effect });
    }
    Ok((h, t))
}

/// Encrypted inputs handed to the machine. A value for `ra` is the return
/// sentinel rather than an input.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Inputs {
    pub regs: BTreeMap<Reg, Ciphertext>,
    pub mem: Vec<(Ciphertext, Ciphertext)>,
}

pub fn write_inputs(inp: &Inputs, h: &Header) -> String {
    let mut out = String::new();
    write_header(&mut out, INPUTS_MAGIC, h, "");
    for (r, c) in &inp.regs {
        let _ = writeln!(out, "{}", input_line(InputLoc::Reg(*r), *c));
    }
    for (a, c) in &inp.mem {
        let _ = writeln!(out, "{}", input_line(InputLoc::Mem(*a), *c));
    }
    out
}

pub fn parse_inputs(text: &str) -> Result<(Header, Inputs), FormatError> {
    let (h, _, rest) = parse_header(text, INPUTS_MAGIC)?;
    let mut inp = Inputs::default();
    for (i, raw) in rest.lines().enumerate() {
        let s = raw.trim();
        if s.is_empty() {
            continue;
        }
        match parse_input_line(s, i + 2)? {
            (InputLoc::Reg(r), c) => {
                inp.regs.insert(r, c);
            }
            (InputLoc::Mem(a), c) => inp.mem.push((a, c)),
        }
    }
    Ok((h, inp))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trace {
        let c = Ciphertext;
        Trace {
            events: vec![
                TraceEvent {
                    pc: 0,
                    opcode: Opcode::Add,
                    effect: Effect::Reg {
                        reg: Reg::T0,
                        value: c(0xabc),
                    },
                },
                TraceEvent {
                    pc: 1,
                    opcode: Opcode::Addl,
                    effect: Effect::Pair {
                        reg: Reg::T0,
                        hi: c(1),
                        lo: c(2),
                    },
                },
                TraceEvent {
                    pc: 2,
                    opcode: Opcode::Sw,
                    effect: Effect::Store {
                        addr: c(0xfeed),
                        slot: 3,
                        value: c(9),
                    },
                },
                TraceEvent {
                    pc: 3,
                    opcode: Opcode::Lw,
                    effect: Effect::Load {
                        reg: Reg::V0,
                        addr: c(0xfeed),
                        slot: 3,
                        value: c(9),
                    },
                },
                TraceEvent {
                    pc: 4,
                    opcode: Opcode::Bne,
                    effect: Effect::Branch { taken: true },
                },
                TraceEvent {
                    pc: 5,
                    opcode: Opcode::Mtspr,
                    effect: Effect::Invalidate { addr: c(0xfeed) },
                },
                TraceEvent {
                    pc: 6,
                    opcode: Opcode::Jr,
                    effect: Effect::Jump,
                },
            ],
            inputs: vec![
                (InputLoc::Reg(Reg::A0), c(0x55)),
                (InputLoc::Mem(c(0x99)), c(0x66)),
            ],
            status: Status::Returned,
        }
    }

    fn header() -> Header {
        Header {
            width: Width::W16,
            fingerprint: "00ff".into(),
        }
    }

    #[test]
    fn trace_file_roundtrip() {
        let t = sample();
        let (h, back) = parse_trace(&write_trace(&t, &header())).unwrap();
        assert_eq!(h, header());
        assert_eq!(back, t);
    }

    #[test]
    fn inputs_file_roundtrip() {
        let mut inp = Inputs::default();
        inp.regs.insert(Reg::A0, Ciphertext(0x1234));
        inp.regs.insert(Reg::RA, Ciphertext(0x42));
        inp.mem.push((Ciphertext(7), Ciphertext(8)));
        let (_, back) = parse_inputs(&write_inputs(&inp, &header())).unwrap();
        assert_eq!(back, inp);
    }

    #[test]
    fn diddle_partners_are_structurally_equal() {
        let t = sample();
        let mut u = t.clone();
        u.events[4].opcode = Opcode::Beq;
        u.events[0].effect = Effect::Reg {
            reg: Reg::T0,
            value: Ciphertext(0xdef),
        };
        assert!(t.structural_diff(&u).is_empty());
        assert_eq!(t.ciphertext_diff(&u), vec![0]);
    }

    #[test]
    fn points_cover_pairs_and_memory() {
        let locs: Vec<Location> = sample().points().into_iter().map(|(p, _)| p.loc).collect();
        assert_eq!(
            locs,
            vec![
                Location::Reg(Reg::T0),
                Location::Reg(Reg::T0),
                Location::Reg(Reg::T0.pair_low()),
                Location::Mem(3),
                Location::Reg(Reg::V0),
            ]
        );
    }
}
