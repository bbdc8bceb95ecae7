//! Toy RISC ISA: scalar integer/FP registers plus 4-lane f32 SIMD, a textual
//! assembly format, and the parser/printer/validator around [`Program`].
//!
//! Grammar (one statement per line, `;` starts a comment):
//!
//! ```text
//! loop:                          ; label (also `.label loop:`)
//!     LD    f0, [r4]             ; scalar load, base register
//!     LD    f1, [r5, #-4]        ; base + immediate offset
//!     LD    f0, [r4], #4         ; post-increment (LD/ST/VLD/VST only)
//!     VFMLA v16, v0, v8.s[0]     ; broadcast lane 0 of v8
//!     SASALD [r31], #12          ; load 12 SASA entries from [r31]
//!     BNE   @3                   ; branch to instruction index 3
//! .data 0x1000: 00 00 80 3f      ; initial memory bytes
//! .sasa tbl @ 0x2000: {pc=3, cond=r0, len=1} {pc=5, cond=r0|r1, len=2}
//! ```
//!
//! The program counter is an instruction index, not a byte address.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::sparce::{encode_entries, Combiner, SasaEntry, SkipCondition, Term, SASA_ENTRY_BYTES};

pub const NUM_REGS: usize = 32;
pub const LANES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RegFile {
    Int,
    Fp,
    Vec,
}

impl RegFile {
    pub fn prefix(self) -> char {
        match self {
            RegFile::Int => 'r',
            RegFile::Fp => 'f',
            RegFile::Vec => 'v',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reg {
    pub file: RegFile,
    pub index: u8,
}

impl Reg {
    pub const fn int(index: u8) -> Self {
        Reg { file: RegFile::Int, index }
    }
    pub const fn fp(index: u8) -> Self {
        Reg { file: RegFile::Fp, index }
    }
    pub const fn vec(index: u8) -> Self {
        Reg { file: RegFile::Vec, index }
    }

    /// Lane mask covering every word of the register.
    pub fn full_mask(self) -> u8 {
        match self.file {
            RegFile::Vec => 0b1111,
            _ => 0b0001,
        }
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.file.prefix(), self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Opcode {
    Ld,
    St,
    Vld,
    Vst,
    Prfm,
    Fmul,
    Fadd,
    Fmla,
    Vfmla,
    Add,
    Sub,
    Subs,
    Mov,
    B,
    Bne,
    Beq,
    SasaLd,
    Halt,
}

impl Opcode {
    pub const ALL: [Opcode; 18] = [
        Opcode::Ld,
        Opcode::St,
        Opcode::Vld,
        Opcode::Vst,
        Opcode::Prfm,
        Opcode::Fmul,
        Opcode::Fadd,
        Opcode::Fmla,
        Opcode::Vfmla,
        Opcode::Add,
        Opcode::Sub,
        Opcode::Subs,
        Opcode::Mov,
        Opcode::B,
        Opcode::Bne,
        Opcode::Beq,
        Opcode::SasaLd,
        Opcode::Halt,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Ld => "LD",
            Opcode::St => "ST",
            Opcode::Vld => "VLD",
            Opcode::Vst => "VST",
            Opcode::Prfm => "PRFM",
            Opcode::Fmul => "FMUL",
            Opcode::Fadd => "FADD",
            Opcode::Fmla => "FMLA",
            Opcode::Vfmla => "VFMLA",
            Opcode::Add => "ADD",
            Opcode::Sub => "SUB",
            Opcode::Subs => "SUBS",
            Opcode::Mov => "MOV",
            Opcode::B => "B",
            Opcode::Bne => "BNE",
            Opcode::Beq => "BEQ",
            Opcode::SasaLd => "SASALD",
            Opcode::Halt => "HALT",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        let upper = s.to_ascii_uppercase();
        if upper == "SASA-LD" {
            return Some(Opcode::SasaLd);
        }
        Opcode::ALL.iter().copied().find(|op| op.mnemonic() == upper)
    }

    pub fn is_branch(self) -> bool {
        matches!(self, Opcode::B | Opcode::Bne | Opcode::Beq)
    }

    pub fn is_load(self) -> bool {
        matches!(self, Opcode::Ld | Opcode::Vld)
    }

    pub fn is_store(self) -> bool {
        matches!(self, Opcode::St | Opcode::Vst)
    }

    /// Opcodes that access the data cache when executed.
    pub fn is_mem(self) -> bool {
        matches!(self, Opcode::Ld | Opcode::Vld | Opcode::St | Opcode::Vst | Opcode::Prfm)
    }

    pub fn allows_post_increment(self) -> bool {
        matches!(self, Opcode::Ld | Opcode::Vld | Opcode::St | Opcode::Vst)
    }

    /// Multiply-accumulate family (the instructions a zero multiplier turns into no-ops).
    pub fn is_mac(self) -> bool {
        matches!(self, Opcode::Fmla | Opcode::Vfmla)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

/// Memory reference `[base, #offset]`, optionally followed by a post-increment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemRef {
    pub base: Reg,
    pub offset: i64,
    pub post_inc: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Index(usize),
    Label(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Reg(Reg),
    /// Lane-selected register, `v8.s[k]`.
    Lane(Reg, u8),
    Imm(i64),
    FImm(f32),
    Mem(MemRef),
    Target(Target),
}

impl Operand {
    fn register(&self) -> Option<Reg> {
        match self {
            Operand::Reg(r) | Operand::Lane(r, _) => Some(*r),
            Operand::Mem(m) => Some(m.base),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instruction {
    pub op: Opcode,
    pub dst: Option<Reg>,
    pub srcs: Vec<Operand>,
}

impl Instruction {
    pub fn new(op: Opcode, dst: Option<Reg>, srcs: Vec<Operand>) -> Self {
        Instruction { op, dst, srcs }
    }

    pub fn mem(&self) -> Option<&MemRef> {
        self.srcs.iter().find_map(|o| match o {
            Operand::Mem(m) => Some(m),
            _ => None,
        })
    }

    pub fn post_increment(&self) -> Option<(Reg, i64)> {
        self.mem().and_then(|m| m.post_inc.map(|inc| (m.base, inc)))
    }

    pub fn target(&self) -> Option<&Target> {
        self.srcs.iter().find_map(|o| match o {
            Operand::Target(t) => Some(t),
            _ => None,
        })
    }

    pub fn target_index(&self) -> Option<usize> {
        match self.target() {
            Some(Target::Index(i)) => Some(*i),
            _ => None,
        }
    }

    /// Registers written when this instruction commits: the destination plus
    /// the base register of a post-incremented memory operand.
    pub fn writes(&self) -> Vec<Reg> {
        let mut out = Vec::with_capacity(2);
        if let Some(d) = self.dst {
            out.push(d);
        }
        if let Some((base, _)) = self.post_increment() {
            if !out.contains(&base) {
                out.push(base);
            }
        }
        out
    }

    /// Registers read, including the implicit accumulator of FMLA/VFMLA.
    pub fn reads(&self) -> Vec<Reg> {
        let mut out: Vec<Reg> = Vec::with_capacity(3);
        for r in self.srcs.iter().filter_map(Operand::register) {
            if !out.contains(&r) {
                out.push(r);
            }
        }
        if self.op.is_mac() {
            if let Some(d) = self.dst {
                if !out.contains(&d) {
                    out.push(d);
                }
            }
        }
        out
    }

    /// Explicit source register operands; the FMLA accumulator is implicit and not counted.
    pub fn source_register_count(&self) -> usize {
        self.srcs.iter().filter(|o| o.register().is_some()).count()
    }

    pub fn writes_flag(&self) -> bool {
        self.op == Opcode::Subs
    }

    pub fn reads_flag(&self) -> bool {
        matches!(self.op, Opcode::Bne | Opcode::Beq)
    }

    /// Checks operand shapes for the opcode. Returns a message on mismatch.
    pub fn check_shape(&self) -> Result<(), String> {
        use Operand as O;
        use RegFile::*;
        let fail = |what: &str| Err(format!("{} expects {}", self.op, what));
        let dst_in = |files: &[RegFile]| self.dst.map(|d| files.contains(&d.file)).unwrap_or(false);
        let mem_ok = |o: &Operand, post: bool| match o {
            O::Mem(m) => m.base.file == Int && (post || m.post_inc.is_none()),
            _ => false,
        };
        match (self.op, self.srcs.as_slice()) {
            (Opcode::Ld, [m]) if dst_in(&[Int, Fp]) && mem_ok(m, true) => Ok(()),
            (Opcode::Ld, _) => fail("`LD rd|fd, [rb{, #off}]{, #inc}`"),
            (Opcode::Vld, [m]) if dst_in(&[Vec]) && mem_ok(m, true) => Ok(()),
            (Opcode::Vld, _) => fail("`VLD vd, [rb{, #off}]{, #inc}`"),
            (Opcode::St, [O::Reg(r), m]) if self.dst.is_none() && r.file != Vec && mem_ok(m, true) => Ok(()),
            (Opcode::St, _) => fail("`ST rs|fs, [rb{, #off}]{, #inc}`"),
            (Opcode::Vst, [O::Reg(r), m]) if self.dst.is_none() && r.file == Vec && mem_ok(m, true) => Ok(()),
            (Opcode::Vst, _) => fail("`VST vs, [rb{, #off}]{, #inc}`"),
            (Opcode::Prfm, [m]) if self.dst.is_none() && mem_ok(m, false) => Ok(()),
            (Opcode::Prfm, _) => fail("`PRFM [rb{, #off}]`"),
            (Opcode::Fmul | Opcode::Fadd | Opcode::Fmla, [O::Reg(a), O::Reg(b)])
                if dst_in(&[Fp, Vec]) && a.file == self.dst.unwrap().file && b.file == a.file =>
            {
                Ok(())
            }
            (Opcode::Fmul | Opcode::Fadd | Opcode::Fmla, _) => fail("three registers of one FP/vector file"),
            (Opcode::Vfmla, [O::Reg(a), O::Lane(b, _)]) if dst_in(&[Vec]) && a.file == Vec && b.file == Vec => Ok(()),
            (Opcode::Vfmla, _) => fail("`VFMLA vd, va, vb.s[k]`"),
            (Opcode::Add | Opcode::Sub | Opcode::Subs, [O::Reg(a), b])
                if dst_in(&[Int]) && a.file == Int && matches!(b, O::Imm(_)) =>
            {
                Ok(())
            }
            (Opcode::Add | Opcode::Sub | Opcode::Subs, [O::Reg(a), O::Reg(b)])
                if dst_in(&[Int]) && a.file == Int && b.file == Int =>
            {
                Ok(())
            }
            (Opcode::Add | Opcode::Sub | Opcode::Subs, _) => fail("`rd, ra, rb|#imm` on integer registers"),
            (Opcode::Mov, [O::Reg(s)]) if self.dst.map(|d| d.file == s.file).unwrap_or(false) => Ok(()),
            (Opcode::Mov, [O::Imm(_)]) if self.dst.is_some() => Ok(()),
            (Opcode::Mov, [O::FImm(_)]) if dst_in(&[Fp, Vec]) => Ok(()),
            (Opcode::Mov, _) => fail("`MOV d, s` within one register file, or `MOV d, #imm`"),
            (Opcode::B | Opcode::Bne | Opcode::Beq, [O::Target(_)]) if self.dst.is_none() => Ok(()),
            (Opcode::B | Opcode::Bne | Opcode::Beq, _) => fail("a label"),
            (Opcode::SasaLd, [m, O::Imm(n)]) if self.dst.is_none() && mem_ok(m, false) && *n >= 0 => Ok(()),
            (Opcode::SasaLd, _) => fail("`SASALD [rn], #entries`"),
            (Opcode::Halt, []) if self.dst.is_none() => Ok(()),
            (Opcode::Halt, _) => fail("no operands"),
        }
    }
}

fn fmt_mem(f: &mut fmt::Formatter<'_>, m: &MemRef) -> fmt::Result {
    if m.offset != 0 {
        write!(f, "[{}, #{}]", m.base, m.offset)?;
    } else {
        write!(f, "[{}]", m.base)?;
    }
    if let Some(inc) = m.post_inc {
        write!(f, ", #{}", inc)?;
    }
    Ok(())
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => write!(f, "{}", r),
            Operand::Lane(r, k) => write!(f, "{}.s[{}]", r, k),
            Operand::Imm(i) => write!(f, "#{}", i),
            Operand::FImm(x) => write!(f, "#{:?}", x),
            Operand::Mem(m) => fmt_mem(f, m),
            Operand::Target(Target::Index(i)) => write!(f, "@{}", i),
            Operand::Target(Target::Label(l)) => write!(f, "{}", l),
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.op)?;
        let mut first = true;
        let mut sep = |f: &mut fmt::Formatter<'_>| -> fmt::Result {
            let s = if first { " " } else { ", " };
            first = false;
            f.write_str(s)
        };
        if let Some(d) = self.dst {
            sep(f)?;
            write!(f, "{}", d)?;
        }
        for s in &self.srcs {
            sep(f)?;
            write!(f, "{}", s)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataBlock {
    pub addr: u64,
    pub bytes: Vec<u8>,
}

/// A named SASA table image placed in data memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SasaBlock {
    pub name: String,
    pub addr: u64,
    pub entries: Vec<SasaEntry>,
}

impl SasaBlock {
    pub fn byte_len(&self) -> u64 {
        (self.entries.len() * SASA_ENTRY_BYTES) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Program {
    pub instructions: Vec<Instruction>,
    pub labels: BTreeMap<String, usize>,
    pub data: Vec<DataBlock>,
    pub sasa_blocks: Vec<SasaBlock>,
}

impl Program {
    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    /// Every initial-memory block, with SASA tables encoded into their binary layout.
    pub fn memory_blocks(&self) -> Vec<DataBlock> {
        let mut out = self.data.clone();
        out.extend(self.sasa_blocks.iter().map(|b| DataBlock { addr: b.addr, bytes: encode_entries(&b.entries) }));
        out
    }

    /// First address past every data and SASA block.
    pub fn data_end(&self) -> u64 {
        self.memory_blocks().iter().map(|b| b.addr + b.bytes.len() as u64).max().unwrap_or(0)
    }

    /// Replaces label targets with instruction indices.
    pub fn resolve_labels(&mut self) -> Result<(), String> {
        for instr in &mut self.instructions {
            for src in &mut instr.srcs {
                if let Operand::Target(Target::Label(name)) = src {
                    let idx = *self.labels.get(name.as_str()).ok_or_else(|| name.clone())?;
                    *src = Operand::Target(Target::Index(idx));
                }
            }
        }
        Ok(())
    }

    /// Renders the program in the assembly format accepted by [`parse_program`].
    pub fn to_asm(&self) -> String {
        let mut by_index: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
        for (name, &idx) in &self.labels {
            by_index.entry(idx).or_default().push(name);
        }
        let label_of = |idx: usize| by_index.get(&idx).and_then(|v| v.first().copied());
        let mut out = String::new();
        for (pc, instr) in self.instructions.iter().enumerate() {
            for name in by_index.get(&pc).into_iter().flatten() {
                out.push_str(&format!("{}:\n", name));
            }
            let mut text = instr.clone();
            for src in &mut text.srcs {
                if let Operand::Target(Target::Index(i)) = src {
                    if let Some(name) = label_of(*i) {
                        *src = Operand::Target(Target::Label(name.to_string()));
                    }
                }
            }
            out.push_str(&format!("    {}\n", text));
        }
        for name in by_index.range(self.len()..).flat_map(|(_, v)| v) {
            out.push_str(&format!("{}:\n", name));
        }
        for block in &self.data {
            out.push_str(&format!("{}\n", fmt_data(block)));
        }
        for block in &self.sasa_blocks {
            let entries: Vec<String> = block.entries.iter().map(fmt_entry).collect();
            out.push_str(&format!(".sasa {} @ {:#x}: {}\n", block.name, block.addr, entries.join(" ")));
        }
        out
    }
}

fn fmt_data(block: &DataBlock) -> String {
    let mut s = format!(".data {:#x}:", block.addr);
    for b in &block.bytes {
        s.push_str(&format!(" {:02x}", b));
    }
    s
}

pub fn fmt_term(t: &Term) -> String {
    if t.mask == t.reg.full_mask() {
        format!("{}", t.reg)
    } else if t.mask.count_ones() == 1 {
        format!("{}.s[{}]", t.reg, t.mask.trailing_zeros())
    } else {
        format!("{}.m[{:#x}]", t.reg, t.mask)
    }
}

pub fn fmt_condition(c: &SkipCondition) -> String {
    match (c.combiner, &c.term2) {
        (Combiner::Or, Some(t2)) => format!("{}|{}", fmt_term(&c.term1), fmt_term(t2)),
        (Combiner::And, Some(t2)) => format!("{}&{}", fmt_term(&c.term1), fmt_term(t2)),
        _ => fmt_term(&c.term1),
    }
}

fn fmt_entry(e: &SasaEntry) -> String {
    format!("{{pc={}, cond={}, len={}}}", e.preceding_pc, fmt_condition(&e.condition), e.insts_to_skip)
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown opcode `{0}`")]
    UnknownOpcode(String),
    #[error("unresolved label `{0}`")]
    UnresolvedLabel(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

struct Cursor<'a> {
    line: usize,
    text: &'a str,
    /// Byte offset of `text` inside the original line.
    base: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, at: &str, kind: ParseErrorKind) -> ParseError {
        let off = (at.as_ptr() as usize).saturating_sub(self.text.as_ptr() as usize);
        ParseError { line: self.line, column: self.base + off + 1, kind }
    }

    fn syntax(&self, at: &str, msg: impl Into<String>) -> ParseError {
        self.err(at, ParseErrorKind::Syntax(msg.into()))
    }
}

pub fn parse_reg(s: &str) -> Option<Reg> {
    let s = s.trim();
    let mut chars = s.chars();
    let file = match chars.next()?.to_ascii_lowercase() {
        'r' => RegFile::Int,
        'f' => RegFile::Fp,
        'v' => RegFile::Vec,
        _ => return None,
    };
    let rest = chars.as_str();
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let index: usize = rest.parse().ok()?;
    (index < NUM_REGS).then_some(Reg { file, index: index as u8 })
}

pub fn parse_int(s: &str) -> Option<i64> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let mag = if let Some(h) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        u64::from_str_radix(&h.replace('_', ""), 16).ok()?
    } else if let Some(b) = body.strip_prefix("0b").or_else(|| body.strip_prefix("0B")) {
        u64::from_str_radix(&b.replace('_', ""), 2).ok()?
    } else {
        if body.is_empty() || !body.bytes().all(|c| c.is_ascii_digit() || c == b'_') {
            return None;
        }
        body.replace('_', "").parse::<u64>().ok()?
    };
    Some(if neg { (mag as i64).wrapping_neg() } else { mag as i64 })
}

/// Parses `v8.s[2]`.
fn parse_lane(s: &str) -> Option<(Reg, u8)> {
    let (reg, rest) = s.split_once('.')?;
    let inner = rest.strip_prefix("s[")?.strip_suffix(']')?;
    let lane = parse_int(inner)?;
    Some((parse_reg(reg)?, u8::try_from(lane).ok()?))
}

/// Parses a condition term: `r0`, `v12`, `v12.s[1]`, `v12.m[0x5]`.
pub fn parse_term(s: &str) -> Option<Term> {
    let s = s.trim();
    if let Some((reg, lane)) = parse_lane(s) {
        if lane as usize >= LANES {
            return None;
        }
        return Some(Term { reg, mask: 1 << lane });
    }
    if let Some((reg, rest)) = s.split_once('.') {
        let inner = rest.strip_prefix("m[")?.strip_suffix(']')?;
        let mask = parse_int(inner)?;
        return Some(Term { reg: parse_reg(reg)?, mask: u8::try_from(mask).ok()? });
    }
    let reg = parse_reg(s)?;
    Some(Term { reg, mask: reg.full_mask() })
}

pub fn parse_condition(s: &str) -> Option<SkipCondition> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once('|') {
        Some(SkipCondition::or(parse_term(a)?, parse_term(b)?))
    } else if let Some((a, b)) = s.split_once('&') {
        Some(SkipCondition::and(parse_term(a)?, parse_term(b)?))
    } else {
        Some(SkipCondition::single(parse_term(s)?))
    }
}

/// Splits on commas that are not inside brackets or braces.
fn split_top_level(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '[' | '{' => depth += 1,
            ']' | '}' => depth -= 1,
            ',' if depth == 0 => {
                out.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out
}

fn parse_operand<'a>(cur: &Cursor<'a>, tok: &'a str) -> Result<Operand, ParseError> {
    let t = tok.trim();
    if t.is_empty() {
        return Err(cur.syntax(tok, "empty operand"));
    }
    if let Some(imm) = t.strip_prefix('#') {
        if let Some(i) = parse_int(imm) {
            return Ok(Operand::Imm(i));
        }
        return match imm.trim().parse::<f32>() {
            Ok(x) if x.is_finite() => Ok(Operand::FImm(x)),
            _ => Err(cur.syntax(t, format!("bad immediate `{}`", t))),
        };
    }
    if let Some(inner) = t.strip_prefix('[') {
        let inner = inner
            .strip_suffix(']')
            .ok_or_else(|| cur.syntax(t, "unterminated memory operand"))?;
        let mut parts = inner.splitn(2, ',');
        let base_s = parts.next().unwrap_or("");
        let base = parse_reg(base_s).ok_or_else(|| cur.syntax(base_s, format!("bad base register `{}`", base_s.trim())))?;
        let offset = match parts.next() {
            None => 0,
            Some(off) => off
                .trim()
                .strip_prefix('#')
                .and_then(parse_int)
                .ok_or_else(|| cur.syntax(off, format!("bad offset `{}`", off.trim())))?,
        };
        return Ok(Operand::Mem(MemRef { base, offset, post_inc: None }));
    }
    if let Some((reg, lane)) = parse_lane(t) {
        return Ok(Operand::Lane(reg, lane));
    }
    if t.contains('.') {
        return Err(cur.syntax(t, format!("bad lane selector `{}`", t)));
    }
    if let Some(r) = parse_reg(t) {
        return Ok(Operand::Reg(r));
    }
    if is_ident(t) {
        return Ok(Operand::Target(Target::Label(t.to_string())));
    }
    if let Some(i) = t.strip_prefix('@').and_then(|n| n.parse::<usize>().ok()) {
        return Ok(Operand::Target(Target::Index(i)));
    }
    Err(cur.syntax(t, format!("bad operand `{}`", t)))
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn parse_instruction<'a>(cur: &Cursor<'a>, text: &'a str) -> Result<Instruction, ParseError> {
    let (mn, rest) = match text.find(char::is_whitespace) {
        Some(i) => (&text[..i], &text[i..]),
        None => (text, ""),
    };
    let op = Opcode::from_mnemonic(mn).ok_or_else(|| cur.err(mn, ParseErrorKind::UnknownOpcode(mn.to_string())))?;
    let mut ops = Vec::new();
    if !rest.trim().is_empty() {
        for tok in split_top_level(rest) {
            ops.push(parse_operand(cur, tok)?);
        }
    }
    // `[rb], #inc` is a post-increment on memory ops that allow it.
    if op.allows_post_increment() && ops.len() >= 2 {
        let n = ops.len();
        if let (Operand::Mem(m), Operand::Imm(inc)) = (&ops[n - 2], &ops[n - 1]) {
            let m = MemRef { post_inc: Some(*inc), ..*m };
            ops.truncate(n - 2);
            ops.push(Operand::Mem(m));
        }
    }
    let has_dst = !matches!(
        op,
        Opcode::St | Opcode::Vst | Opcode::Prfm | Opcode::B | Opcode::Bne | Opcode::Beq | Opcode::SasaLd | Opcode::Halt
    );
    let (dst, srcs) = if has_dst {
        match ops.first() {
            Some(Operand::Reg(r)) => (Some(*r), ops[1..].to_vec()),
            _ => return Err(cur.syntax(rest, format!("{} needs a destination register", op))),
        }
    } else {
        (None, ops)
    };
    let instr = Instruction { op, dst, srcs };
    instr.check_shape().map_err(|m| cur.syntax(text, m))?;
    if let Some(Operand::Lane(_, k)) = instr.srcs.get(1) {
        if *k as usize >= LANES {
            return Err(cur.syntax(text, format!("lane {} out of range 0..{}", k, LANES)));
        }
    }
    Ok(instr)
}

fn parse_hex_bytes<'a>(cur: &Cursor<'a>, s: &'a str) -> Result<Vec<u8>, ParseError> {
    let digits: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    if digits.len() % 2 != 0 || !digits.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(cur.syntax(s, "data payload must be hex byte pairs"));
    }
    Ok((0..digits.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&digits[i..i + 2], 16).unwrap())
        .collect())
}

fn parse_sasa_entries<'a>(cur: &Cursor<'a>, s: &'a str) -> Result<Vec<SasaEntry>, ParseError> {
    let mut entries = Vec::new();
    let mut rest = s.trim_start();
    while !rest.is_empty() {
        let body_start = rest
            .strip_prefix('{')
            .ok_or_else(|| cur.syntax(rest, "expected `{` starting a SASA entry"))?;
        let end = body_start.find('}').ok_or_else(|| cur.syntax(rest, "unterminated SASA entry"))?;
        let body = &body_start[..end];
        let (mut pc, mut cond, mut len) = (None, None, None);
        for field in body.split(',') {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| cur.syntax(field, "expected key=value"))?;
            match k.trim() {
                "pc" => pc = parse_int(v).filter(|&x| x >= 0).map(|x| x as usize),
                "cond" => cond = parse_condition(v),
                "len" => len = parse_int(v).filter(|&x| x > 0).map(|x| x as usize),
                other => return Err(cur.syntax(field, format!("unknown SASA field `{}`", other))),
            }
        }
        match (pc, cond, len) {
            (Some(preceding_pc), Some(condition), Some(insts_to_skip)) => {
                entries.push(SasaEntry { preceding_pc, condition, insts_to_skip })
            }
            _ => return Err(cur.syntax(body, "SASA entry needs valid pc, cond and len")),
        }
        rest = body_start[end + 1..].trim_start();
    }
    Ok(entries)
}

enum Pending {
    Sasa { name: String, addr: Option<u64>, entries: Vec<SasaEntry> },
}

/// Parses assembly text into a [`Program`] with labels resolved.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let mut prog = Program::default();
    let mut label_lines: BTreeMap<String, usize> = BTreeMap::new();
    let mut pending_sasa: Vec<Pending> = Vec::new();
    let mut target_uses: Vec<(usize, usize, usize)> = Vec::new(); // (pc, line, column)

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let code = match raw.find(';') {
            Some(i) => &raw[..i],
            None => raw,
        };
        let trimmed = code.trim_start();
        let base = code.len() - trimmed.len();
        let mut cur = Cursor { line, text: trimmed, base };
        let mut body = trimmed.trim_end();
        if body.is_empty() {
            continue;
        }

        if let Some(dir) = body.strip_prefix(".data") {
            let (addr_s, payload) = dir
                .split_once(':')
                .ok_or_else(|| cur.syntax(body, "expected `.data addr: bytes`"))?;
            let addr = parse_int(addr_s)
                .filter(|&a| a >= 0)
                .ok_or_else(|| cur.syntax(addr_s, "bad data address"))? as u64;
            let bytes = parse_hex_bytes(&cur, payload)?;
            prog.data.push(DataBlock { addr, bytes });
            continue;
        }
        if let Some(dir) = body.strip_prefix(".sasa") {
            let (head, payload) = dir
                .split_once(':')
                .ok_or_else(|| cur.syntax(body, "expected `.sasa name [@ addr]: entries`"))?;
            let (name, addr) = match head.split_once('@') {
                Some((n, a)) => (
                    n.trim(),
                    Some(parse_int(a).filter(|&x| x >= 0).ok_or_else(|| cur.syntax(a, "bad SASA address"))? as u64),
                ),
                None => (head.trim(), None),
            };
            if !is_ident(name) {
                return Err(cur.syntax(head, "bad SASA block name"));
            }
            let entries = parse_sasa_entries(&cur, payload)?;
            pending_sasa.push(Pending::Sasa { name: name.to_string(), addr, entries });
            continue;
        }
        if let Some(dir) = body.strip_prefix(".label") {
            body = dir.trim();
            cur = Cursor { line, text: body, base: base + (trimmed.len() - dir.len()) + (dir.len() - dir.trim_start().len()) };
            if !body.ends_with(':') {
                return Err(cur.syntax(body, "expected `.label name:`"));
            }
        }
        // Leading `name:` labels.
        loop {
            let Some(colon) = body.find(':') else { break };
            let name = body[..colon].trim();
            if !is_ident(name) || body[..colon].contains('[') {
                break;
            }
            if prog.labels.contains_key(name) {
                return Err(cur.err(name, ParseErrorKind::DuplicateLabel(name.to_string())));
            }
            prog.labels.insert(name.to_string(), prog.instructions.len());
            label_lines.insert(name.to_string(), line);
            body = body[colon + 1..].trim_start();
            if body.is_empty() {
                break;
            }
        }
        if body.is_empty() {
            continue;
        }
        if body.starts_with('.') {
            return Err(cur.syntax(body, format!("unknown directive `{}`", body.split_whitespace().next().unwrap_or(body))));
        }
        let instr = parse_instruction(&cur, body)?;
        if instr.target().is_some() {
            let off = (body.as_ptr() as usize) - (cur.text.as_ptr() as usize);
            target_uses.push((prog.instructions.len(), line, cur.base + off + 1));
        }
        prog.instructions.push(instr);
    }

    for (pc, line, column) in target_uses {
        if let Some(Target::Label(name)) = prog.instructions[pc].target() {
            if !prog.labels.contains_key(name.as_str()) {
                return Err(ParseError { line, column, kind: ParseErrorKind::UnresolvedLabel(name.clone()) });
            }
        }
    }
    prog.resolve_labels().expect("labels checked above");

    for p in pending_sasa {
        let Pending::Sasa { name, addr, entries } = p;
        let addr = addr.unwrap_or_else(|| align_up(prog.data_end(), 64));
        prog.sasa_blocks.push(SasaBlock { name, addr, entries });
    }
    Ok(prog)
}

pub fn align_up(x: u64, align: u64) -> u64 {
    x.div_ceil(align) * align
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticKind {
    UnresolvedTarget,
    OperandCount,
    IllegalPostIncrement,
    LaneOutOfRange,
    MalformedOperands,
    DataOverlap,
    SasaEntryOutOfRange,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub pc: Option<usize>,
    pub kind: DiagnosticKind,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.pc {
            Some(pc) => write!(f, "pc {}: {}", pc, self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Checks every instruction and program invariant; an empty result means the program is valid.
pub fn validate(program: &Program) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut diag = |pc: Option<usize>, kind: DiagnosticKind, message: String| out.push(Diagnostic { pc, kind, message });
    let n = program.len();
    for (pc, instr) in program.instructions.iter().enumerate() {
        let dsts = usize::from(instr.dst.is_some());
        if dsts > 1 || instr.source_register_count() > 2 {
            diag(Some(pc), DiagnosticKind::OperandCount, format!("operand count: `{}` has more than 2 source registers", instr));
        }
        if let Some(m) = instr.mem() {
            if m.post_inc.is_some() && !instr.op.allows_post_increment() {
                diag(Some(pc), DiagnosticKind::IllegalPostIncrement, format!("post-increment not allowed on {}", instr.op));
            }
        }
        for src in &instr.srcs {
            if let Operand::Lane(_, k) = src {
                if *k as usize >= LANES {
                    diag(Some(pc), DiagnosticKind::LaneOutOfRange, format!("lane {} out of range", k));
                }
            }
        }
        match instr.target() {
            Some(Target::Label(name)) => diag(Some(pc), DiagnosticKind::UnresolvedTarget, format!("unresolved target `{}`", name)),
            Some(Target::Index(i)) if *i >= n => {
                diag(Some(pc), DiagnosticKind::UnresolvedTarget, format!("unresolved target: index {} beyond program end", i))
            }
            _ => {}
        }
        let operand_count_flagged = instr.source_register_count() > 2;
        if !operand_count_flagged && instr.mem().map_or(true, |m| m.post_inc.is_none() || instr.op.allows_post_increment()) {
            if let Err(m) = instr.check_shape() {
                diag(Some(pc), DiagnosticKind::MalformedOperands, m);
            }
        }
    }
    let mut blocks: Vec<(u64, u64)> = program
        .memory_blocks()
        .iter()
        .filter(|b| !b.bytes.is_empty())
        .map(|b| (b.addr, b.addr + b.bytes.len() as u64))
        .collect();
    blocks.sort();
    for w in blocks.windows(2) {
        if w[1].0 < w[0].1 {
            diag(None, DiagnosticKind::DataOverlap, format!("data blocks overlap at {:#x}", w[1].0));
        }
    }
    for block in &program.sasa_blocks {
        for e in &block.entries {
            if e.preceding_pc + e.insts_to_skip >= n {
                diag(
                    None,
                    DiagnosticKind::SasaEntryOutOfRange,
                    format!("SASA entry at pc {} skipping {} runs past the program end", e.preceding_pc, e.insts_to_skip),
                );
            }
        }
    }
    out
}
