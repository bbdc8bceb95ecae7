//! Architectural state, untimed instruction semantics and the L1 data cache.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::{Instruction, MemRef, Opcode, Operand, Reg, RegFile, LANES, NUM_REGS};

const PAGE_BITS: u32 = 12;
const PAGE_SIZE: usize = 1 << PAGE_BITS;

/// Sparse byte-addressable memory. Bytes never written read as zero.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Memory {
    pages: HashMap<u64, Box<[u8; PAGE_SIZE]>>,
}

impl Memory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn read_byte(&self, addr: u64) -> u8 {
        self.pages
            .get(&(addr >> PAGE_BITS))
            .map_or(0, |p| p[(addr as usize) & (PAGE_SIZE - 1)])
    }

    pub fn write_byte(&mut self, addr: u64, value: u8) {
        let page = self.pages.entry(addr >> PAGE_BITS).or_insert_with(|| Box::new([0; PAGE_SIZE]));
        page[(addr as usize) & (PAGE_SIZE - 1)] = value;
    }

    pub fn read(&self, addr: u64, out: &mut [u8]) {
        for (i, b) in out.iter_mut().enumerate() {
            *b = self.read_byte(addr.wrapping_add(i as u64));
        }
    }

    pub fn write(&mut self, addr: u64, bytes: &[u8]) {
        for (i, b) in bytes.iter().enumerate() {
            self.write_byte(addr.wrapping_add(i as u64), *b);
        }
    }

    pub fn read_u64(&self, addr: u64) -> u64 {
        let mut b = [0; 8];
        self.read(addr, &mut b);
        u64::from_le_bytes(b)
    }

    pub fn read_f32(&self, addr: u64) -> f32 {
        let mut b = [0; 4];
        self.read(addr, &mut b);
        f32::from_le_bytes(b)
    }

    pub fn write_f32(&mut self, addr: u64, value: f32) {
        self.write(addr, &value.to_le_bytes());
    }

    pub fn read_f32s(&self, addr: u64, n: usize) -> Vec<f32> {
        (0..n).map(|i| self.read_f32(addr + 4 * i as u64)).collect()
    }

    pub fn write_f32s(&mut self, addr: u64, values: &[f32]) {
        for (i, v) in values.iter().enumerate() {
            self.write_f32(addr + 4 * i as u64, *v);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegValue {
    Int(u64),
    Fp(f32),
    Vec([f32; LANES]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MachineState {
    pub int_regs: [u64; NUM_REGS],
    pub fp_regs: [f32; NUM_REGS],
    pub vec_regs: [[f32; LANES]; NUM_REGS],
    pub zero_flag: bool,
    pub memory: Memory,
    pub pc: usize,
}

impl Default for MachineState {
    fn default() -> Self {
        MachineState {
            int_regs: [0; NUM_REGS],
            fp_regs: [0.0; NUM_REGS],
            vec_regs: [[0.0; LANES]; NUM_REGS],
            zero_flag: false,
            memory: Memory::new(),
            pc: 0,
        }
    }
}

impl MachineState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fresh state with the program's data and SASA blocks loaded into memory.
    pub fn with_program(program: &crate::isa::Program) -> Self {
        let mut s = Self::default();
        for block in program.memory_blocks() {
            s.memory.write(block.addr, &block.bytes);
        }
        s
    }

    pub fn get(&self, reg: Reg) -> RegValue {
        let i = reg.index as usize;
        match reg.file {
            RegFile::Int => RegValue::Int(self.int_regs[i]),
            RegFile::Fp => RegValue::Fp(self.fp_regs[i]),
            RegFile::Vec => RegValue::Vec(self.vec_regs[i]),
        }
    }

    pub fn set(&mut self, reg: Reg, value: RegValue) {
        let i = reg.index as usize;
        match (reg.file, value) {
            (RegFile::Int, RegValue::Int(v)) => self.int_regs[i] = v,
            (RegFile::Fp, RegValue::Fp(v)) => self.fp_regs[i] = v,
            (RegFile::Vec, RegValue::Vec(v)) => self.vec_regs[i] = v,
            (file, v) => panic!("register file {:?} cannot hold {:?}", file, v),
        }
    }

    pub fn apply(&mut self, effect: &Effect) {
        for (reg, v) in &effect.reg_writes {
            self.set(*reg, *v);
        }
        for (addr, bytes) in &effect.mem_writes {
            self.memory.write(*addr, bytes);
        }
        if let Some(z) = effect.flag {
            self.zero_flag = z;
        }
        self.pc = effect.next_pc;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Load,
    Store,
    Prefetch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemAccess {
    pub addr: u64,
    pub bytes: u64,
    pub kind: AccessKind,
}

/// Complete architectural effect of one instruction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Effect {
    pub reg_writes: Vec<(Reg, RegValue)>,
    pub mem_writes: Vec<(u64, Vec<u8>)>,
    pub flag: Option<bool>,
    pub next_pc: usize,
    pub halt: bool,
    pub access: Option<MemAccess>,
    /// `(base address, entry count)` for SASALD.
    pub sasa_load: Option<(u64, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("pc {pc}: unaligned vector access at {addr:#x}")]
    UnalignedVector { pc: usize, addr: u64 },
    #[error("pc {pc}: lane {lane} out of range")]
    LaneOutOfRange { pc: usize, lane: u8 },
    #[error("pc {pc}: malformed instruction `{text}`")]
    Malformed { pc: usize, text: String },
}

pub fn access_bytes(op: Opcode, reg: Option<Reg>) -> u64 {
    match (op, reg.map(|r| r.file)) {
        (Opcode::Vld | Opcode::Vst, _) => 16,
        (_, Some(RegFile::Int)) => 8,
        (_, Some(RegFile::Fp)) => 4,
        _ => 4,
    }
}

pub fn effective_address(m: &MemRef, state: &MachineState) -> u64 {
    state.int_regs[m.base.index as usize].wrapping_add(m.offset as u64)
}

/// Address and size of the data access an instruction performs, if any.
pub fn memory_access(instr: &Instruction, state: &MachineState) -> Option<MemAccess> {
    let m = instr.mem()?;
    let addr = effective_address(m, state);
    let (kind, reg) = match instr.op {
        Opcode::Ld | Opcode::Vld => (AccessKind::Load, instr.dst),
        Opcode::St | Opcode::Vst => (
            AccessKind::Store,
            match instr.srcs.first() {
                Some(Operand::Reg(r)) => Some(*r),
                _ => None,
            },
        ),
        Opcode::Prfm => (AccessKind::Prefetch, None),
        _ => return None,
    };
    let bytes = if kind == AccessKind::Prefetch { 1 } else { access_bytes(instr.op, reg) };
    Some(MemAccess { addr, bytes, kind })
}

fn reg_of(o: &Operand) -> Option<Reg> {
    match o {
        Operand::Reg(r) => Some(*r),
        _ => None,
    }
}

fn lanewise(a: RegValue, b: RegValue, f: impl Fn(f32, f32) -> f32) -> Option<RegValue> {
    match (a, b) {
        (RegValue::Fp(x), RegValue::Fp(y)) => Some(RegValue::Fp(f(x, y))),
        (RegValue::Vec(x), RegValue::Vec(y)) => Some(RegValue::Vec(std::array::from_fn(|k| f(x[k], y[k])))),
        _ => None,
    }
}

/// Computes the architectural effect of `instr` at `pc` without mutating `state`.
pub fn exec_semantics(instr: &Instruction, pc: usize, state: &MachineState) -> Result<Effect, ExecError> {
    let malformed = || ExecError::Malformed { pc, text: instr.to_string() };
    let mut e = Effect { next_pc: pc + 1, ..Effect::default() };
    let src = |i: usize| instr.srcs.get(i).and_then(reg_of).map(|r| state.get(r)).ok_or_else(malformed);
    let dst = instr.dst;

    if let Some(acc) = memory_access(instr, state) {
        if matches!(instr.op, Opcode::Vld | Opcode::Vst) && acc.addr % 16 != 0 {
            return Err(ExecError::UnalignedVector { pc, addr: acc.addr });
        }
        e.access = Some(acc);
    }

    match instr.op {
        Opcode::Ld | Opcode::Vld => {
            let d = dst.ok_or_else(malformed)?;
            let addr = e.access.unwrap().addr;
            let v = match d.file {
                RegFile::Int => RegValue::Int(state.memory.read_u64(addr)),
                RegFile::Fp => RegValue::Fp(state.memory.read_f32(addr)),
                RegFile::Vec => RegValue::Vec(std::array::from_fn(|k| state.memory.read_f32(addr + 4 * k as u64))),
            };
            e.reg_writes.push((d, v));
        }
        Opcode::St | Opcode::Vst => {
            let addr = e.access.unwrap().addr;
            let bytes = match src(0)? {
                RegValue::Int(v) => v.to_le_bytes().to_vec(),
                RegValue::Fp(v) => v.to_le_bytes().to_vec(),
                RegValue::Vec(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            };
            e.mem_writes.push((addr, bytes));
        }
        Opcode::Prfm => {}
        Opcode::Fmul => {
            let v = lanewise(src(0)?, src(1)?, |a, b| a * b).ok_or_else(malformed)?;
            e.reg_writes.push((dst.ok_or_else(malformed)?, v));
        }
        Opcode::Fadd => {
            let v = lanewise(src(0)?, src(1)?, |a, b| a + b).ok_or_else(malformed)?;
            e.reg_writes.push((dst.ok_or_else(malformed)?, v));
        }
        Opcode::Fmla => {
            let d = dst.ok_or_else(malformed)?;
            // Fused: acc + a*b with a single rounding.
            let v = match (state.get(d), src(0)?, src(1)?) {
                (RegValue::Fp(acc), RegValue::Fp(a), RegValue::Fp(b)) => RegValue::Fp(a.mul_add(b, acc)),
                (RegValue::Vec(acc), RegValue::Vec(a), RegValue::Vec(b)) => {
                    RegValue::Vec(std::array::from_fn(|k| a[k].mul_add(b[k], acc[k])))
                }
                _ => return Err(malformed()),
            };
            e.reg_writes.push((d, v));
        }
        Opcode::Vfmla => {
            let d = dst.ok_or_else(malformed)?;
            let (breg, lane) = match instr.srcs.get(1) {
                Some(Operand::Lane(r, k)) => (*r, *k),
                _ => return Err(malformed()),
            };
            if lane as usize >= LANES {
                return Err(ExecError::LaneOutOfRange { pc, lane });
            }
            let b = state.vec_regs[breg.index as usize][lane as usize];
            let (RegValue::Vec(acc), RegValue::Vec(a)) = (state.get(d), src(0)?) else {
                return Err(malformed());
            };
            e.reg_writes.push((d, RegValue::Vec(std::array::from_fn(|k| a[k].mul_add(b, acc[k])))));
        }
        Opcode::Add | Opcode::Sub | Opcode::Subs => {
            let d = dst.ok_or_else(malformed)?;
            let RegValue::Int(a) = src(0)? else { return Err(malformed()) };
            let b = match instr.srcs.get(1) {
                Some(Operand::Imm(i)) => *i as u64,
                Some(Operand::Reg(r)) if r.file == RegFile::Int => state.int_regs[r.index as usize],
                _ => return Err(malformed()),
            };
            let v = if instr.op == Opcode::Add { a.wrapping_add(b) } else { a.wrapping_sub(b) };
            e.reg_writes.push((d, RegValue::Int(v)));
            if instr.op == Opcode::Subs {
                e.flag = Some(v == 0);
            }
        }
        Opcode::Mov => {
            let d = dst.ok_or_else(malformed)?;
            let v = match (instr.srcs.first(), d.file) {
                (Some(Operand::Reg(r)), _) => state.get(*r),
                (Some(Operand::Imm(i)), RegFile::Int) => RegValue::Int(*i as u64),
                (Some(Operand::Imm(i)), RegFile::Fp) => RegValue::Fp(*i as f32),
                (Some(Operand::Imm(i)), RegFile::Vec) => RegValue::Vec([*i as f32; LANES]),
                (Some(Operand::FImm(x)), RegFile::Fp) => RegValue::Fp(*x),
                (Some(Operand::FImm(x)), RegFile::Vec) => RegValue::Vec([*x; LANES]),
                _ => return Err(malformed()),
            };
            e.reg_writes.push((d, v));
        }
        Opcode::B | Opcode::Bne | Opcode::Beq => {
            let target = instr.target_index().ok_or_else(malformed)?;
            let taken = match instr.op {
                Opcode::B => true,
                Opcode::Bne => !state.zero_flag,
                _ => state.zero_flag,
            };
            if taken {
                e.next_pc = target;
            }
        }
        Opcode::SasaLd => {
            let m = instr.mem().ok_or_else(malformed)?;
            let n = match instr.srcs.get(1) {
                Some(Operand::Imm(n)) if *n >= 0 => *n as usize,
                _ => return Err(malformed()),
            };
            e.sasa_load = Some((effective_address(m, state), n));
        }
        Opcode::Halt => {
            e.halt = true;
            e.next_pc = pc;
        }
    }

    if let Some((base, inc)) = instr.post_increment() {
        let v = state.int_regs[base.index as usize].wrapping_add(inc as u64);
        e.reg_writes.push((base, RegValue::Int(v)));
    }
    Ok(e)
}

/// Runs a program on the reference semantics with no timing, up to `step_limit` instructions.
pub fn run_functional(
    program: &crate::isa::Program,
    state: &mut MachineState,
    step_limit: u64,
) -> Result<u64, ExecError> {
    let mut steps = 0;
    while state.pc < program.len() && steps < step_limit {
        let e = exec_semantics(&program.instructions[state.pc], state.pc, state)?;
        steps += 1;
        if e.halt {
            break;
        }
        state.apply(&e);
    }
    Ok(steps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CacheConfig {
    #[serde(rename = "l1_size")]
    pub size_bytes: u64,
    #[serde(rename = "l1_line")]
    pub line_bytes: u64,
    #[serde(rename = "l1_assoc")]
    pub associativity: u64,
    #[serde(rename = "l1_hit")]
    pub hit_latency: u64,
    #[serde(rename = "l1_miss")]
    pub miss_latency: u64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig { size_bytes: 32 * 1024, line_bytes: 64, associativity: 4, hit_latency: 2, miss_latency: 20 }
    }
}

impl CacheConfig {
    pub fn sets(&self) -> u64 {
        self.size_bytes / (self.line_bytes * self.associativity)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CacheError {
    #[error("access of {bytes} bytes at {addr:#x} straddles a cache line")]
    Straddle { addr: u64, bytes: u64 },
    #[error("invalid cache geometry: {0}")]
    Geometry(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheOutcome {
    pub latency: u64,
    pub hit: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DCache {
    pub config: CacheConfig,
    /// Per set, line tags from most to least recently used.
    sets: Vec<Vec<u64>>,
    pub accesses: u64,
    pub hits: u64,
    pub misses: u64,
    pub prefetches: u64,
}

impl DCache {
    pub fn new(config: CacheConfig) -> Result<Self, CacheError> {
        let c = &config;
        if c.line_bytes == 0 || !c.line_bytes.is_power_of_two() || c.associativity == 0 {
            return Err(CacheError::Geometry("line size must be a power of two and associativity nonzero".into()));
        }
        if c.size_bytes == 0 || c.size_bytes % (c.line_bytes * c.associativity) != 0 {
            return Err(CacheError::Geometry("size must be a multiple of line size times associativity".into()));
        }
        Ok(DCache {
            config,
            sets: vec![Vec::with_capacity(c.associativity as usize); c.sets() as usize],
            accesses: 0,
            hits: 0,
            misses: 0,
            prefetches: 0,
        })
    }

    fn touch(&mut self, addr: u64) -> bool {
        let line = addr / self.config.line_bytes;
        let set = &mut self.sets[(line % self.config.sets()) as usize];
        let hit = match set.iter().position(|&t| t == line) {
            Some(i) => {
                set.remove(i);
                true
            }
            None => {
                if set.len() == self.config.associativity as usize {
                    set.pop();
                }
                false
            }
        };
        set.insert(0, line);
        hit
    }

    pub fn access(&mut self, addr: u64, bytes: u64) -> Result<CacheOutcome, CacheError> {
        if bytes == 0 || bytes > self.config.line_bytes || addr % self.config.line_bytes + bytes > self.config.line_bytes {
            return Err(CacheError::Straddle { addr, bytes });
        }
        let hit = self.touch(addr);
        self.accesses += 1;
        if hit {
            self.hits += 1;
            Ok(CacheOutcome { latency: self.config.hit_latency, hit })
        } else {
            self.misses += 1;
            Ok(CacheOutcome { latency: self.config.miss_latency, hit })
        }
    }

    /// Installs the line holding `addr` without counting an access.
    pub fn prefetch(&mut self, addr: u64) {
        self.touch(addr);
        self.prefetches += 1;
    }

    pub fn contains(&self, addr: u64) -> bool {
        let line = addr / self.config.line_bytes;
        self.sets[(line % self.config.sets()) as usize].contains(&line)
    }
}
