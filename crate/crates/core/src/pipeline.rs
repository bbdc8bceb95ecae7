//! Cycle-level 4-stage in-order pipeline (fetch, decode, execute/memory,
//! writeback) with an optional sparsity-aware fetch stage.
//!
//! Each cycle runs the stages back to front: writeback commits the oldest
//! finished instruction, decode issues into the execute unit, fetch moves its
//! instruction into decode, and fetch (with the PSRU in sparce mode) picks up
//! the next PC. Architectural effects are computed and applied at commit, so
//! the committed stream follows the reference semantics exactly.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::{Opcode, Program, Reg, RegFile};
use crate::machine::{
    exec_semantics, memory_access, AccessKind, CacheConfig, CacheError, DCache, ExecError, MachineState, RegValue,
};
use crate::sparce::{
    eval_condition, psru_decide, sasa_load, PsruAction, RegionStatus, SasaEntry, SasaTable, SkipCondition, SkippableRegion, SpRF,
    SparceError, Tri, DEFAULT_SASA_CAPACITY,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    Sparce,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Sparce => "sparce",
        }
    }
}

/// Overrides for exercising the pending-region paths in tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PsruPolicy {
    #[default]
    Normal,
    /// Every SASA hit opens a pending region, so skips happen by squashing.
    DeferAll,
    /// No region is ever skipped.
    ExecuteAll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    #[serde(flatten)]
    pub cache: CacheConfig,
    pub fadd_lat: u64,
    pub fmul_lat: u64,
    pub fmla_lat: u64,
    pub int_lat: u64,
    pub branch_penalty: u64,
    pub cycle_limit: u64,
    pub sasa_capacity: usize,
    pub trap_nonfinite: bool,
    /// Vector FP ops hold the execute unit for one cycle and deliver their result after the full latency.
    pub pipelined_simd: bool,
    #[serde(skip)]
    pub psru_policy: PsruPolicy,
    #[serde(skip)]
    pub trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            cache: CacheConfig::default(),
            fadd_lat: 3,
            fmul_lat: 4,
            fmla_lat: 4,
            int_lat: 1,
            branch_penalty: 1,
            cycle_limit: 1_000_000_000,
            sasa_capacity: DEFAULT_SASA_CAPACITY,
            trap_nonfinite: false,
            pipelined_simd: true,
            psru_policy: PsruPolicy::Normal,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub cycles: u64,
    pub fetched: u64,
    pub executed: u64,
    pub skipped_at_fetch: u64,
    pub squashed: u64,
    pub loads_skipped: u64,
    pub fmla_executed: u64,
    pub fmla_skipped: u64,
    pub dcache_accesses: u64,
    pub dcache_hits: u64,
    pub dcache_misses: u64,
    pub prefetches: u64,
    pub sasa_hits: u64,
    pub regions_entered: u64,
    pub regions_aborted_execute: u64,
    pub regions_resolved_skip: u64,
    pub busy_cycles: u64,
    pub stall_data_hazard: u64,
    pub stall_exec_busy: u64,
    pub stall_mem_wait: u64,
    pub stall_frontend: u64,
}

impl RunStats {
    pub fn stall_cycles(&self) -> u64 {
        self.stall_data_hazard + self.stall_exec_busy + self.stall_mem_wait + self.stall_frontend
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEvent {
    Fetch { cycle: u64, pc: usize },
    Commit { cycle: u64, pc: usize },
    Squash { cycle: u64, pc: usize },
    /// Fetch jumped from `from` to `to` without fetching the PCs in between.
    Skip { cycle: u64, from: usize, to: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub state: MachineState,
    pub stats: RunStats,
    pub trace: Vec<TraceEvent>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Sparce(#[from] SparceError),
    #[error("cycle limit {0} exceeded (runaway program?)")]
    CycleLimit(u64),
    #[error("pc {pc}: skipped instruction reads non-finite {reg}")]
    NonFinite { pc: usize, reg: Reg },
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    seq: u64,
    pc: usize,
    region: Option<u64>,
    done_at: u64,
}

struct Sim<'a> {
    prog: &'a Program,
    cfg: &'a SimConfig,
    sparce: bool,
    state: MachineState,
    cache: DCache,
    sprf: SpRF,
    table: SasaTable,
    stats: RunStats,
    trace: Vec<TraceEvent>,
    cycle: u64,
    next_seq: u64,
    fetch_slot: Option<Slot>,
    decode_slot: Option<Slot>,
    /// Issued instructions awaiting commit, oldest first.
    queue: VecDeque<Slot>,
    exec_free_at: u64,
    exec_owner: Option<u64>,
    exec_is_mem: bool,
    fetch_pc: usize,
    fetch_resume_at: u64,
    fetch_waiting_on: Option<u64>,
    fetch_stopped: bool,
    regions: Vec<SkippableRegion>,
    next_region: u64,
    halted: bool,
}

/// Runs `program` from `init` until HALT commits or fetch runs off the end and the pipeline drains.
pub fn simulate(program: &Program, init: MachineState, config: &SimConfig, mode: Mode) -> Result<SimResult, SimError> {
    let mut sim = Sim {
        prog: program,
        cfg: config,
        sparce: mode == Mode::Sparce,
        fetch_pc: init.pc,
        state: init,
        cache: DCache::new(config.cache)?,
        sprf: SpRF::new(),
        table: SasaTable::new(config.sasa_capacity),
        stats: RunStats::default(),
        trace: Vec::new(),
        cycle: 0,
        next_seq: 0,
        fetch_slot: None,
        decode_slot: None,
        queue: VecDeque::new(),
        exec_free_at: 0,
        exec_owner: None,
        exec_is_mem: false,
        fetch_resume_at: 0,
        fetch_waiting_on: None,
        fetch_stopped: false,
        regions: Vec::new(),
        next_region: 0,
        halted: false,
    };
    sim.run()?;
    let mut stats = sim.stats;
    stats.dcache_accesses = sim.cache.accesses;
    stats.dcache_hits = sim.cache.hits;
    stats.dcache_misses = sim.cache.misses;
    stats.prefetches = sim.cache.prefetches;
    Ok(SimResult { state: sim.state, stats, trace: sim.trace })
}

impl<'a> Sim<'a> {
    fn run(&mut self) -> Result<(), SimError> {
        loop {
            if self.cycle >= self.cfg.cycle_limit {
                return Err(SimError::CycleLimit(self.cfg.cycle_limit));
            }
            self.writeback()?;
            if self.halted {
                // The HALT commit cycle drains the pipe.
                self.stats.stall_frontend += 1;
                break;
            }
            self.issue()?;
            self.decode();
            self.fetch()?;
            let drained = self.fetch_slot.is_none() && self.decode_slot.is_none() && self.queue.is_empty();
            if self.fetch_stopped && drained {
                break;
            }
            self.cycle += 1;
        }
        self.stats.cycles = self.cycle + 1;
        Ok(())
    }

    fn record(&mut self, ev: TraceEvent) {
        if self.cfg.trace {
            self.trace.push(ev);
        }
    }

    fn writeback(&mut self) -> Result<(), SimError> {
        let Some(front) = self.queue.front() else { return Ok(()) };
        if front.done_at > self.cycle {
            return Ok(());
        }
        let slot = self.queue.pop_front().unwrap();
        let instr = &self.prog.instructions[slot.pc];
        let effect = exec_semantics(instr, slot.pc, &self.state)?;
        self.state.apply(&effect);
        if self.sparce {
            for reg in instr.writes() {
                let v = self.state.get(reg);
                self.sprf.svc_commit(reg, &v)?;
            }
            if let Some((base, n)) = effect.sasa_load {
                sasa_load(&mut self.table, &self.state.memory, base, n)?;
            }
        }
        self.stats.executed += 1;
        if instr.op.is_mac() {
            self.stats.fmla_executed += 1;
        }
        self.record(TraceEvent::Commit { cycle: self.cycle, pc: slot.pc });
        if effect.halt {
            self.halted = true;
        }
        Ok(())
    }

    fn latency(&self, op: Opcode, dst: Option<Reg>) -> (u64, u64) {
        let vector = dst.map(|d| d.file == RegFile::Vec).unwrap_or(false);
        let fp = |lat: u64| if vector && self.cfg.pipelined_simd { (1, lat) } else { (lat, lat) };
        match op {
            Opcode::Fadd => fp(self.cfg.fadd_lat),
            Opcode::Fmul => fp(self.cfg.fmul_lat),
            Opcode::Fmla | Opcode::Vfmla => fp(self.cfg.fmla_lat),
            Opcode::Prfm => (1, 1),
            _ => (self.cfg.int_lat, self.cfg.int_lat),
        }
    }

    fn hazard(&self, pc: usize) -> bool {
        let instr = &self.prog.instructions[pc];
        let reads = instr.reads();
        let writes = instr.writes();
        self.queue.iter().any(|older| {
            let o = &self.prog.instructions[older.pc];
            (instr.reads_flag() || instr.writes_flag()) && o.writes_flag()
                || o.writes().iter().any(|w| reads.contains(w) || writes.contains(w))
        })
    }

    fn issue(&mut self) -> Result<(), SimError> {
        let exec_busy = self.cycle < self.exec_free_at;
        let Some(slot) = self.decode_slot else {
            self.stats.stall_frontend += 1;
            return Ok(());
        };
        if exec_busy {
            if self.exec_is_mem {
                self.stats.stall_mem_wait += 1;
            } else {
                self.stats.stall_exec_busy += 1;
            }
            return Ok(());
        }
        if self.hazard(slot.pc) {
            self.stats.stall_data_hazard += 1;
            return Ok(());
        }
        let instr = &self.prog.instructions[slot.pc];
        let (mut occupancy, mut latency) = self.latency(instr.op, instr.dst);
        let mut is_mem = false;
        if let Some(acc) = memory_access(instr, &self.state) {
            if matches!(instr.op, Opcode::Vld | Opcode::Vst) && acc.addr % 16 != 0 {
                return Err(ExecError::UnalignedVector { pc: slot.pc, addr: acc.addr }.into());
            }
            if acc.kind == AccessKind::Prefetch {
                self.cache.prefetch(acc.addr);
            } else {
                let out = self.cache.access(acc.addr, acc.bytes)?;
                occupancy = out.latency;
                latency = out.latency;
                is_mem = true;
            }
        }
        if instr.op.is_branch() {
            let taken = exec_semantics(instr, slot.pc, &self.state)?.next_pc != slot.pc + 1;
            if self.fetch_waiting_on == Some(slot.seq) {
                self.fetch_waiting_on = None;
                if taken {
                    self.fetch_pc = instr.target_index().expect("validated branch");
                    self.fetch_resume_at = self.cycle + self.cfg.branch_penalty;
                } else {
                    self.fetch_pc = slot.pc + 1;
                }
            }
        }
        self.exec_free_at = self.cycle + occupancy;
        self.exec_owner = Some(slot.seq);
        self.exec_is_mem = is_mem;
        self.queue.push_back(Slot { done_at: self.cycle + latency, ..slot });
        self.decode_slot = None;
        self.stats.busy_cycles += 1;
        Ok(())
    }

    fn decode(&mut self) {
        if self.decode_slot.is_none() {
            if let Some(slot) = self.fetch_slot.take() {
                if self.sparce {
                    for reg in self.prog.instructions[slot.pc].writes() {
                        self.sprf.mark_inflight(reg);
                    }
                }
                self.decode_slot = Some(slot);
            }
        }
    }

    fn check_finite(&self, pc: usize) -> Result<(), SimError> {
        if !self.cfg.trap_nonfinite {
            return Ok(());
        }
        for reg in self.prog.instructions[pc].reads() {
            let finite = match self.state.get(reg) {
                RegValue::Int(_) => true,
                RegValue::Fp(v) => v.is_finite(),
                RegValue::Vec(v) => v.iter().all(|x| x.is_finite()),
            };
            if !finite {
                return Err(SimError::NonFinite { pc, reg });
            }
        }
        Ok(())
    }

    fn count_removed(&mut self, pc: usize) {
        let op = self.prog.instructions[pc].op;
        if op.is_load() {
            self.stats.loads_skipped += 1;
        }
        if op.is_mac() {
            self.stats.fmla_skipped += 1;
        }
    }

    /// Marks `[from, to)` as skipped at fetch.
    fn skip_range(&mut self, from: usize, to: usize) -> Result<(), SimError> {
        let to = to.min(self.prog.len());
        for pc in from..to {
            self.check_finite(pc)?;
            self.count_removed(pc);
        }
        self.stats.skipped_at_fetch += to.saturating_sub(from) as u64;
        self.record(TraceEvent::Skip { cycle: self.cycle, from, to });
        Ok(())
    }

    fn squash(&mut self, region: u64) -> Result<(), SimError> {
        let mut removed = Vec::new();
        if let Some(s) = self.fetch_slot.filter(|s| s.region == Some(region)) {
            self.fetch_slot = None;
            removed.push((s, false));
        }
        if let Some(s) = self.decode_slot.filter(|s| s.region == Some(region)) {
            self.decode_slot = None;
            removed.push((s, true));
        }
        let mut kept = VecDeque::with_capacity(self.queue.len());
        for s in self.queue.drain(..) {
            if s.region == Some(region) {
                removed.push((s, true));
            } else {
                kept.push_back(s);
            }
        }
        self.queue = kept;
        for (s, decoded) in removed {
            self.check_finite(s.pc)?;
            if decoded && self.sparce {
                for reg in self.prog.instructions[s.pc].writes() {
                    self.sprf.unmark_inflight(reg);
                }
            }
            if self.exec_owner == Some(s.seq) && self.exec_free_at > self.cycle + 1 {
                self.exec_free_at = self.cycle + 1;
            }
            if self.fetch_waiting_on == Some(s.seq) {
                self.fetch_waiting_on = None;
            }
            self.count_removed(s.pc);
            self.stats.squashed += 1;
            self.record(TraceEvent::Squash { cycle: self.cycle, pc: s.pc });
        }
        Ok(())
    }

    fn open_region(&mut self, e: &SasaEntry) {
        let (start, end) = e.span();
        self.regions.push(SkippableRegion {
            id: self.next_region,
            start,
            end,
            condition: e.condition,
            status: RegionStatus::Pending,
            fetch_done: false,
        });
        self.next_region += 1;
        self.stats.regions_entered += 1;
    }

    /// After fetch lands on `target` by skipping, applies the entry whose
    /// precedingPC is the last skipped instruction, if any.
    /// Like `eval_condition`, but the fetched, undecoded instruction (not yet
    /// marked in flight) also counts as a pending writer.
    fn eval_guarded(&self, cond: &SkipCondition) -> Tri {
        let guard = self.fetch_slot.map(|s| self.prog.instructions[s.pc].writes()).unwrap_or_default();
        if cond.registers().iter().any(|r| guard.contains(r)) {
            Tri::Unknown
        } else {
            eval_condition(cond, &self.sprf)
        }
    }

    fn follow_chain(&mut self, mut target: usize) -> Result<usize, SimError> {
        while target > 0 {
            let Some(e) = self.table.lookup(target - 1).copied() else { break };
            self.stats.sasa_hits += 1;
            let verdict = self.eval_guarded(&e.condition);
            match (verdict, self.cfg.psru_policy) {
                (_, PsruPolicy::ExecuteAll) | (Tri::False, _) => break,
                (Tri::True, PsruPolicy::Normal) => {
                    let next = target + e.insts_to_skip;
                    self.skip_range(target, next)?;
                    target = next;
                }
                _ => {
                    self.open_region(&e);
                    break;
                }
            }
        }
        Ok(target)
    }

    fn in_flight_in(&self, region: u64) -> bool {
        self.fetch_slot.iter().chain(self.decode_slot.iter()).chain(self.queue.iter()).any(|s| s.region == Some(region))
    }

    fn resolve_regions(&mut self) -> Result<(), SimError> {
        let mut i = 0;
        while i < self.regions.len() {
            let r = self.regions[i].clone();
            let verdict = match self.cfg.psru_policy {
                PsruPolicy::ExecuteAll => Tri::False,
                _ => self.eval_guarded(&r.condition),
            };
            match verdict {
                Tri::True => {
                    self.regions.remove(i);
                    self.stats.regions_resolved_skip += 1;
                    self.squash(r.id)?;
                    if !r.fetch_done && r.contains(self.fetch_pc) {
                        let from = self.fetch_pc;
                        self.skip_range(from, r.end + 1)?;
                        self.fetch_pc = self.follow_chain(r.end + 1)?;
                    }
                }
                Tri::False => {
                    self.regions.remove(i);
                    self.stats.regions_aborted_execute += 1;
                }
                Tri::Unknown if r.fetch_done && !self.in_flight_in(r.id) => {
                    self.regions.remove(i);
                    self.stats.regions_aborted_execute += 1;
                }
                Tri::Unknown => i += 1,
            }
        }
        Ok(())
    }

    fn fetch(&mut self) -> Result<(), SimError> {
        if self.sparce {
            self.resolve_regions()?;
        }
        if self.fetch_stopped
            || self.fetch_waiting_on.is_some()
            || self.cycle < self.fetch_resume_at
            || self.fetch_slot.is_some()
        {
            return Ok(());
        }
        let pc = self.fetch_pc;
        if pc >= self.prog.len() {
            self.fetch_stopped = true;
            return Ok(());
        }
        let instr = &self.prog.instructions[pc];
        let mut tag = None;
        for r in self.regions.iter_mut().filter(|r| !r.fetch_done) {
            if r.contains(pc) {
                tag = Some(r.id);
            } else {
                r.fetch_done = true;
            }
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.fetch_slot = Some(Slot { seq, pc, region: tag, done_at: 0 });
        self.stats.fetched += 1;
        self.record(TraceEvent::Fetch { cycle: self.cycle, pc });
        let mut next = pc + 1;
        match instr.op {
            op if op.is_branch() => self.fetch_waiting_on = Some(seq),
            Opcode::Halt => self.fetch_stopped = true,
            _ if self.sparce => {
                let decision = psru_decide(pc, &self.table, &self.sprf, None, &instr.writes());
                let action = match (decision.action, self.cfg.psru_policy) {
                    (PsruAction::Skip(_) | PsruAction::EnterPending(_), PsruPolicy::ExecuteAll) => PsruAction::Normal,
                    (PsruAction::Skip(e), PsruPolicy::DeferAll) => PsruAction::EnterPending(e),
                    (a, _) => a,
                };
                if self.table.lookup(pc).is_some() {
                    self.stats.sasa_hits += 1;
                }
                match action {
                    PsruAction::Skip(e) => {
                        let to = pc + 1 + e.insts_to_skip;
                        self.skip_range(pc + 1, to)?;
                        next = self.follow_chain(to)?;
                    }
                    PsruAction::EnterPending(e) => self.open_region(&e),
                    _ => {}
                }
            }
            _ => {}
        }
        self.fetch_pc = next;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::parse_program;

    fn run(text: &str, mode: Mode) -> SimResult {
        let p = parse_program(text).unwrap();
        let cfg = SimConfig { trace: true, ..SimConfig::default() };
        simulate(&p, MachineState::with_program(&p), &cfg, mode).unwrap()
    }

    #[test]
    fn straight_line_timing() {
        // fetch 0, decode 1, issue 2 (1 cycle), commit 3; HALT one behind.
        let r = run("MOV r1, #5\nHALT", Mode::Baseline);
        assert_eq!(r.state.int_regs[1], 5);
        assert_eq!(r.stats.executed, 2);
        assert_eq!(r.stats.cycles, 5);
        assert_eq!(r.stats.cycles, r.stats.busy_cycles + r.stats.stall_cycles());
    }

    #[test]
    fn raw_hazard_waits_for_commit() {
        let r = run("MOV f1, #2.0\nFMUL f2, f1, f1\nFADD f3, f2, f1\nHALT", Mode::Baseline);
        assert_eq!(r.state.fp_regs[3], 6.0);
        assert!(r.stats.stall_data_hazard > 0 || r.stats.stall_exec_busy > 0);
    }

    #[test]
    fn loop_and_branches() {
        let r = run("MOV r1, #3\nloop: SUBS r1, r1, #1\nADD r2, r2, #10\nBNE loop\nHALT", Mode::Baseline);
        assert_eq!(r.state.int_regs[2], 30);
        assert_eq!(r.stats.executed, 1 + 3 * 3 + 1);
        assert_eq!(r.stats.fetched, r.stats.executed);
    }

    #[test]
    fn runaway_program() {
        let p = parse_program("x: B x").unwrap();
        let cfg = SimConfig { cycle_limit: 1000, ..SimConfig::default() };
        assert_eq!(simulate(&p, MachineState::new(), &cfg, Mode::Baseline), Err(SimError::CycleLimit(1000)));
    }

    #[test]
    fn falling_off_the_end_halts() {
        let r = run("MOV r1, #1", Mode::Baseline);
        assert_eq!(r.state.int_regs[1], 1);
        assert_eq!(r.stats.executed, 1);
    }

    #[test]
    fn sasald_is_a_noop_in_baseline() {
        let text = "MOV r9, #0x100\nSASALD [r9], #1\nADD r3, r3, #1\nADD r3, r3, #1\nMOV r1, #0\nADD r2, r2, #1\nHALT\n.sasa t @ 0x100: {pc=4, cond=r1, len=1}";
        let b = run(text, Mode::Baseline);
        assert_eq!(b.state.int_regs[2], 1);
        let s = run(text, Mode::Sparce);
        // r1 is still in flight when pc 2 is fetched, and then turns out zero.
        assert_eq!(s.state.int_regs[2], 0);
        assert_eq!(s.stats.executed + s.stats.skipped_at_fetch + s.stats.squashed, b.stats.executed);
    }

    #[test]
    fn chained_entry_sees_writer_in_fetch_slot() {
        // After skipping pc 7, the entry at pc 7 chains; its condition r2 is
        // rewritten by pc 6, which sits in the fetch slot at that moment.
        let text = "MOV r9, #0x100\nSASALD [r9], #2\nMOV r1, #0\nMOV r2, #0\nADD r5, r5, #1\nADD r5, r5, #1\n\
                    MOV r2, #5\nADD r3, r3, #1\nADD r4, r4, #1\nHALT\n\
                    .sasa t @ 0x100: {pc=6, cond=r1, len=1} {pc=7, cond=r2, len=1}";
        let s = run(text, Mode::Sparce);
        assert_eq!(s.state.int_regs[3], 0);
        assert_eq!(s.state.int_regs[4], 1);
        assert_eq!(s.stats.skipped_at_fetch + s.stats.squashed, 1);
    }

    #[test]
    fn pending_region_waits_for_writer_stuck_in_fetch() {
        // FMUL holds the execute unit, so pc 7 sits in the fetch slot while its region is pending.
        let text = "MOV r9, #0x100\nSASALD [r9], #1\nMOV r2, #0\nADD r5, r5, #1\nADD r5, r5, #1\nFMUL f9, f9, f9\n\
                    ADD r5, r5, #1\nMOV r2, #5\nADD r3, r3, #1\nHALT\n\
                    .sasa t @ 0x100: {pc=7, cond=r2, len=1}";
        let s = run(text, Mode::Sparce);
        assert_eq!(s.state.int_regs[3], 1);
        assert_eq!(s.stats.regions_aborted_execute, 1);
    }

    #[test]
    fn config_round_trip() {
        let cfg: SimConfig = serde_json::from_str(r#"{"l1_miss": 50, "fadd_lat": 5}"#).unwrap();
        assert_eq!(cfg.cache.miss_latency, 50);
        assert_eq!(cfg.fadd_lat, 5);
        assert_eq!(cfg.fmla_lat, 4);
    }
}
