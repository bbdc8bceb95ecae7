//! Sparsity register file, sparse value checker, SASA table and the
//! fetch-stage skip logic (PSRU).

use std::collections::BTreeMap;

use thiserror::Error;

use crate::isa::{Reg, RegFile, LANES, NUM_REGS};
use crate::machine::{Memory, RegValue};

pub const SASA_ENTRY_BYTES: usize = 24;
pub const DEFAULT_SASA_CAPACITY: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SparceError {
    #[error("SVC commit of {0} without an in-flight writer")]
    CommitWithoutInflight(Reg),
    #[error("SASA table of {size} entries exceeds capacity {capacity}")]
    Capacity { size: usize, capacity: usize },
    #[error("SASA entry {index}: {reason}")]
    Malformed { index: usize, reason: String },
}

/// One condition term: true when every lane in `mask` of `reg` is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Term {
    pub reg: Reg,
    pub mask: u8,
}

impl Term {
    pub fn full(reg: Reg) -> Self {
        Term { reg, mask: reg.full_mask() }
    }

    pub fn lane(reg: Reg, lane: u8) -> Self {
        Term { reg, mask: 1 << lane }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Combiner {
    Single,
    Or,
    And,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SkipCondition {
    pub term1: Term,
    pub term2: Option<Term>,
    pub combiner: Combiner,
}

impl SkipCondition {
    pub fn single(t: Term) -> Self {
        SkipCondition { term1: t, term2: None, combiner: Combiner::Single }
    }

    pub fn or(a: Term, b: Term) -> Self {
        SkipCondition { term1: a, term2: Some(b), combiner: Combiner::Or }
    }

    pub fn and(a: Term, b: Term) -> Self {
        SkipCondition { term1: a, term2: Some(b), combiner: Combiner::And }
    }

    pub fn terms(&self) -> impl Iterator<Item = Term> + '_ {
        std::iter::once(self.term1).chain(self.term2)
    }

    pub fn registers(&self) -> Vec<Reg> {
        let mut regs: Vec<Reg> = self.terms().map(|t| t.reg).collect();
        regs.dedup();
        regs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SasaEntry {
    pub preceding_pc: usize,
    pub condition: SkipCondition,
    pub insts_to_skip: usize,
}

impl SasaEntry {
    /// First and last PC of the region this entry skips.
    pub fn span(&self) -> (usize, usize) {
        (self.preceding_pc + 1, self.preceding_pc + self.insts_to_skip)
    }
}

fn file_code(f: RegFile) -> u64 {
    match f {
        RegFile::Int => 0,
        RegFile::Fp => 1,
        RegFile::Vec => 2,
    }
}

fn encode_term(t: &Term) -> u64 {
    file_code(t.reg.file) | (t.reg.index as u64) << 2 | (t.mask as u64 & 0xF) << 8
}

pub fn encode_condition(c: &SkipCondition) -> u64 {
    let comb = match c.combiner {
        Combiner::Single => 0,
        Combiner::Or => 1,
        Combiner::And => 2,
    };
    let mut w = comb | encode_term(&c.term1) << 2;
    if let Some(t2) = &c.term2 {
        w |= encode_term(t2) << 16;
    }
    w
}

fn decode_term(bits: u64) -> Result<Term, String> {
    let file = match bits & 0b11 {
        0 => RegFile::Int,
        1 => RegFile::Fp,
        2 => RegFile::Vec,
        _ => return Err("bad register file code 3".into()),
    };
    let index = ((bits >> 2) & 0x3F) as usize;
    if index >= NUM_REGS {
        return Err(format!("register index {} out of range", index));
    }
    let mask = ((bits >> 8) & 0xF) as u8;
    let reg = Reg { file, index: index as u8 };
    if mask == 0 {
        return Err("empty lane mask".into());
    }
    if mask & !reg.full_mask() != 0 {
        return Err(format!("lane mask {:#x} exceeds {}", mask, reg));
    }
    Ok(Term { reg, mask })
}

pub fn decode_condition(w: u64) -> Result<SkipCondition, String> {
    if w & !0x0FFF_3FFF != 0 {
        return Err(format!("reserved condition bits set in {:#x}", w));
    }
    let term1 = decode_term((w >> 2) & 0xFFF)?;
    match w & 0b11 {
        0 => {
            if (w >> 16) != 0 {
                return Err("SINGLE condition carries a second term".into());
            }
            Ok(SkipCondition::single(term1))
        }
        1 => Ok(SkipCondition::or(term1, decode_term((w >> 16) & 0xFFF)?)),
        2 => Ok(SkipCondition::and(term1, decode_term((w >> 16) & 0xFFF)?)),
        _ => Err("bad combiner code 3".into()),
    }
}

pub fn encode_entries(entries: &[SasaEntry]) -> Vec<u8> {
    let mut out = Vec::with_capacity(entries.len() * SASA_ENTRY_BYTES);
    for e in entries {
        out.extend_from_slice(&(e.preceding_pc as u64).to_le_bytes());
        out.extend_from_slice(&encode_condition(&e.condition).to_le_bytes());
        out.extend_from_slice(&(e.insts_to_skip as u64).to_le_bytes());
    }
    out
}

pub fn decode_entries(bytes: &[u8]) -> Result<Vec<SasaEntry>, SparceError> {
    let word = |i: usize| u64::from_le_bytes(bytes[i * 8..i * 8 + 8].try_into().unwrap());
    (0..bytes.len() / SASA_ENTRY_BYTES)
        .map(|index| {
            let condition = decode_condition(word(index * 3 + 1)).map_err(|reason| SparceError::Malformed { index, reason })?;
            let insts_to_skip = word(index * 3 + 2) as usize;
            if insts_to_skip == 0 {
                return Err(SparceError::Malformed { index, reason: "instsToSkip must be positive".into() });
            }
            Ok(SasaEntry { preceding_pc: word(index * 3) as usize, condition, insts_to_skip })
        })
        .collect()
}

/// Zero-lane mask of a register value; ±0.0 both count as zero.
pub fn svc_check(value: &RegValue) -> u8 {
    match value {
        RegValue::Int(v) => u8::from(*v == 0),
        RegValue::Fp(v) => u8::from(*v == 0.0),
        RegValue::Vec(v) => (0..LANES).filter(|&k| v[k] == 0.0).fold(0, |m, k| m | 1 << k),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SpRFEntry {
    pub is_sparse: u8,
    /// Number of decoded, uncommitted writers of the register.
    pub inflight: u32,
}

impl SpRFEntry {
    pub fn in_flight(&self) -> bool {
        self.inflight > 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpRF {
    entries: [[SpRFEntry; NUM_REGS]; 3],
}

impl Default for SpRF {
    fn default() -> Self {
        SpRF { entries: [[SpRFEntry::default(); NUM_REGS]; 3] }
    }
}

impl SpRF {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, reg: Reg) -> SpRFEntry {
        self.entries[file_code(reg.file) as usize][reg.index as usize]
    }

    fn entry_mut(&mut self, reg: Reg) -> &mut SpRFEntry {
        &mut self.entries[file_code(reg.file) as usize][reg.index as usize]
    }

    pub fn mark_inflight(&mut self, reg: Reg) {
        self.entry_mut(reg).inflight += 1;
    }

    /// Drops one in-flight writer without updating isSparse (squash).
    pub fn unmark_inflight(&mut self, reg: Reg) {
        let e = self.entry_mut(reg);
        e.inflight = e.inflight.saturating_sub(1);
    }

    pub fn svc_commit(&mut self, reg: Reg, value: &RegValue) -> Result<(), SparceError> {
        let e = self.entry_mut(reg);
        if e.inflight == 0 {
            return Err(SparceError::CommitWithoutInflight(reg));
        }
        e.inflight -= 1;
        e.is_sparse = svc_check(value);
        Ok(())
    }

    /// Sets isSparse directly, used to seed the SpRF from architectural state.
    pub fn set_sparse(&mut self, reg: Reg, mask: u8) {
        self.entry_mut(reg).is_sparse = mask;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tri {
    True,
    False,
    Unknown,
}

pub fn eval_condition(cond: &SkipCondition, sprf: &SpRF) -> Tri {
    if cond.terms().any(|t| sprf.get(t.reg).in_flight()) {
        return Tri::Unknown;
    }
    let holds = |t: Term| sprf.get(t.reg).is_sparse & t.mask == t.mask;
    let v = match (cond.combiner, cond.term2) {
        (Combiner::Or, Some(t2)) => holds(cond.term1) || holds(t2),
        (Combiner::And, Some(t2)) => holds(cond.term1) && holds(t2),
        _ => holds(cond.term1),
    };
    if v {
        Tri::True
    } else {
        Tri::False
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SasaTable {
    pub capacity: usize,
    entries: BTreeMap<usize, SasaEntry>,
}

impl SasaTable {
    pub fn new(capacity: usize) -> Self {
        SasaTable { capacity, entries: BTreeMap::new() }
    }

    /// Replaces the table contents. A later entry for the same precedingPC wins.
    pub fn load(&mut self, entries: &[SasaEntry]) -> Result<(), SparceError> {
        if entries.len() > self.capacity {
            return Err(SparceError::Capacity { size: entries.len(), capacity: self.capacity });
        }
        self.entries = entries.iter().map(|e| (e.preceding_pc, *e)).collect();
        Ok(())
    }

    pub fn lookup(&self, pc: usize) -> Option<&SasaEntry> {
        self.entries.get(&pc)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &SasaEntry> {
        self.entries.values()
    }
}

/// SASA-LD: replaces `table` with `size` entries read from `memory` at `base`.
pub fn sasa_load(table: &mut SasaTable, memory: &Memory, base: u64, size: usize) -> Result<(), SparceError> {
    if size > table.capacity {
        return Err(SparceError::Capacity { size, capacity: table.capacity });
    }
    let mut bytes = vec![0; size * SASA_ENTRY_BYTES];
    memory.read(base, &mut bytes);
    let entries = decode_entries(&bytes)?;
    table.load(&entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionStatus {
    Pending,
    ResolvedSkip,
    ResolvedExecute,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippableRegion {
    pub id: u64,
    pub start: usize,
    pub end: usize,
    pub condition: SkipCondition,
    pub status: RegionStatus,
    /// Set once fetch has moved outside the region.
    pub fetch_done: bool,
}

impl SkippableRegion {
    pub fn contains(&self, pc: usize) -> bool {
        (self.start..=self.end).contains(&pc)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PsruAction {
    Normal,
    /// Skip the region; `next_fetch_pc` points past it.
    Skip(SasaEntry),
    /// Condition unknown: fetch continues into a pending region.
    EnterPending(SasaEntry),
    /// The pending region containing `pc` resolved true; `pc` is not fetched.
    ResolveSkip,
    /// The pending region containing `pc` resolved false.
    ResolveExecute,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PsruDecision {
    pub next_fetch_pc: usize,
    pub action: PsruAction,
}

/// Fetch-stage decision for `pc`. `guard` lists registers written by the
/// instruction at `pc` itself, which has not reached decode yet; a condition on
/// any of them is treated as unknown.
pub fn psru_decide(
    pc: usize,
    table: &SasaTable,
    sprf: &SpRF,
    active: Option<&SkippableRegion>,
    guard: &[Reg],
) -> PsruDecision {
    if let Some(r) = active.filter(|r| r.status == RegionStatus::Pending && r.contains(pc)) {
        match eval_condition(&r.condition, sprf) {
            Tri::True => return PsruDecision { next_fetch_pc: r.end + 1, action: PsruAction::ResolveSkip },
            Tri::False => {
                if table.lookup(pc).is_none() {
                    return PsruDecision { next_fetch_pc: pc + 1, action: PsruAction::ResolveExecute };
                }
            }
            Tri::Unknown => {}
        }
    }
    match table.lookup(pc) {
        None => PsruDecision { next_fetch_pc: pc + 1, action: PsruAction::Normal },
        Some(e) => {
            let guarded = e.condition.registers().iter().any(|r| guard.contains(r));
            let verdict = if guarded { Tri::Unknown } else { eval_condition(&e.condition, sprf) };
            match verdict {
                Tri::True => PsruDecision { next_fetch_pc: pc + 1 + e.insts_to_skip, action: PsruAction::Skip(*e) },
                Tri::Unknown => PsruDecision { next_fetch_pc: pc + 1, action: PsruAction::EnterPending(*e) },
                Tri::False => PsruDecision { next_fetch_pc: pc + 1, action: PsruAction::Normal },
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(i: u8) -> Reg {
        Reg::int(i)
    }

    #[test]
    fn svc_examples() {
        assert_eq!(svc_check(&RegValue::Fp(0.0)), 0b0001);
        assert_eq!(svc_check(&RegValue::Vec([0.0, 1.5, 0.0, 0.0])), 0b1101);
        assert_eq!(svc_check(&RegValue::Vec([-0.0; 4])), 0b1111);
        assert_eq!(svc_check(&RegValue::Int(104)), 0);
    }

    #[test]
    fn commit_requires_inflight() {
        let mut s = SpRF::new();
        assert_eq!(s.svc_commit(Reg::vec(12), &RegValue::Vec([0.0; 4])), Err(SparceError::CommitWithoutInflight(Reg::vec(12))));
        s.mark_inflight(Reg::vec(12));
        s.svc_commit(Reg::vec(12), &RegValue::Vec([0.0; 4])).unwrap();
        assert_eq!(s.get(Reg::vec(12)), SpRFEntry { is_sparse: 0b1111, inflight: 0 });
    }

    #[test]
    fn later_writer_decides() {
        let mut s = SpRF::new();
        let f2 = Reg::fp(2);
        s.mark_inflight(f2);
        s.mark_inflight(f2);
        s.svc_commit(f2, &RegValue::Fp(0.0)).unwrap();
        assert!(s.get(f2).in_flight());
        s.svc_commit(f2, &RegValue::Fp(1.0)).unwrap();
        assert_eq!(s.get(f2), SpRFEntry { is_sparse: 0, inflight: 0 });
    }

    #[test]
    fn strict_unknown() {
        let mut s = SpRF::new();
        s.set_sparse(r(0), 1);
        s.mark_inflight(r(1));
        let c = SkipCondition::or(Term::full(r(0)), Term::full(r(1)));
        assert_eq!(eval_condition(&c, &s), Tri::Unknown);
    }

    #[test]
    fn lane_terms() {
        let mut s = SpRF::new();
        s.set_sparse(Reg::vec(12), 0b0010);
        assert_eq!(eval_condition(&SkipCondition::single(Term::lane(Reg::vec(12), 1)), &s), Tri::True);
        s.set_sparse(Reg::vec(8), 0b0111);
        assert_eq!(eval_condition(&SkipCondition::single(Term::full(Reg::vec(8))), &s), Tri::False);
    }

    #[test]
    fn binary_layout_bits() {
        let c = SkipCondition::or(Term::full(Reg::fp(3)), Term { reg: Reg::vec(12), mask: 0b0101 });
        let w = encode_condition(&c);
        assert_eq!(w & 0b11, 1);
        assert_eq!((w >> 2) & 0b11, 1);
        assert_eq!((w >> 4) & 0x3F, 3);
        assert_eq!((w >> 10) & 0xF, 1);
        assert_eq!((w >> 16) & 0b11, 2);
        assert_eq!((w >> 18) & 0x3F, 12);
        assert_eq!((w >> 24) & 0xF, 0b0101);
        assert_eq!(decode_condition(w), Ok(c));
    }

    #[test]
    fn malformed_encodings() {
        assert!(decode_condition(3).is_err());
        assert!(decode_condition(0).is_err(), "empty mask");
        let bad_file = 0b11 << 2 | 1 << 10;
        assert!(decode_condition(bad_file).is_err());
        let scalar_wide_mask = 0b1111 << 10;
        assert!(decode_condition(scalar_wide_mask).is_err());
    }

    #[test]
    fn table_load_and_capacity() {
        let e = |pc| SasaEntry { preceding_pc: pc, condition: SkipCondition::single(Term::full(r(0))), insts_to_skip: 1 };
        let mut mem = Memory::new();
        let entries: Vec<_> = (0..21).map(e).collect();
        mem.write(0x100, &encode_entries(&entries));
        let mut t = SasaTable::new(20);
        assert_eq!(sasa_load(&mut t, &mem, 0x100, 21), Err(SparceError::Capacity { size: 21, capacity: 20 }));
        sasa_load(&mut t, &mem, 0x100, 12).unwrap();
        assert_eq!(t.len(), 12);
        sasa_load(&mut t, &mem, 0x100, 0).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn psru_skip_and_pending() {
        let entry = SasaEntry {
            preceding_pc: 5,
            condition: SkipCondition::or(Term::full(r(0)), Term::full(r(1))),
            insts_to_skip: 2,
        };
        let mut t = SasaTable::new(20);
        t.load(&[entry]).unwrap();
        let mut s = SpRF::new();
        s.set_sparse(r(0), 1);
        let d = psru_decide(5, &t, &s, None, &[]);
        assert_eq!(d, PsruDecision { next_fetch_pc: 8, action: PsruAction::Skip(entry) });
        assert_eq!(psru_decide(4, &t, &s, None, &[]).action, PsruAction::Normal);
        assert_eq!(psru_decide(5, &t, &s, None, &[r(1)]).action, PsruAction::EnterPending(entry));

        s.mark_inflight(r(1));
        let d = psru_decide(5, &t, &s, None, &[]);
        assert_eq!(d, PsruDecision { next_fetch_pc: 6, action: PsruAction::EnterPending(entry) });

        let mut region = SkippableRegion {
            id: 0,
            start: 6,
            end: 7,
            condition: entry.condition,
            status: RegionStatus::Pending,
            fetch_done: false,
        };
        assert_eq!(psru_decide(7, &t, &s, Some(&region), &[]).action, PsruAction::Normal);
        s.unmark_inflight(r(1));
        assert_eq!(psru_decide(7, &t, &s, Some(&region), &[]), PsruDecision { next_fetch_pc: 8, action: PsruAction::ResolveSkip });
        s.set_sparse(r(0), 0);
        assert_eq!(psru_decide(7, &t, &s, Some(&region), &[]).action, PsruAction::ResolveExecute);
        region.status = RegionStatus::ResolvedExecute;
        assert_eq!(psru_decide(7, &t, &s, Some(&region), &[]).action, PsruAction::Normal);
    }
}
