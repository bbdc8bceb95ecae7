//! Static redundancy analysis: from programmer-marked sparse loads, find the
//! instructions that become no-ops (or dead) when those loads return zero,
//! group them into SASA entries and emit an annotated program.
//!
//! Rules:
//! - R1: a multiply-accumulate (FMLA, VFMLA, or `FADD d, d, x`) whose
//!   multiplier / addend is known zero is a no-op.
//! - R2: a side-effect-free register write whose every use before
//!   redefinition is skippable under conditions implied by some condition C
//!   is itself skippable under C.
//! - R3: an entry whose condition reads a register written by a skippable
//!   instruction is kept only if that instruction's condition implies it.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::isa::{align_up, fmt_condition, Instruction, Opcode, Operand, Program, Reg, RegFile, SasaBlock, Target};
use crate::sparce::{Combiner, SasaEntry, SkipCondition, Term, DEFAULT_SASA_CAPACITY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Granularity {
    Lane,
    Full,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum MarkerTarget {
    /// Label name; a trailing `*` matches every label with that prefix.
    Label(String),
    Pc(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SparseMarker {
    pub target: MarkerTarget,
    pub granularity: Granularity,
}

impl SparseMarker {
    pub fn label(name: &str, granularity: Granularity) -> Self {
        SparseMarker { target: MarkerTarget::Label(name.to_string()), granularity }
    }

    pub fn pc(pc: usize, granularity: Granularity) -> Self {
        SparseMarker { target: MarkerTarget::Pc(pc), granularity }
    }
}

impl FromStr for SparseMarker {
    type Err = String;

    /// `name`, `name:lane`, `name:full`, or a bare instruction index.
    fn from_str(s: &str) -> Result<Self, String> {
        let (name, gran) = match s.rsplit_once(':') {
            Some((n, "lane")) => (n, Granularity::Lane),
            Some((n, "full")) => (n, Granularity::Full),
            Some((_, g)) => return Err(format!("unknown granularity `{}` (expected lane or full)", g)),
            None => (s, Granularity::Lane),
        };
        if name.is_empty() {
            return Err("empty marker".into());
        }
        let target = match name.parse::<usize>() {
            Ok(pc) => MarkerTarget::Pc(pc),
            Err(_) => MarkerTarget::Label(name.to_string()),
        };
        Ok(SparseMarker { target, granularity: gran })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seed {
    pub pc: usize,
    pub reg: Reg,
    pub granularity: Granularity,
    /// Conditions meaning "this load returned zero": per lane plus full register.
    pub terms: Vec<Term>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    R1,
    R2,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Redundancy {
    pub condition: SkipCondition,
    pub rule: Rule,
    /// Seed loads whose registers appear in the condition.
    pub seeds: Vec<usize>,
}

pub type RedundancyMap = BTreeMap<usize, Redundancy>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Warning {
    NoPrecedingPc { start: usize },
    PrecedingBranch { pc: usize },
    WritesOwnCondition { pc: usize, writer: usize },
    Spacing { pc: usize, producer: usize },
    Unsound { pc: usize, writer: usize },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::NoPrecedingPc { start } => {
                write!(f, "pc {}: skippable run starts at the program entry; no entry emitted", start)
            }
            Warning::PrecedingBranch { pc } => {
                write!(f, "pc {}: instruction before the skippable run is a branch; entry dropped", pc)
            }
            Warning::WritesOwnCondition { pc, writer } => {
                write!(f, "pc {}: region instruction at pc {} writes a condition register; entry dropped", pc, writer)
            }
            Warning::Spacing { pc, producer } => write!(
                f,
                "pc {}: condition produced at pc {} fewer than 3 instructions earlier; region is squash-prone",
                pc, producer
            ),
            Warning::Unsound { pc, writer } => write!(
                f,
                "pc {}: condition reads a register skipped at pc {} under a non-implying condition; entry dropped",
                pc, writer
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnnotateError {
    #[error("marker `{0}` matches no label")]
    UnknownMarker(String),
    #[error("marker at pc {pc} names `{text}`, which is not a load")]
    NotALoad { pc: usize, text: String },
    #[error("{needed} SASA entries exceed capacity {capacity}; would drop (largest first): {}", fmt_entries(.dropped))]
    Capacity { needed: usize, capacity: usize, dropped: Vec<SasaEntry> },
    #[error("no free integer register for the SASA base address")]
    NoFreeRegister,
}

fn fmt_entries(entries: &[SasaEntry]) -> String {
    entries
        .iter()
        .map(|e| format!("{{pc={}, cond={}, len={}}}", e.preceding_pc, fmt_condition(&e.condition), e.insts_to_skip))
        .collect::<Vec<_>>()
        .join(" ")
}

// ---------------------------------------------------------------------------
// Condition algebra
// ---------------------------------------------------------------------------

fn clauses(c: &SkipCondition) -> Vec<Vec<Term>> {
    match (c.combiner, c.term2) {
        (Combiner::Or, Some(t2)) => vec![vec![c.term1], vec![t2]],
        (Combiner::And, Some(t2)) => vec![vec![c.term1, t2]],
        _ => vec![vec![c.term1]],
    }
}

fn clause_implies(a: &[Term], b: &[Term]) -> bool {
    b.iter().all(|t| {
        let mask = a.iter().filter(|s| s.reg == t.reg).fold(0u8, |m, s| m | s.mask);
        mask & t.mask == t.mask
    })
}

/// Sufficient test for `a ⇒ b` over monotone conditions.
pub fn implies(a: &SkipCondition, b: &SkipCondition) -> bool {
    let cb = clauses(b);
    clauses(a).iter().all(|ca| cb.iter().any(|x| clause_implies(ca, x)))
}

/// Disjunction of two conditions, if it fits in two terms.
fn either(a: &SkipCondition, b: &SkipCondition) -> Option<SkipCondition> {
    if implies(a, b) {
        return Some(*b);
    }
    if implies(b, a) {
        return Some(*a);
    }
    match (a.combiner, b.combiner) {
        (Combiner::Single, Combiner::Single) => Some(SkipCondition::or(a.term1, b.term1)),
        _ => None,
    }
}

fn either_opt(a: Option<SkipCondition>, b: Option<SkipCondition>) -> Option<SkipCondition> {
    match (a, b) {
        (Some(x), Some(y)) => either(&x, &y).or(Some(x)),
        (x, y) => x.or(y),
    }
}

// ---------------------------------------------------------------------------
// Control flow
// ---------------------------------------------------------------------------

/// Successor PCs; `n` (one past the end) stands for falling off the program.
pub fn successors(program: &Program, pc: usize) -> Vec<usize> {
    let instr = &program.instructions[pc];
    match instr.op {
        Opcode::Halt => vec![],
        Opcode::B => instr.target_index().into_iter().collect(),
        Opcode::Bne | Opcode::Beq => {
            let mut v = vec![pc + 1];
            if let Some(t) = instr.target_index() {
                if t != pc + 1 {
                    v.push(t);
                }
            }
            v
        }
        _ => vec![pc + 1],
    }
}

fn predecessors(program: &Program) -> Vec<Vec<usize>> {
    let mut preds = vec![Vec::new(); program.len()];
    for pc in 0..program.len() {
        for s in successors(program, pc) {
            if s < program.len() {
                preds[s].push(pc);
            }
        }
    }
    preds
}

fn block_leaders(program: &Program) -> BTreeSet<usize> {
    let mut leaders = BTreeSet::from([0]);
    for (pc, instr) in program.instructions.iter().enumerate() {
        if instr.op.is_branch() || instr.op == Opcode::Halt {
            leaders.insert(pc + 1);
        }
        if let Some(t) = instr.target_index() {
            leaders.insert(t);
        }
    }
    leaders
}

// ---------------------------------------------------------------------------
// Seeds
// ---------------------------------------------------------------------------

fn glob_match(pattern: &str, name: &str) -> bool {
    match pattern.strip_suffix('*') {
        Some(prefix) => name.starts_with(prefix),
        None => pattern == name,
    }
}

pub fn find_seeds(program: &Program, markers: &[SparseMarker]) -> Result<Vec<Seed>, AnnotateError> {
    let mut by_pc: BTreeMap<usize, Granularity> = BTreeMap::new();
    for m in markers {
        let pcs: Vec<usize> = match &m.target {
            MarkerTarget::Pc(pc) => vec![*pc],
            MarkerTarget::Label(pat) => {
                let v: Vec<usize> =
                    program.labels.iter().filter(|(name, _)| glob_match(pat, name)).map(|(_, &pc)| pc).collect();
                if v.is_empty() {
                    return Err(AnnotateError::UnknownMarker(pat.clone()));
                }
                v
            }
        };
        for pc in pcs {
            let instr = program.instructions.get(pc);
            if !instr.map(|i| i.op.is_load()).unwrap_or(false) {
                return Err(AnnotateError::NotALoad {
                    pc,
                    text: instr.map(|i| i.to_string()).unwrap_or_else(|| "<end of program>".into()),
                });
            }
            let g = by_pc.entry(pc).or_insert(m.granularity);
            *g = (*g).max(m.granularity);
        }
    }
    Ok(by_pc
        .into_iter()
        .map(|(pc, granularity)| {
            let reg = program.instructions[pc].dst.expect("loads have a destination");
            let mut terms = Vec::new();
            if reg.file == RegFile::Vec && granularity == Granularity::Lane {
                terms.extend((0..4).map(|k| Term::lane(reg, k)));
            }
            terms.push(Term::full(reg));
            Seed { pc, reg, granularity, terms }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Propagation
// ---------------------------------------------------------------------------

const ENTRY_DEF: usize = usize::MAX;

/// For each PC, the definitions of each seed register that reach it.
fn reaching_seed_defs(program: &Program, seed_regs: &BTreeSet<Reg>) -> Vec<BTreeMap<Reg, BTreeSet<usize>>> {
    let n = program.len();
    let preds = predecessors(program);
    let mut entry_state: BTreeMap<Reg, BTreeSet<usize>> = BTreeMap::new();
    for r in seed_regs {
        entry_state.insert(*r, BTreeSet::from([ENTRY_DEF]));
    }
    let mut inn: Vec<BTreeMap<Reg, BTreeSet<usize>>> = vec![BTreeMap::new(); n];
    let out_of = |pc: usize, state: &BTreeMap<Reg, BTreeSet<usize>>| {
        let mut s = state.clone();
        for w in program.instructions[pc].writes() {
            if seed_regs.contains(&w) {
                s.insert(w, BTreeSet::from([pc]));
            }
        }
        s
    };
    let mut changed = true;
    while changed {
        changed = false;
        for pc in 0..n {
            let mut s: BTreeMap<Reg, BTreeSet<usize>> = if pc == 0 { entry_state.clone() } else { BTreeMap::new() };
            for &p in &preds[pc] {
                for (r, defs) in out_of(p, &inn[p]) {
                    s.entry(r).or_default().extend(defs);
                }
            }
            if s != inn[pc] {
                inn[pc] = s;
                changed = true;
            }
        }
    }
    inn
}

struct Analysis<'a> {
    program: &'a Program,
    seeds: &'a [Seed],
    reaching: Vec<BTreeMap<Reg, BTreeSet<usize>>>,
}

impl<'a> Analysis<'a> {
    /// Granularity with which `reg` at `pc` holds marked sparse data, if every reaching definition is a seed load.
    fn seed_granularity(&self, pc: usize, reg: Reg) -> Option<Granularity> {
        let defs = self.reaching[pc].get(&reg)?;
        let mut g = None;
        for d in defs {
            let seed = self.seeds.iter().find(|s| s.pc == *d && s.reg == reg)?;
            g = Some(g.map_or(seed.granularity, |x: Granularity| x.max(seed.granularity)));
        }
        g
    }

    fn seeds_of(&self, pc: usize, cond: &SkipCondition) -> Vec<usize> {
        let mut out = BTreeSet::new();
        for t in cond.terms() {
            if let Some(defs) = self.reaching.get(pc).and_then(|m| m.get(&t.reg)) {
                out.extend(defs.iter().copied().filter(|d| *d != ENTRY_DEF));
            }
        }
        out.into_iter().collect()
    }

    /// R1 conditions, found with a per-block forward pass over zero facts.
    fn rule1(&self) -> RedundancyMap {
        let prog = self.program;
        let leaders = block_leaders(prog);
        let mut rmap = RedundancyMap::new();
        let mut facts: BTreeMap<Reg, SkipCondition> = BTreeMap::new();
        for (pc, instr) in prog.instructions.iter().enumerate() {
            if leaders.contains(&pc) {
                facts.clear();
            }
            let fact = |r: Reg, facts: &BTreeMap<Reg, SkipCondition>| -> Option<SkipCondition> {
                facts.get(&r).copied().or_else(|| self.seed_granularity(pc, r).map(|_| SkipCondition::single(Term::full(r))))
            };
            let src = |i: usize| match instr.srcs.get(i) {
                Some(Operand::Reg(r)) => Some(*r),
                _ => None,
            };
            let cond = match instr.op {
                Opcode::Fmla => either_opt(src(0).and_then(|a| fact(a, &facts)), src(1).and_then(|b| fact(b, &facts))),
                Opcode::Vfmla => {
                    let a = src(0).and_then(|a| fact(a, &facts));
                    let b = match instr.srcs.get(1) {
                        Some(Operand::Lane(b, k)) => facts.get(b).copied().or_else(|| match self.seed_granularity(pc, *b) {
                            Some(Granularity::Lane) => Some(SkipCondition::single(Term::lane(*b, *k))),
                            Some(Granularity::Full) => Some(SkipCondition::single(Term::full(*b))),
                            None => None,
                        }),
                        _ => None,
                    };
                    either_opt(a, b)
                }
                Opcode::Fadd => match (instr.dst, src(0), src(1)) {
                    (Some(d), Some(a), Some(b)) if d == a && d != b => fact(b, &facts),
                    (Some(d), Some(a), Some(b)) if d == b && d != a => fact(a, &facts),
                    _ => None,
                },
                _ => None,
            };
            if let Some(c) = cond {
                if !c.registers().iter().any(|r| instr.writes().contains(r)) {
                    rmap.insert(pc, Redundancy { condition: c, rule: Rule::R1, seeds: self.seeds_of(pc, &c) });
                }
            }
            // Transfer zero facts.
            let new_fact = match (instr.op, instr.dst) {
                (Opcode::Fmul, Some(d)) if d.file != RegFile::Vec => {
                    either_opt(src(0).and_then(|a| fact(a, &facts)), src(1).and_then(|b| fact(b, &facts)))
                }
                (Opcode::Mov, Some(_)) => src(0).and_then(|s| fact(s, &facts)),
                _ => None,
            };
            for w in instr.writes() {
                facts.remove(&w);
                facts.retain(|_, c| !c.registers().contains(&w));
            }
            if let (Some(d), Some(c)) = (instr.dst, new_fact) {
                if !c.registers().contains(&d) {
                    facts.insert(d, c);
                }
            }
        }
        rmap
    }

    /// Uses of `d` written at `pc`, following every path until `d` is redefined.
    /// Registers are dead at program exit; only memory is observable.
    fn uses_of(&self, pc: usize, d: Reg) -> Option<BTreeSet<usize>> {
        let n = self.program.len();
        let mut uses = BTreeSet::new();
        let mut seen = HashSet::new();
        let mut stack: Vec<usize> = successors(self.program, pc);
        while let Some(j) = stack.pop() {
            if j >= n || !seen.insert(j) {
                continue;
            }
            let instr = &self.program.instructions[j];
            if instr.reads().contains(&d) {
                uses.insert(j);
            }
            if instr.writes().contains(&d) {
                continue;
            }
            stack.extend(successors(self.program, j));
        }
        Some(uses)
    }

    /// True if some path from `pc` reaches a use of `d` after a write to one of `regs`.
    fn clobbered_before_use(&self, pc: usize, d: Reg, regs: &[Reg]) -> bool {
        let n = self.program.len();
        let mut seen = HashSet::new();
        let mut stack: Vec<(usize, bool)> = successors(self.program, pc).into_iter().map(|s| (s, false)).collect();
        while let Some((j, clobbered)) = stack.pop() {
            if j >= n || !seen.insert((j, clobbered)) {
                continue;
            }
            let instr = &self.program.instructions[j];
            if clobbered && instr.reads().contains(&d) {
                return true;
            }
            if instr.writes().contains(&d) {
                continue;
            }
            let now = clobbered || instr.writes().iter().any(|w| regs.contains(w));
            stack.extend(successors(self.program, j).into_iter().map(|s| (s, now)));
        }
        false
    }

    fn r2_eligible(instr: &Instruction) -> Option<Reg> {
        let pure = matches!(
            instr.op,
            Opcode::Ld | Opcode::Vld | Opcode::Fmul | Opcode::Fadd | Opcode::Fmla | Opcode::Vfmla | Opcode::Mov
                | Opcode::Add | Opcode::Sub
        );
        if !pure || instr.post_increment().is_some() {
            return None;
        }
        instr.dst
    }

    fn rule2_candidate(&self, pc: usize, rmap: &RedundancyMap) -> Option<SkipCondition> {
        let instr = &self.program.instructions[pc];
        let d = Self::r2_eligible(instr)?;
        let uses = self.uses_of(pc, d)?;
        // A skipped accumulate passes its accumulator through, so it does not kill `d`.
        if uses.is_empty() || uses.iter().any(|u| self.program.instructions[*u].dst == Some(d)) {
            return None;
        }
        let mut use_conds = Vec::new();
        for u in &uses {
            use_conds.push(rmap.get(u)?.condition);
        }
        let mut terms: Vec<Term> = use_conds.iter().flat_map(|c| c.terms().collect::<Vec<_>>()).filter(|t| t.reg != d).collect();
        terms.sort();
        terms.dedup();
        let mut unions: BTreeMap<Reg, u8> = BTreeMap::new();
        for t in &terms {
            *unions.entry(t.reg).or_default() |= t.mask;
        }
        let mut candidates: Vec<SkipCondition> = Vec::new();
        for (i, a) in terms.iter().enumerate() {
            for b in &terms[i + 1..] {
                candidates.push(SkipCondition::or(*a, *b));
            }
        }
        let mut singles = terms.clone();
        singles.sort_by_key(|t| (t.mask.count_ones(), *t));
        candidates.extend(singles.into_iter().map(SkipCondition::single));
        candidates.extend(unions.into_iter().map(|(reg, mask)| SkipCondition::single(Term { reg, mask })));

        candidates.into_iter().find(|c| {
            let regs = c.registers();
            use_conds.iter().all(|cu| implies(c, cu) && cu.registers().iter().all(|r| *r == d || regs.contains(r)))
                && !regs.iter().any(|r| instr.writes().contains(r))
                && !self.clobbered_before_use(pc, d, &regs)
        })
    }
}

/// Fixpoint of R1 and R2 over the program.
pub fn propagate(program: &Program, seeds: &[Seed]) -> RedundancyMap {
    if seeds.is_empty() {
        return RedundancyMap::new();
    }
    let seed_regs: BTreeSet<Reg> = seeds.iter().map(|s| s.reg).collect();
    let analysis = Analysis { program, seeds, reaching: reaching_seed_defs(program, &seed_regs) };
    let mut rmap = analysis.rule1();
    loop {
        let found: Vec<(usize, SkipCondition)> = (0..program.len())
            .filter(|pc| !rmap.contains_key(pc))
            .filter_map(|pc| analysis.rule2_candidate(pc, &rmap).map(|c| (pc, c)))
            .collect();
        if found.is_empty() {
            break;
        }
        for (pc, c) in found {
            rmap.insert(pc, Redundancy { condition: c, rule: Rule::R2, seeds: analysis.seeds_of(pc, &c) });
        }
    }
    rmap
}

// ---------------------------------------------------------------------------
// Region forming
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Regions {
    pub entries: Vec<SasaEntry>,
    pub warnings: Vec<Warning>,
}

fn nearby_producer(program: &Program, preds: &[Vec<usize>], p: usize, regs: &[Reg]) -> Option<usize> {
    let mut frontier = vec![p];
    for _ in 0..3 {
        let mut next = Vec::new();
        for &q in &frontier {
            if program.instructions[q].writes().iter().any(|w| regs.contains(w)) {
                return Some(q);
            }
            next.extend(preds[q].iter().copied());
        }
        next.sort();
        next.dedup();
        frontier = next;
    }
    None
}

pub fn form_regions(program: &Program, rmap: &RedundancyMap) -> Regions {
    let preds = predecessors(program);
    let mut out = Regions::default();
    let mut runs: Vec<(usize, usize, SkipCondition)> = Vec::new();
    for (&pc, r) in rmap {
        match runs.last_mut() {
            Some((_, end, c)) if *end + 1 == pc && *c == r.condition => *end = pc,
            _ => runs.push((pc, pc, r.condition)),
        }
    }
    let mut entries = Vec::new();
    for (start, end, cond) in runs {
        if start == 0 {
            out.warnings.push(Warning::NoPrecedingPc { start });
            continue;
        }
        let p = start - 1;
        let pinstr = &program.instructions[p];
        if pinstr.op.is_branch() || pinstr.op == Opcode::Halt {
            out.warnings.push(Warning::PrecedingBranch { pc: p });
            continue;
        }
        let regs = cond.registers();
        if let Some(w) = (start..=end).find(|&i| program.instructions[i].writes().iter().any(|x| regs.contains(x))) {
            out.warnings.push(Warning::WritesOwnCondition { pc: p, writer: w });
            continue;
        }
        entries.push(SasaEntry { preceding_pc: p, condition: cond, insts_to_skip: end - start + 1 });
    }

    // R3, to a fixpoint: dropping an entry can only remove skippable writers.
    loop {
        let mut skippable: BTreeMap<usize, SkipCondition> = BTreeMap::new();
        for e in &entries {
            let (s, t) = e.span();
            for pc in s..=t {
                skippable.insert(pc, e.condition);
            }
        }
        let bad = entries.iter().position(|e| {
            let regs = e.condition.registers();
            skippable.iter().find(|(pc, c)| {
                program.instructions[**pc].writes().iter().any(|w| regs.contains(w)) && !implies(c, &e.condition)
            }).map(|(pc, _)| {
                out.warnings.push(Warning::Unsound { pc: e.preceding_pc, writer: *pc });
            }).is_some()
        });
        match bad {
            Some(i) => {
                entries.remove(i);
            }
            None => break,
        }
    }

    for e in &entries {
        if let Some(q) = nearby_producer(program, &preds, e.preceding_pc, &e.condition.registers()) {
            out.warnings.push(Warning::Spacing { pc: e.preceding_pc, producer: q });
        }
    }
    out.entries = entries;
    out
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotateOptions {
    pub capacity: usize,
    /// Emit one table per label group, reloaded whenever control reaches that label.
    pub refresh: bool,
}

impl Default for AnnotateOptions {
    fn default() -> Self {
        AnnotateOptions { capacity: DEFAULT_SASA_CAPACITY, refresh: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotated {
    pub program: Program,
    /// Entries with PCs in the annotated program.
    pub entries: Vec<SasaEntry>,
    pub warnings: Vec<Warning>,
    pub rmap: RedundancyMap,
}

fn free_int_register(program: &Program) -> Option<Reg> {
    let mut used = [false; 32];
    for i in &program.instructions {
        for r in i.reads().into_iter().chain(i.writes()) {
            if r.file == RegFile::Int {
                used[r.index as usize] = true;
            }
        }
    }
    (0..32u8).rev().find(|&i| !used[i as usize]).map(Reg::int)
}

fn sort_by_benefit(entries: &[SasaEntry]) -> Vec<SasaEntry> {
    let mut v = entries.to_vec();
    v.sort_by(|a, b| b.insts_to_skip.cmp(&a.insts_to_skip).then(a.preceding_pc.cmp(&b.preceding_pc)));
    v
}

fn capacity_check(entries: &[SasaEntry], capacity: usize) -> Result<(), AnnotateError> {
    if entries.len() > capacity {
        return Err(AnnotateError::Capacity {
            needed: entries.len(),
            capacity,
            dropped: sort_by_benefit(entries).split_off(capacity),
        });
    }
    Ok(())
}

/// Inserts `MOV rX, #addr; SASALD [rX], #n` pairs before the given PCs.
/// Branches to an insertion point land on the inserted pair.
fn insert_loads(program: &Program, inserts: &[(usize, u64, usize)], base: Reg) -> (Program, impl Fn(usize) -> usize) {
    let points: Vec<usize> = inserts.iter().map(|x| x.0).collect();
    let shift_after = points.clone();
    let remap = move |pc: usize| pc + 2 * shift_after.iter().filter(|&&p| p <= pc).count();
    let target_of = |pc: usize| pc + 2 * points.iter().filter(|&&p| p < pc).count();
    let mut out = Program { data: program.data.clone(), sasa_blocks: program.sasa_blocks.clone(), ..Program::default() };
    for (pc, instr) in program.instructions.iter().enumerate() {
        for &(_, addr, n) in inserts.iter().filter(|x| x.0 == pc) {
            out.instructions.push(Instruction::new(Opcode::Mov, Some(base), vec![Operand::Imm(addr as i64)]));
            out.instructions.push(Instruction::new(
                Opcode::SasaLd,
                None,
                vec![Operand::Mem(crate::isa::MemRef { base, offset: 0, post_inc: None }), Operand::Imm(n as i64)],
            ));
        }
        let mut i = instr.clone();
        for s in &mut i.srcs {
            if let Operand::Target(Target::Index(t)) = s {
                *t = target_of(*t);
            }
        }
        out.instructions.push(i);
    }
    for (name, &pc) in &program.labels {
        out.labels.insert(name.clone(), target_of(pc));
    }
    (out, remap)
}

fn shift_entry(e: &SasaEntry, remap: &impl Fn(usize) -> usize) -> SasaEntry {
    SasaEntry { preceding_pc: remap(e.preceding_pc), ..*e }
}

pub fn annotate(program: &Program, markers: &[SparseMarker], opts: &AnnotateOptions) -> Result<Annotated, AnnotateError> {
    let seeds = find_seeds(program, markers)?;
    let rmap = propagate(program, &seeds);
    let Regions { entries, warnings } = form_regions(program, &rmap);
    if entries.is_empty() {
        return Ok(Annotated { program: program.clone(), entries, warnings, rmap });
    }
    let base = free_int_register(program).ok_or(AnnotateError::NoFreeRegister)?;
    let mut addr = align_up(program.data_end(), 64);

    let groups: Vec<(usize, String, Vec<SasaEntry>)> = if opts.refresh {
        let mut heads: BTreeMap<usize, String> = BTreeMap::new();
        for (name, &pc) in &program.labels {
            heads.entry(pc).or_insert_with(|| name.clone());
        }
        let mut g: BTreeMap<usize, (String, Vec<SasaEntry>)> = BTreeMap::new();
        for e in &entries {
            let (head, name) = heads
                .range(..=e.preceding_pc)
                .next_back()
                .map(|(pc, n)| (*pc, n.clone()))
                .unwrap_or((0, "entry".to_string()));
            g.entry(head).or_insert_with(|| (name, Vec::new())).1.push(*e);
        }
        g.into_iter().map(|(pc, (name, es))| (pc, name, es)).collect()
    } else {
        vec![(0, "table".to_string(), entries.clone())]
    };
    for (_, _, es) in &groups {
        capacity_check(es, opts.capacity)?;
    }

    let mut inserts = Vec::new();
    let mut blocks = Vec::new();
    for (pc, name, es) in &groups {
        inserts.push((*pc, addr, es.len()));
        blocks.push((format!("sasa_{}", name), addr, es.clone()));
        addr += align_up((es.len() * crate::sparce::SASA_ENTRY_BYTES) as u64, 64);
    }
    let (mut out, remap) = insert_loads(program, &inserts, base);
    let mut all = Vec::new();
    for (name, addr, es) in blocks {
        let shifted: Vec<SasaEntry> = es.iter().map(|e| shift_entry(e, &remap)).collect();
        all.extend(shifted.iter().copied());
        out.sasa_blocks.push(SasaBlock { name, addr, entries: shifted });
    }
    Ok(Annotated { program: out, entries: all, warnings, rmap })
}
