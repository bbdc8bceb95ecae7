use proptest::prelude::*;
use sparce::harness::{prepare, Prepared};
use sparce::isa::{Opcode, Operand, Program};
use sparce::machine::exec_semantics;
use sparce::pipeline::{simulate, Mode, PsruPolicy, SimConfig, SimResult, TraceEvent};
use sparce::workloads::{golden, Pattern};

const KERNELS: [&str; 4] = ["dot:48", "conv:7x7x3", "gemm:16x4x4:b", "gemm:16x16x4:a"];

fn pattern() -> impl Strategy<Value = Pattern> {
    prop_oneof![
        (0.0f64..0.95).prop_map(Pattern::Uniform),
        (0.0f64..0.95, 1usize..6).prop_map(|(s, l)| Pattern::Block(s, l)),
        (-1.5f64..1.5).prop_map(|m| Pattern::ReluLike { mean: m, std: 1.0 }),
        Just(Pattern::MaxPoolBackprop(2, 2)),
    ]
}

fn case() -> impl Strategy<Value = (usize, Pattern, u64)> {
    (0..KERNELS.len(), pattern(), any::<u64>())
}

fn prep(k: usize) -> Prepared {
    prepare(KERNELS[k].parse().unwrap(), &SimConfig::default()).unwrap()
}

fn run(p: &Prepared, program: &Program, pat: Pattern, seed: u64, mode: Mode) -> SimResult {
    run_with(p, program, pat, seed, mode, PsruPolicy::Normal)
}

fn run_with(p: &Prepared, program: &Program, pat: Pattern, seed: u64, mode: Mode, psru_policy: PsruPolicy) -> SimResult {
    let inputs = p.kernel.gen_inputs(pat, seed);
    let cfg = SimConfig { trace: true, psru_policy, ..p.config.clone() };
    simulate(program, p.kernel.initial_state(program, &inputs), &cfg, mode).unwrap()
}

fn commits(r: &SimResult) -> Vec<usize> {
    r.trace.iter().filter_map(|e| if let TraceEvent::Commit { pc, .. } = e { Some(*pc) } else { None }).collect()
}

fn fetches(r: &SimResult) -> Vec<usize> {
    r.trace.iter().filter_map(|e| if let TraceEvent::Fetch { pc, .. } = e { Some(*pc) } else { None }).collect()
}

fn is_subsequence(small: &[usize], big: &[usize]) -> bool {
    let mut it = big.iter();
    small.iter().all(|x| it.any(|y| y == x))
}

/// PC sequence of the reference semantics, stepped one instruction at a time.
fn functional_path(p: &Prepared, pat: Pattern, seed: u64) -> Vec<usize> {
    let program = &p.annotated.program;
    let mut state = p.kernel.initial_state(program, &p.kernel.gen_inputs(pat, seed));
    let mut path = Vec::new();
    while state.pc < program.len() {
        let e = exec_semantics(&program.instructions[state.pc], state.pc, &state).unwrap();
        path.push(state.pc);
        if e.halt {
            break;
        }
        state.apply(&e);
    }
    path
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn deterministic((k, pat, seed) in case()) {
        let p = prep(k);
        for mode in [Mode::Baseline, Mode::Sparce] {
            let a = run(&p, &p.annotated.program, pat, seed, mode);
            let b = run(&p, &p.annotated.program, pat, seed, mode);
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn trace_invariants((k, pat, seed) in case()) {
        let p = prep(k);
        let prog = &p.annotated.program;
        let base = run(&p, prog, pat, seed, Mode::Baseline);
        let sp = run(&p, prog, pat, seed, Mode::Sparce);

        let path = functional_path(&p, pat, seed);
        prop_assert_eq!(&commits(&base), &path);
        prop_assert_eq!(&fetches(&base), &path);

        let (c, f) = (commits(&sp), fetches(&sp));
        prop_assert!(is_subsequence(&c, &f));
        prop_assert_eq!(f.len() as u64, sp.stats.executed + sp.stats.squashed);
        prop_assert_eq!(base.stats.executed, sp.stats.executed + sp.stats.skipped_at_fetch + sp.stats.squashed);

        for r in [&base, &sp] {
            prop_assert_eq!(r.stats.cycles, r.stats.busy_cycles + r.stats.stall_cycles());
        }
        prop_assert!(base.stats.cycles >= sp.stats.cycles);
    }

    #[test]
    fn skipped_pcs_are_never_fetched((k, pat, seed) in case()) {
        let p = prep(k);
        let sp = run(&p, &p.annotated.program, pat, seed, Mode::Sparce);
        for (i, e) in sp.trace.iter().enumerate() {
            if let TraceEvent::Skip { from, to, .. } = *e {
                let next = sp.trace[i + 1..].iter().find_map(|e| if let TraceEvent::Fetch { pc, .. } = e { Some(*pc) } else { None });
                if let Some(pc) = next {
                    prop_assert!(!(from..to).contains(&pc), "fetched {} right after skipping {}..{}", pc, from, to);
                }
            }
        }
    }

    #[test]
    fn any_entry_subset_is_sound(
        (k, pat, seed) in case(),
        keep in prop::collection::vec(any::<bool>(), 64),
        policy in prop_oneof![Just(PsruPolicy::Normal), Just(PsruPolicy::DeferAll), Just(PsruPolicy::ExecuteAll)],
    ) {
        let p = prep(k);
        let mut prog = p.annotated.program.clone();
        let block = &mut prog.sasa_blocks[0];
        let kept: Vec<_> = block.entries.iter().zip(keep.iter().cycle()).filter(|(_, &k)| k).map(|(e, _)| *e).collect();
        block.entries = kept.clone();
        for i in prog.instructions.iter_mut().filter(|i| i.op == Opcode::SasaLd) {
            i.srcs[1] = Operand::Imm(kept.len() as i64);
        }
        let inputs = p.kernel.gen_inputs(pat, seed);
        let expected: Vec<u32> = golden(p.kernel.spec, &inputs).iter().map(|x| x.to_bits()).collect();
        for mode in [Mode::Baseline, Mode::Sparce] {
            let r = run_with(&p, &prog, pat, seed, mode, policy);
            let got: Vec<u32> = p.kernel.read_outputs(&r.state.memory).iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(&got, &expected, "{:?} {:?} with {} of {} entries", mode, policy, kept.len(), p.annotated.entries.len());
        }
    }
}
