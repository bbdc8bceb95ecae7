use proptest::prelude::*;
use sparce::isa::Reg;
use sparce::machine::RegValue;
use sparce::sparce::{eval_condition, SkipCondition, SpRF, Term, Tri};

#[derive(Debug, Clone)]
enum Op {
    Decode(usize),
    Commit(usize, RegValue),
    Squash(usize),
}

const REGS: [Reg; 6] = [Reg::int(0), Reg::int(1), Reg::fp(0), Reg::fp(1), Reg::vec(0), Reg::vec(1)];

fn value_for(reg: Reg) -> BoxedStrategy<RegValue> {
    let lane = prop_oneof![Just(0.0f32), Just(-0.0f32), (-4i32..4).prop_map(|x| x as f32 * 0.5)];
    match reg.file {
        sparce::RegFile::Int => prop_oneof![Just(0u64), any::<u64>()].prop_map(RegValue::Int).boxed(),
        sparce::RegFile::Fp => lane.prop_map(RegValue::Fp).boxed(),
        sparce::RegFile::Vec => prop::array::uniform4(lane).prop_map(RegValue::Vec).boxed(),
    }
}

fn op() -> impl Strategy<Value = Op> {
    (0..REGS.len()).prop_flat_map(|i| {
        prop_oneof![
            Just(Op::Decode(i)),
            value_for(REGS[i]).prop_map(move |v| Op::Commit(i, v)),
            Just(Op::Squash(i)),
        ]
    })
}

fn zero_mask(v: &RegValue) -> u8 {
    match v {
        RegValue::Int(x) => (*x == 0) as u8,
        RegValue::Fp(x) => (x.abs() == 0.0) as u8,
        RegValue::Vec(l) => l.iter().enumerate().map(|(k, x)| ((x.abs() == 0.0) as u8) << k).sum(),
    }
}

fn condition() -> impl Strategy<Value = SkipCondition> {
    let term = (0..REGS.len(), 1u8..16).prop_map(|(i, m)| Term { reg: REGS[i], mask: if REGS[i].full_mask() == 1 { 1 } else { m } });
    prop_oneof![
        term.clone().prop_map(SkipCondition::single),
        (term.clone(), term.clone()).prop_map(|(a, b)| SkipCondition::or(a, b)),
        (term.clone(), term).prop_map(|(a, b)| SkipCondition::and(a, b)),
    ]
}

/// Applies ops the way the pipeline does: commits and squashes only retire an existing writer.
fn play(ops: &[Op]) -> (SpRF, [u32; 6], [u8; 6]) {
    let mut sprf = SpRF::new();
    let mut inflight = [0u32; 6];
    let mut committed = [0u8; 6];
    for op in ops {
        match op {
            Op::Decode(i) => {
                sprf.mark_inflight(REGS[*i]);
                inflight[*i] += 1;
            }
            Op::Commit(i, v) if inflight[*i] > 0 => {
                sprf.svc_commit(REGS[*i], v).unwrap();
                inflight[*i] -= 1;
                committed[*i] = zero_mask(v);
            }
            Op::Squash(i) if inflight[*i] > 0 => {
                sprf.unmark_inflight(REGS[*i]);
                inflight[*i] -= 1;
            }
            _ => {}
        }
    }
    (sprf, inflight, committed)
}

proptest! {
    #[test]
    fn sprf_coherence(ops in prop::collection::vec(op(), 0..60)) {
        let (sprf, inflight, committed) = play(&ops);
        for (i, reg) in REGS.iter().enumerate() {
            let e = sprf.get(*reg);
            prop_assert_eq!(e.inflight, inflight[i]);
            if inflight[i] == 0 {
                prop_assert_eq!(e.is_sparse, committed[i], "{}", reg);
            }
        }
    }

    #[test]
    fn resolved_conditions_stay_resolved(
        ops in prop::collection::vec(op(), 0..60),
        later in prop::collection::vec(op(), 0..20),
        cond in condition(),
    ) {
        let (sprf, _, _) = play(&ops);
        let before = eval_condition(&cond, &sprf);
        let mut all = ops.clone();
        // Only retire writers; a new decode is a new write and may change the answer.
        all.extend(later.into_iter().filter(|o| !matches!(o, Op::Decode(_))));
        let (after_sprf, _, _) = play(&all);
        let after = eval_condition(&cond, &after_sprf);
        if before != Tri::Unknown {
            prop_assert_eq!(before, after);
        }
    }
}
