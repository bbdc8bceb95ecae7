use proptest::prelude::*;
use sparce::annotator::{annotate, AnnotateOptions, Granularity, SparseMarker};
use sparce::harness::prepare;
use sparce::isa::parse_program;
use sparce::pipeline::{simulate, Mode, PsruPolicy, SimConfig, SimError};
use sparce::MachineState;

const DATA: u64 = 0x1000;
const OUT: u64 = 0x2000;
const FREGS: u8 = 8;

#[derive(Debug, Clone)]
enum Op {
    Load { dst: u8, slot: u8, marked: bool },
    Mul(u8, u8, u8),
    Add(u8, u8, u8),
    Mla(u8, u8, u8),
    Mov(u8, u8),
    Int,
}

fn op() -> impl Strategy<Value = Op> {
    let r = || 0..FREGS;
    prop_oneof![
        3 => (r(), 0u8..16, any::<bool>()).prop_map(|(dst, slot, marked)| Op::Load { dst, slot, marked }),
        2 => (r(), r(), r()).prop_map(|(d, a, b)| Op::Mul(d, a, b)),
        2 => (r(), r(), r()).prop_map(|(d, a, b)| Op::Add(d, a, b)),
        2 => (r(), r(), r()).prop_map(|(d, a, b)| Op::Mla(d, a, b)),
        1 => (r(), r()).prop_map(|(d, a)| Op::Mov(d, a)),
        1 => Just(Op::Int),
    ]
}

/// A two-iteration loop over random FP ops, with every FP register stored at the end.
fn program(ops: &[Op]) -> (String, Vec<SparseMarker>) {
    let mut s = format!("    MOV r1, #{DATA}\n    MOV r2, #{OUT}\n    MOV r6, #2\n");
    for i in 0..FREGS {
        s.push_str(&format!("    MOV f{i}, #1.0\n"));
    }
    s.push_str("loop:\n");
    let mut markers = Vec::new();
    for (i, op) in ops.iter().enumerate() {
        let line = match op {
            Op::Load { dst, slot, marked } => {
                if *marked {
                    s.push_str(&format!("z{i}:\n"));
                    markers.push(SparseMarker::label(&format!("z{i}"), Granularity::Full));
                }
                format!("LD f{dst}, [r1, #{}]", 4 * *slot as u32)
            }
            Op::Mul(d, a, b) => format!("FMUL f{d}, f{a}, f{b}"),
            Op::Add(d, a, b) => format!("FADD f{d}, f{a}, f{b}"),
            Op::Mla(d, a, b) => format!("FMLA f{d}, f{a}, f{b}"),
            Op::Mov(d, a) => format!("MOV f{d}, f{a}"),
            Op::Int => "ADD r5, r5, #1".to_string(),
        };
        s.push_str(&format!("    {line}\n"));
    }
    s.push_str("    ADD r1, r1, #64\n    SUBS r6, r6, #1\n    BNE loop\n");
    for i in 0..FREGS {
        s.push_str(&format!("    ST f{i}, [r2, #{}]\n", 4 * i as u32));
    }
    s.push_str("    HALT\n");
    (s, markers)
}

fn data() -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(prop_oneof![2 => Just(0.0f32), 3 => (1i32..16).prop_map(|x| x as f32 * 0.25), 1 => (1i32..16).prop_map(|x| x as f32 * -0.5)], 32)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 400, ..ProptestConfig::default() })]

    /// Stored values agree between modes for finite data. Signed zeros compare equal: a
    /// skipped FADD of a zero product can leave -0.0 where the baseline has +0.0.
    #[test]
    fn random_programs_stay_sound(
        ops in prop::collection::vec(op(), 1..24),
        values in data(),
        policy in prop_oneof![Just(PsruPolicy::Normal), Just(PsruPolicy::DeferAll)],
    ) {
        let (text, markers) = program(&ops);
        let prog = parse_program(&text).unwrap();
        let opts = AnnotateOptions { capacity: 64, refresh: false };
        let annotated = annotate(&prog, &markers, &opts).unwrap();
        let cfg = SimConfig { sasa_capacity: 64, psru_policy: policy, trap_nonfinite: true, ..SimConfig::default() };
        let mut init = MachineState::with_program(&annotated.program);
        init.memory.write_f32s(DATA, &values);
        let b = simulate(&annotated.program, init.clone(), &cfg, Mode::Baseline).unwrap();
        let out_b = b.state.memory.read_f32s(OUT, FREGS as usize);
        prop_assume!(out_b.iter().all(|x| x.is_finite()));
        let s = match simulate(&annotated.program, init, &cfg, Mode::Sparce) {
            Err(SimError::NonFinite { .. }) => return Err(TestCaseError::reject("non-finite operand")),
            r => r.unwrap(),
        };
        let out_s = s.state.memory.read_f32s(OUT, FREGS as usize);
        prop_assert_eq!(&out_b, &out_s, "\n{}", annotated.program.to_asm());
    }

    #[test]
    fn annotation_is_deterministic_and_order_free(ops in prop::collection::vec(op(), 1..24)) {
        let (text, markers) = program(&ops);
        let prog = parse_program(&text).unwrap();
        let opts = AnnotateOptions { capacity: 64, refresh: false };
        let a = annotate(&prog, &markers, &opts).unwrap();
        let mut reversed = markers.clone();
        reversed.reverse();
        prop_assert_eq!(&a, &annotate(&prog, &markers, &opts).unwrap());
        prop_assert_eq!(&a, &annotate(&prog, &reversed, &opts).unwrap());
    }
}

#[test]
fn kernel_annotation_ignores_marker_order() {
    for k in ["dot:64", "conv:8x8x3", "gemm:16x4x4:b", "gemm:16x16x4:a"] {
        let p = prepare(k.parse().unwrap(), &SimConfig::default()).unwrap();
        let mut markers = p.kernel.markers.clone();
        markers.reverse();
        let opts = AnnotateOptions { capacity: p.config.sasa_capacity, refresh: false };
        assert_eq!(annotate(&p.kernel.program, &markers, &opts).unwrap(), p.annotated, "{k}");
    }
}
