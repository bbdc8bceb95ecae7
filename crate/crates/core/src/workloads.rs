//! Kernel generators, sparse data generators and golden oracles.
//!
//! Memory images are row-major f32 at 64-byte-aligned addresses starting at
//! [`DATA_BASE`]; the region below it is left for SASA tables.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::annotator::{Granularity, SparseMarker};
use crate::isa::{align_up, parse_program, Program};
use crate::machine::{MachineState, Memory};

pub const DATA_BASE: u64 = 0x1_0000;

const DENSE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkloadError {
    #[error("invalid kernel shape: {0}")]
    Shape(String),
    #[error("cannot parse `{0}`: {1}")]
    Parse(String, String),
}

// ---------------------------------------------------------------------------
// Sparsity patterns
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pattern {
    Uniform(f64),
    Block(f64, usize),
    ReluLike { mean: f64, std: f64 },
    MaxPoolBackprop(usize, usize),
}

impl Pattern {
    /// Zero fraction the pattern aims for.
    pub fn nominal_sparsity(&self) -> f64 {
        match *self {
            Pattern::Uniform(s) | Pattern::Block(s, _) => s,
            Pattern::ReluLike { mean, std } => {
                if std <= 0.0 {
                    if mean <= 0.0 { 1.0 } else { 0.0 }
                } else {
                    0.5 * erfc(mean / (std * std::f64::consts::SQRT_2))
                }
            }
            Pattern::MaxPoolBackprop(p, q) => 1.0 - 1.0 / (p * q) as f64,
        }
    }

    pub fn with_sparsity(&self, s: f64) -> Pattern {
        match *self {
            Pattern::Uniform(_) => Pattern::Uniform(s),
            Pattern::Block(_, len) => Pattern::Block(s, len),
            other => other,
        }
    }
}

fn erfc(x: f64) -> f64 {
    // Numerical Recipes erfcc, relative error < 1.2e-7.
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t * (-z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807 + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 { r } else { 2.0 - r }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pattern::Uniform(s) => write!(f, "uniform:{}", s),
            Pattern::Block(s, l) => write!(f, "block:{}:{}", s, l),
            Pattern::ReluLike { mean, std } => write!(f, "relu:{}:{}", mean, std),
            Pattern::MaxPoolBackprop(p, q) => write!(f, "maxpool:{}x{}", p, q),
        }
    }
}

impl FromStr for Pattern {
    type Err = WorkloadError;

    /// `uniform:S`, `block:S:LEN`, `relu:MEAN:STD`, `maxpool:PxQ`, `dense`.
    fn from_str(s: &str) -> Result<Self, WorkloadError> {
        let err = |m: &str| WorkloadError::Parse(s.to_string(), m.to_string());
        let parts: Vec<&str> = s.split(':').collect();
        let num = |x: &str| x.parse::<f64>().map_err(|_| err("expected a number"));
        let int = |x: &str| x.parse::<usize>().map_err(|_| err("expected an integer"));
        let unit = |v: f64| if (0.0..1.0).contains(&v) { Ok(v) } else { Err(err("sparsity must be in [0, 1)")) };
        match parts.as_slice() {
            ["dense"] => Ok(Pattern::Uniform(0.0)),
            ["uniform", x] => Ok(Pattern::Uniform(unit(num(x)?)?)),
            ["block", x, l] => {
                let l = int(l)?;
                if l == 0 {
                    return Err(err("block length must be positive"));
                }
                Ok(Pattern::Block(unit(num(x)?)?, l))
            }
            ["relu", m, sd] => Ok(Pattern::ReluLike { mean: num(m)?, std: num(sd)?.abs() }),
            ["maxpool", pq] => {
                let (p, q) = pq.split_once('x').ok_or_else(|| err("expected PxQ"))?;
                let (p, q) = (int(p)?, int(q)?);
                if p == 0 || q == 0 {
                    return Err(err("window must be non-empty"));
                }
                Ok(Pattern::MaxPoolBackprop(p, q))
            }
            _ => Err(err("unknown pattern")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
    /// Realized zero count.
    pub zeros: usize,
}

impl Matrix {
    pub fn at(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn zero_fraction(&self) -> f64 {
        self.zeros as f64 / self.data.len().max(1) as f64
    }

    fn from_data(rows: usize, cols: usize, data: Vec<f32>) -> Matrix {
        let zeros = data.iter().filter(|x| **x == 0.0).count();
        Matrix { rows, cols, data, zeros }
    }

    pub fn transpose(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.at(r, c));
            }
        }
        Matrix { rows: self.cols, cols: self.rows, data, zeros: self.zeros }
    }
}

fn nonzero(rng: &mut ChaCha8Rng) -> f32 {
    let mag: f32 = rng.random_range(0.25..2.0);
    if rng.random::<bool>() { mag } else { -mag }
}

/// Values are ±U[0.25, 2) where nonzero. Uniform and block masks are nested:
/// for a fixed seed, the zeros at sparsity s1 are a subset of those at s2 > s1.
pub fn gen_matrix(rows: usize, cols: usize, pattern: Pattern, seed: u64) -> Matrix {
    assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rows * cols;
    let data = match pattern {
        Pattern::Uniform(s) => (0..n)
            .map(|_| {
                let key: f64 = rng.random();
                let v = nonzero(&mut rng);
                if key < s { 0.0 } else { v }
            })
            .collect(),
        Pattern::Block(s, len) => {
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                let key: f64 = rng.random();
                for _ in 0..len.min(n - out.len()) {
                    let v = nonzero(&mut rng);
                    out.push(if key < s { 0.0 } else { v });
                }
            }
            out
        }
        Pattern::ReluLike { mean, std } => {
            let normal = Normal::new(mean, std.max(0.0)).expect("finite normal parameters");
            (0..n).map(|_| (normal.sample(&mut rng) as f32).max(0.0)).collect()
        }
        Pattern::MaxPoolBackprop(p, q) => {
            let mut out = vec![0.0f32; n];
            for r0 in (0..rows).step_by(p) {
                for c0 in (0..cols).step_by(q) {
                    let h = p.min(rows - r0);
                    let w = q.min(cols - c0);
                    let pick = rng.random_range(0..h * w);
                    out[(r0 + pick / w) * cols + c0 + pick % w] = nonzero(&mut rng);
                }
            }
            out
        }
    };
    Matrix::from_data(rows, cols, data)
}

fn dense(rows: usize, cols: usize, seed: u64) -> Matrix {
    gen_matrix(rows, cols, Pattern::Uniform(0.0), seed ^ DENSE_STREAM)
}

// ---------------------------------------------------------------------------
// Kernel specs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shared {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelSpec {
    Dot { n: usize },
    Conv { h: usize, w: usize, k: usize },
    Gemm { m: usize, n: usize, k: usize, shared: Shared },
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Dot { n } => write!(f, "dot:{}", n),
            KernelSpec::Conv { h, w, k } => write!(f, "conv:{}x{}x{}", h, w, k),
            KernelSpec::Gemm { m, n, k, shared } => {
                write!(f, "gemm:{}x{}x{}:{}", m, n, k, if *shared == Shared::A { "a" } else { "b" })
            }
        }
    }
}

impl FromStr for KernelSpec {
    type Err = WorkloadError;

    /// `dot:N`, `conv:HxWxK`, `gemm:MxNxK[:a|:b]`.
    fn from_str(s: &str) -> Result<Self, WorkloadError> {
        let err = |m: &str| WorkloadError::Parse(s.to_string(), m.to_string());
        let dims = |x: &str, n: usize| -> Result<Vec<usize>, WorkloadError> {
            let v: Vec<usize> = x.split('x').map(|d| d.parse::<usize>()).collect::<Result<_, _>>().map_err(|_| err("bad dimension"))?;
            if v.len() != n {
                return Err(err(&format!("expected {} dimensions", n)));
            }
            Ok(v)
        };
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["dot", n] => Ok(KernelSpec::Dot { n: dims(n, 1)?[0] }),
            ["conv", d] => {
                let v = dims(d, 3)?;
                Ok(KernelSpec::Conv { h: v[0], w: v[1], k: v[2] })
            }
            ["gemm", d, rest @ ..] => {
                let v = dims(d, 3)?;
                let shared = match rest {
                    [] | ["b"] | ["B"] => Shared::B,
                    ["a"] | ["A"] => Shared::A,
                    _ => return Err(err("shared operand must be a or b")),
                };
                Ok(KernelSpec::Gemm { m: v[0], n: v[1], k: v[2], shared })
            }
            _ => Err(err("unknown kernel")),
        }
    }
}

/// Input images placed in memory for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Inputs {
    /// The matrix carrying the pattern (INP, input image or B).
    pub sparse: Matrix,
    /// The dense operand (KER, filter or A).
    pub dense: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub spec: KernelSpec,
    pub program: Program,
    pub markers: Vec<SparseMarker>,
    layout: Layout,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    /// (address, row-major image) placements derived from the inputs.
    sparse_addr: u64,
    dense_addr: u64,
    out_addr: u64,
    out_len: usize,
}

fn next_addr(addr: u64, floats: usize) -> u64 {
    align_up(addr + 4 * floats as u64, 64)
}

pub fn build_kernel(spec: KernelSpec) -> Result<Kernel, WorkloadError> {
    let (asm, markers, layout) = match spec {
        KernelSpec::Dot { n } => dot_asm(n)?,
        KernelSpec::Conv { h, w, k } => conv_asm(h, w, k)?,
        KernelSpec::Gemm { m, n, k, shared } => gemm_asm(m, n, k, shared)?,
    };
    let program = parse_program(&asm).map_err(|e| WorkloadError::Shape(format!("generated assembly: {}", e)))?;
    Ok(Kernel { spec, program, markers, layout })
}

impl Kernel {
    /// Generates inputs for this kernel: the pattern drives the sparse operand.
    pub fn gen_inputs(&self, pattern: Pattern, seed: u64) -> Inputs {
        match self.spec {
            KernelSpec::Dot { n } => {
                let (r, c) = dot_shape(n);
                let sparse = gen_matrix(r, c, pattern, seed);
                Inputs { sparse, dense: dense(1, n, seed) }
            }
            KernelSpec::Conv { h, w, k } => Inputs { sparse: gen_matrix(h, w, pattern, seed), dense: dense(k, k, seed) },
            KernelSpec::Gemm { m, n, k, .. } => Inputs { sparse: gen_matrix(k, n, pattern, seed), dense: dense(m, k, seed) },
        }
    }

    /// Row-major images of (sparse address, dense address) as laid out in memory.
    /// GEMM images carry look-ahead padding rows filled with 1.0 so they never read as zeros.
    fn images(&self, inputs: &Inputs) -> (Vec<f32>, Vec<f32>) {
        match self.spec {
            KernelSpec::Dot { .. } | KernelSpec::Conv { .. } => (inputs.sparse.data.clone(), inputs.dense.data.clone()),
            KernelSpec::Gemm { .. } => {
                let pad = |m: &Matrix| {
                    let mut v = m.data.clone();
                    v.resize(v.len() + GEMM_PAD_ROWS * m.cols, 1.0);
                    v
                };
                (pad(&inputs.sparse), pad(&inputs.dense.transpose()))
            }
        }
    }

    /// Initial state for `program` (this kernel, possibly annotated) with the inputs in memory.
    pub fn initial_state(&self, program: &Program, inputs: &Inputs) -> MachineState {
        let mut state = MachineState::with_program(program);
        let (s, d) = self.images(inputs);
        state.memory.write_f32s(self.layout.sparse_addr, &s);
        state.memory.write_f32s(self.layout.dense_addr, &d);
        state
    }

    /// Live-out range: (address, f32 count).
    pub fn output_range(&self) -> (u64, usize) {
        (self.layout.out_addr, self.layout.out_len)
    }

    pub fn read_outputs(&self, memory: &Memory) -> Vec<f32> {
        memory.read_f32s(self.layout.out_addr, self.layout.out_len)
    }
}

// ---------------------------------------------------------------------------
// DotScalar
// ---------------------------------------------------------------------------

/// Shape used for the INP vector so 2-D patterns are meaningful.
pub fn dot_shape(n: usize) -> (usize, usize) {
    if n % 16 == 0 && n >= 32 { (n / 16, 16) } else { (1, n) }
}

fn dot_asm(n: usize) -> Result<(String, Vec<SparseMarker>, Layout), WorkloadError> {
    if n == 0 {
        return Err(WorkloadError::Shape("dot length must be positive".into()));
    }
    let inp = DATA_BASE;
    let ker = next_addr(inp, n + 16);
    let out = next_addr(ker, n + 16);
    let mut a = String::new();
    let _ = write!(
        a,
        "    MOV r4, #{inp}
    MOV r5, #{ker}
    MOV r3, #{n}
    MOV r7, #{out}
    MOV f2, #0.0
loop:
inp:
    LD f0, [r4]
    ADD r4, r4, #4
    SUBS r3, r3, #1
    ADD r5, r5, #4
ker:
    LD f1, [r5, #-4]
    FMUL f3, f0, f1
    FADD f2, f2, f3
    BNE loop
    ST f2, [r7]
    HALT
"
    );
    let markers = vec![SparseMarker::label("inp", Granularity::Full), SparseMarker::label("ker", Granularity::Full)];
    Ok((a, markers, Layout { sparse_addr: inp, dense_addr: ker, out_addr: out, out_len: 1 }))
}

// ---------------------------------------------------------------------------
// ConvDirectScalar
// ---------------------------------------------------------------------------

/// Valid 2-D convolution of an h×w image with a k×k filter, unrolled along the filter row.
/// Input taps are loaded one tap ahead into alternating registers so each
/// tap's load/multiply/accumulate group can be skipped at fetch.
fn conv_asm(h: usize, w: usize, k: usize) -> Result<(String, Vec<SparseMarker>, Layout), WorkloadError> {
    if k == 0 || k > h || k > w {
        return Err(WorkloadError::Shape(format!("conv needs 1 <= k <= h, w (got {}x{}x{})", h, w, k)));
    }
    let (oh, ow) = (h - k + 1, w - k + 1);
    let inp = DATA_BASE;
    let ker = next_addr(inp, h * w + 16);
    let out = next_addr(ker, k * k + 16);
    let xr = |t: usize| if t % 2 == 0 { "f0" } else { "f4" };
    let mut a = String::new();
    let _ = writeln!(a, "    MOV r13, #{inp}\n    MOV r14, #{out}\n    MOV r12, #{k}\n    MOV r16, #{oh}");
    let _ = writeln!(a, "row:\n    MOV r15, #{ow}");
    let _ = writeln!(a, "pix:\n    MOV f2, #0.0\n    MOV r4, r13\n    MOV r5, #{ker}\n    MOV r11, #0");
    let _ = writeln!(a, "ky:");
    let mut lbl = 0;
    let mut load = |a: &mut String, t: usize| {
        let _ = writeln!(a, "inp{}:\n    LD {}, [r4, #{}]", lbl, xr(t), 4 * t);
        lbl += 1;
    };
    load(&mut a, 0);
    if k > 1 {
        load(&mut a, 1);
    }
    let _ = writeln!(a, "    ADD r11, r11, #1\n    SUBS r3, r11, r12");
    for t in 0..k {
        let _ = writeln!(a, "    LD f1, [r5, #{}]\n    FMUL f3, {}, f1\n    FADD f2, f2, f3", 4 * t, xr(t));
        if t + 2 < k {
            load(&mut a, t + 2);
        }
    }
    let _ = writeln!(a, "    ADD r4, r4, #{}\n    ADD r5, r5, #{}\n    BNE ky", 4 * w, 4 * k);
    let _ = writeln!(a, "    ST f2, [r14], #4\n    ADD r13, r13, #4\n    SUBS r15, r15, #1\n    BNE pix");
    let _ = writeln!(a, "    ADD r13, r13, #{}\n    SUBS r16, r16, #1\n    BNE row\n    HALT", 4 * (k - 1));
    let markers = vec![SparseMarker::label("inp*", Granularity::Full)];
    Ok((a, markers, Layout { sparse_addr: inp, dense_addr: ker, out_addr: out, out_len: oh * ow }))
}

// ---------------------------------------------------------------------------
// GemmSimd4
// ---------------------------------------------------------------------------

/// Rows of prefetch distance for both operand streams.
const PREFETCH_ROWS: i64 = 4;

/// Rows past k read by the final subroutine's look-ahead loads.
const GEMM_PAD_ROWS: usize = 2;

struct MBlock<'a> {
    /// Register receiving the next broadcast row and the four vector registers receiving the next vector row.
    load_s: &'a str,
    load_v: [&'a str; 4],
    use_s: &'a str,
    use_v: [&'a str; 4],
}

/// One M1/M2 subroutine: 16 VFMLAs on the current rows while loading the next rows.
fn emit_m(a: &mut String, m: &MBlock, stride_s: i64, stride_v: i64, shared: Shared, tag: &str) {
    let mark = |a: &mut String, what: &str, i: usize| {
        let seed = (shared == Shared::B && what == "s") || (shared == Shared::A && what == "v");
        if seed {
            let _ = writeln!(a, "bld_{}_{}{}:", tag, what, i);
        }
    };
    let f = |a: &mut String, j: usize, i: usize| {
        let _ = writeln!(a, "    VFMLA v{}, {}, {}.s[{}]", 16 + 4 * j + i, m.use_v[i], m.use_s, j);
    };
    mark(a, "s", 0);
    let _ = writeln!(a, "    VLD {}, [r1]", m.load_s);
    f(a, 0, 0);
    f(a, 0, 1);
    let _ = writeln!(a, "    PRFM [r1, #{}]", PREFETCH_ROWS * stride_s);
    f(a, 0, 2);
    f(a, 0, 3);
    mark(a, "v", 0);
    let _ = writeln!(a, "    VLD {}, [r2]", m.load_v[0]);
    let _ = writeln!(a, "    ADD r1, r1, #{}", stride_s);
    f(a, 1, 0);
    f(a, 1, 1);
    mark(a, "v", 1);
    let _ = writeln!(a, "    VLD {}, [r2, #16]", m.load_v[1]);
    let _ = writeln!(a, "    PRFM [r2, #{}]", PREFETCH_ROWS * stride_v);
    f(a, 1, 2);
    f(a, 1, 3);
    mark(a, "v", 2);
    let _ = writeln!(a, "    VLD {}, [r2, #32]", m.load_v[2]);
    f(a, 2, 0);
    f(a, 2, 1);
    mark(a, "v", 3);
    let _ = writeln!(a, "    VLD {}, [r2, #48]", m.load_v[3]);
    f(a, 2, 2);
    f(a, 2, 3);
    f(a, 3, 0);
    f(a, 3, 1);
    let _ = writeln!(a, "    ADD r2, r2, #{}", stride_v);
    f(a, 3, 2);
    f(a, 3, 3);
}

/// Instructions in one M1/M2 subroutine.
pub const GEMM_M_LEN: usize = 25;

/// Broadcast (S) and vector (V) extents for a GEMM spec.
pub fn gemm_dims(m: usize, n: usize, shared: Shared) -> (usize, usize) {
    match shared {
        Shared::B => (n, m),
        Shared::A => (m, n),
    }
}

/// C = A·B with A m×k dense and B k×n sparse, as a 16×4 register tile kernel.
/// The broadcast image S is k×sd row-major and the vector image V is k×vd;
/// with shared=B, S is B and V is Aᵀ; with shared=A, S is Aᵀ and V is B.
/// The output image is sd×vd row-major. Both operand images carry padding rows
/// for the last subroutine's look-ahead loads.
fn gemm_asm(m: usize, n: usize, k: usize, shared: Shared) -> Result<(String, Vec<SparseMarker>, Layout), WorkloadError> {
    let (sd, vd) = gemm_dims(m, n, shared);
    if sd == 0 || vd == 0 || sd % 4 != 0 || vd % 16 != 0 || k == 0 || k % 2 != 0 {
        return Err(WorkloadError::Shape(format!(
            "gemm {}x{}x{} with shared={:?} needs broadcast dim % 4, vector dim % 16 and even k",
            m, n, k, shared
        )));
    }
    let s_addr = DATA_BASE;
    let v_addr = next_addr(s_addr, (k + GEMM_PAD_ROWS) * sd);
    let c_addr = next_addr(v_addr, (k + GEMM_PAD_ROWS) * vd);
    let (stride_s, stride_v) = (4 * sd as i64, 4 * vd as i64);
    let (sparse_addr, dense_addr) = match shared {
        Shared::B => (s_addr, v_addr),
        Shared::A => (v_addr, s_addr),
    };

    let mut a = String::new();
    let _ = writeln!(a, "    MOV r5, #{}\n    MOV r4, #{}\n    MOV r8, #{}", s_addr, c_addr, sd / 4);
    let _ = writeln!(a, "stile:\n    MOV r6, #{}\n    MOV r7, #{}", v_addr, vd / 16);
    let _ = writeln!(a, "vtile:");
    for v in 16..32 {
        let _ = writeln!(a, "    MOV v{}, #0", v);
    }
    let _ = writeln!(a, "    MOV r1, r5\n    MOV r2, r6");
    if shared == Shared::B {
        let _ = writeln!(a, "bld_p_s0:");
    }
    let _ = writeln!(a, "    VLD v8, [r1]\n    ADD r1, r1, #{}", stride_s);
    for i in 0..4 {
        if shared == Shared::A {
            let _ = writeln!(a, "bld_p_v{}:", i);
        }
        let _ = writeln!(a, "    VLD v{}, [r2, #{}]", i, 16 * i);
    }
    let _ = writeln!(a, "    ADD r2, r2, #{}\n    MOV r3, #{}", stride_v, k / 2);
    let _ = writeln!(a, "kloop:\nm1:");
    emit_m(&mut a, &MBlock { load_s: "v12", load_v: ["v4", "v5", "v6", "v7"], use_s: "v8", use_v: ["v0", "v1", "v2", "v3"] }, stride_s, stride_v, shared, "m1");
    let _ = writeln!(a, "m2:");
    emit_m(&mut a, &MBlock { load_s: "v8", load_v: ["v0", "v1", "v2", "v3"], use_s: "v12", use_v: ["v4", "v5", "v6", "v7"] }, stride_s, stride_v, shared, "m2");
    let _ = writeln!(a, "    SUBS r3, r3, #1\n    BNE kloop");
    for j in 0..4 {
        for i in 0..4 {
            let _ = writeln!(a, "    VST v{}, [r4, #{}]", 16 + 4 * j + i, j as i64 * stride_v + 16 * i as i64);
        }
    }
    let _ = writeln!(a, "    ADD r4, r4, #64\n    ADD r6, r6, #64\n    SUBS r7, r7, #1\n    BNE vtile");
    let _ = writeln!(a, "    ADD r4, r4, #{}\n    ADD r5, r5, #16\n    SUBS r8, r8, #1\n    BNE stile\n    HALT", 3 * stride_v);
    let gran = match shared {
        Shared::B => Granularity::Lane,
        Shared::A => Granularity::Full,
    };
    let markers = vec![SparseMarker::label("bld_*", gran)];
    Ok((a, markers, Layout { sparse_addr, dense_addr, out_addr: c_addr, out_len: sd * vd }))
}

// ---------------------------------------------------------------------------
// Golden oracles
// ---------------------------------------------------------------------------

/// Expected live-out values, accumulated in the kernel's order so the comparison is bit-exact.
pub fn golden(spec: KernelSpec, inputs: &Inputs) -> Vec<f32> {
    match spec {
        KernelSpec::Dot { .. } => {
            let mut acc = 0.0f32;
            for (x, k) in inputs.sparse.data.iter().zip(&inputs.dense.data) {
                acc += x * k;
            }
            vec![acc]
        }
        KernelSpec::Conv { h, w, k } => {
            let x = &inputs.sparse;
            let f = &inputs.dense;
            let mut out = Vec::with_capacity((h - k + 1) * (w - k + 1));
            for oy in 0..=h - k {
                for ox in 0..=w - k {
                    let mut acc = 0.0f32;
                    for ky in 0..k {
                        for kx in 0..k {
                            acc += x.at(oy + ky, ox + kx) * f.at(ky, kx);
                        }
                    }
                    out.push(acc);
                }
            }
            out
        }
        KernelSpec::Gemm { m, n, k, shared } => {
            let b = &inputs.sparse;
            let a = &inputs.dense;
            let (sd, vd) = gemm_dims(m, n, shared);
            let mut out = vec![0.0f32; sd * vd];
            for s in 0..sd {
                for v in 0..vd {
                    let (mi, ni) = match shared {
                        Shared::B => (v, s),
                        Shared::A => (s, v),
                    };
                    let mut acc = 0.0f32;
                    for kk in 0..k {
                        acc = a.at(mi, kk).mul_add(b.at(kk, ni), acc);
                    }
                    out[s * vd + v] = acc;
                }
            }
            out
        }
    }
}

/// Reorders a GEMM output image into C (m×n row-major).
pub fn gemm_c(spec: KernelSpec, image: &[f32]) -> Vec<f32> {
    let KernelSpec::Gemm { m, n, shared, .. } = spec else {
        panic!("gemm_c on a non-GEMM kernel");
    };
    let (_, vd) = gemm_dims(m, n, shared);
    let mut c = vec![0.0f32; m * n];
    for mi in 0..m {
        for ni in 0..n {
            c[mi * n + ni] = match shared {
                Shared::B => image[ni * vd + mi],
                Shared::A => image[mi * vd + ni],
            };
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::validate;

    #[test]
    fn patterns_parse() {
        assert_eq!("uniform:0.5".parse::<Pattern>().unwrap(), Pattern::Uniform(0.5));
        assert_eq!("block:0.3:8".parse::<Pattern>().unwrap(), Pattern::Block(0.3, 8));
        assert_eq!("maxpool:2x2".parse::<Pattern>().unwrap(), Pattern::MaxPoolBackprop(2, 2));
        assert_eq!("dense".parse::<Pattern>().unwrap(), Pattern::Uniform(0.0));
        assert!("uniform:1.5".parse::<Pattern>().is_err());
        for p in ["uniform:0.25", "block:0.5:4", "relu:0:1", "maxpool:3x2"] {
            assert_eq!(p.parse::<Pattern>().unwrap().to_string(), p);
        }
    }

    #[test]
    fn specs_parse() {
        assert_eq!("dot:64".parse::<KernelSpec>().unwrap(), KernelSpec::Dot { n: 64 });
        assert_eq!("conv:8x9x3".parse::<KernelSpec>().unwrap(), KernelSpec::Conv { h: 8, w: 9, k: 3 });
        assert_eq!(
            "gemm:32x8x4:a".parse::<KernelSpec>().unwrap(),
            KernelSpec::Gemm { m: 32, n: 8, k: 4, shared: Shared::A }
        );
        assert_eq!("gemm:16x4x4".parse::<KernelSpec>().unwrap().to_string(), "gemm:16x4x4:b");
        assert!("gemm:16x4".parse::<KernelSpec>().is_err());
    }

    #[test]
    fn dense_has_no_zeros() {
        let m = gen_matrix(10, 10, Pattern::Uniform(0.0), 3);
        assert_eq!(m.zeros, 0);
        assert!(m.data.iter().all(|x| x.is_finite() && x.abs() >= 0.25 && x.abs() < 2.0));
    }

    #[test]
    fn maxpool_one_per_window() {
        let m = gen_matrix(4, 4, Pattern::MaxPoolBackprop(2, 2), 9);
        assert_eq!(m.data.len() - m.zeros, 4);
        for r in (0..4).step_by(2) {
            for c in (0..4).step_by(2) {
                let nz = (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).filter(|(i, j)| m.at(r + i, c + j) != 0.0).count();
                assert_eq!(nz, 1);
            }
        }
    }

    #[test]
    fn uniform_fraction_and_nesting() {
        let m = gen_matrix(100, 100, Pattern::Uniform(0.9), 7);
        assert!((0.87..=0.93).contains(&m.zero_fraction()), "{}", m.zero_fraction());
        let lo = gen_matrix(100, 100, Pattern::Uniform(0.3), 7);
        for (a, b) in lo.data.iter().zip(&m.data) {
            if *a == 0.0 {
                assert_eq!(*b, 0.0);
            } else if *b != 0.0 {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn block_runs() {
        let m = gen_matrix(1, 64, Pattern::Block(0.5, 8), 1);
        for chunk in m.data.chunks(8) {
            let z = chunk.iter().filter(|x| **x == 0.0).count();
            assert!(z == 0 || z == 8);
        }
    }

    #[test]
    fn relu_clips() {
        let m = gen_matrix(50, 50, Pattern::ReluLike { mean: 0.0, std: 1.0 }, 2);
        assert!(m.data.iter().all(|x| *x >= 0.0));
        assert!((0.4..0.6).contains(&m.zero_fraction()));
        assert!((Pattern::ReluLike { mean: 0.0, std: 1.0 }.nominal_sparsity() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn kernels_validate() {
        for spec in [
            KernelSpec::Dot { n: 64 },
            KernelSpec::Conv { h: 6, w: 7, k: 3 },
            KernelSpec::Conv { h: 4, w: 4, k: 1 },
            KernelSpec::Gemm { m: 32, n: 8, k: 4, shared: Shared::B },
            KernelSpec::Gemm { m: 8, n: 32, k: 4, shared: Shared::A },
        ] {
            let k = build_kernel(spec).unwrap();
            assert!(validate(&k.program).is_empty(), "{}: {:?}", spec, validate(&k.program));
        }
        assert!(build_kernel(KernelSpec::Gemm { m: 8, n: 8, k: 4, shared: Shared::B }).is_err());
        assert!(build_kernel(KernelSpec::Gemm { m: 16, n: 4, k: 3, shared: Shared::B }).is_err());
        assert!(build_kernel(KernelSpec::Conv { h: 2, w: 4, k: 3 }).is_err());
    }

    #[test]
    fn gemm_m_blocks_have_fixed_length() {
        let k = build_kernel(KernelSpec::Gemm { m: 16, n: 4, k: 2, shared: Shared::B }).unwrap();
        let p = &k.program;
        assert_eq!(p.labels["m2"] - p.labels["m1"], GEMM_M_LEN);
        assert_eq!(p.labels["m1"] - p.labels["kloop"], 0);
    }

    #[test]
    fn golden_dot_of_zeros() {
        let k = build_kernel(KernelSpec::Dot { n: 8 }).unwrap();
        let mut inputs = k.gen_inputs(Pattern::Uniform(0.0), 1);
        inputs.sparse.data.iter_mut().for_each(|x| *x = 0.0);
        let g = golden(k.spec, &inputs);
        assert_eq!(g[0].to_bits(), 0.0f32.to_bits());
    }

    #[test]
    fn golden_conv_identity() {
        let spec = KernelSpec::Conv { h: 5, w: 6, k: 1 };
        let k = build_kernel(spec).unwrap();
        let mut inputs = k.gen_inputs(Pattern::Uniform(0.3), 4);
        inputs.dense.data = vec![1.0];
        assert_eq!(golden(spec, &inputs), inputs.sparse.data);
    }
}
