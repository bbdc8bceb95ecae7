//! Cycle-level simulator of an in-order core with sparsity-aware instruction
//! skipping, a static annotator that derives skip tables from assembly, and
//! kernel generators plus a harness for paired baseline/skipping runs.

pub mod isa;
pub mod machine;
pub mod pipeline;
pub mod sparce;
pub mod annotator;
pub mod workloads;
pub mod harness;

pub use isa::{parse_program, validate, Instruction, Opcode, Operand, Program, Reg, RegFile};
pub use machine::{exec_semantics, CacheConfig, DCache, MachineState};
pub use pipeline::{simulate, Mode, RunStats, SimConfig, SimResult};
pub use sparce::{SasaEntry, SasaTable, SkipCondition, SpRF, Term};
