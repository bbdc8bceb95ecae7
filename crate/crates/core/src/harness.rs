//! Paired baseline/skipping runs, verification against the golden oracle,
//! sparsity sweeps and CSV output.
//!
//! Both modes run the same annotated program on the same memory image; in
//! baseline mode the SASA load is inert.

use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::annotator::{annotate, AnnotateError, AnnotateOptions, Annotated};
use crate::pipeline::{simulate, Mode, RunStats, SimConfig, SimError};
use crate::workloads::{build_kernel, golden, Inputs, Kernel, KernelSpec, Pattern, WorkloadError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Annotate(#[from] AnnotateError),
    #[error("{mode} run: {source}")]
    Sim { mode: &'static str, source: SimError },
    #[error("{mode} run mismatches golden at {addr:#x}: expected {expected:e} ({expected_bits:#010x}), got {got:e} ({got_bits:#010x})")]
    Mismatch { mode: &'static str, addr: u64, expected: f32, expected_bits: u32, got: f32, got_bits: u32 },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad range `{0}` (expected START:STOP:STEP)")]
    Range(String),
}

/// A kernel built and annotated once, reusable across patterns and seeds.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub kernel: Kernel,
    pub annotated: Annotated,
    /// Config with the SASA capacity raised to fit the table if needed.
    pub config: SimConfig,
}

pub fn prepare(spec: KernelSpec, config: &SimConfig) -> Result<Prepared, HarnessError> {
    let kernel = build_kernel(spec)?;
    let mut config = config.clone();
    let opts = AnnotateOptions { capacity: config.sasa_capacity, refresh: false };
    let annotated = match annotate(&kernel.program, &kernel.markers, &opts) {
        Err(AnnotateError::Capacity { needed, .. }) => {
            config.sasa_capacity = needed;
            annotate(&kernel.program, &kernel.markers, &AnnotateOptions { capacity: needed, refresh: false })?
        }
        other => other?,
    };
    Ok(Prepared { kernel, annotated, config })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub mode: Mode,
    pub stats: RunStats,
    pub outputs: Vec<f32>,
    pub verified: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub spec: KernelSpec,
    pub pattern: Pattern,
    pub seed: u64,
    /// Realized zeros in the sparse operand.
    pub zeros: usize,
    pub baseline: RunOutcome,
    pub sparce: RunOutcome,
}

impl ExperimentResult {
    pub fn speedup(&self) -> f64 {
        self.baseline.stats.cycles as f64 / self.sparce.stats.cycles as f64
    }

    /// Executed instructions in skipping mode relative to baseline.
    pub fn executed_fraction(&self) -> f64 {
        self.sparce.stats.executed as f64 / self.baseline.stats.executed as f64
    }

    pub fn instruction_reduction(&self) -> f64 {
        1.0 - self.executed_fraction()
    }

    pub fn cycle_reduction(&self) -> f64 {
        1.0 - self.sparce.stats.cycles as f64 / self.baseline.stats.cycles as f64
    }
}

fn check(mode: &'static str, base: u64, expected: &[f32], got: &[f32]) -> Result<(), HarnessError> {
    for (i, (e, g)) in expected.iter().zip(got).enumerate() {
        if e.to_bits() != g.to_bits() {
            return Err(HarnessError::Mismatch {
                mode,
                addr: base + 4 * i as u64,
                expected: *e,
                expected_bits: e.to_bits(),
                got: *g,
                got_bits: g.to_bits(),
            });
        }
    }
    Ok(())
}

impl Prepared {
    pub fn run_mode(&self, inputs: &Inputs, mode: Mode, config: &SimConfig) -> Result<RunOutcome, HarnessError> {
        let program = &self.annotated.program;
        let init = self.kernel.initial_state(program, inputs);
        let r = simulate(program, init, config, mode).map_err(|source| HarnessError::Sim { mode: mode.name(), source })?;
        let outputs = self.kernel.read_outputs(&r.state.memory);
        let expected = golden(self.kernel.spec, inputs);
        check(mode.name(), self.kernel.output_range().0, &expected, &outputs)?;
        Ok(RunOutcome { mode, stats: r.stats, outputs, verified: true })
    }

    /// Runs both modes on identical inputs and verifies each against the golden oracle.
    pub fn run(&self, pattern: Pattern, seed: u64) -> Result<ExperimentResult, HarnessError> {
        self.run_with(pattern, seed, &self.config)
    }

    pub fn run_with(&self, pattern: Pattern, seed: u64, config: &SimConfig) -> Result<ExperimentResult, HarnessError> {
        let inputs = self.kernel.gen_inputs(pattern, seed);
        let baseline = self.run_mode(&inputs, Mode::Baseline, config)?;
        let sparce = self.run_mode(&inputs, Mode::Sparce, config)?;
        Ok(ExperimentResult { spec: self.kernel.spec, pattern, seed, zeros: inputs.sparse.zeros, baseline, sparce })
    }
}

pub fn run_experiment(spec: KernelSpec, pattern: Pattern, seed: u64, config: &SimConfig) -> Result<ExperimentResult, HarnessError> {
    prepare(spec, config)?.run(pattern, seed)
}

// ---------------------------------------------------------------------------
// Sweeps and CSV
// ---------------------------------------------------------------------------

pub const CSV_HEADER: [&str; 14] = [
    "kernel", "pattern", "sparsity", "seed", "mode", "cycles", "fetched", "executed", "skipped", "squashed", "dcache_acc",
    "dcache_miss", "sasa_hits", "speedup",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub kernel: String,
    pub pattern: String,
    pub sparsity: f64,
    /// `None` for the mean over seeds.
    pub seed: Option<u64>,
    pub mode: Mode,
    pub cycles: f64,
    pub fetched: f64,
    pub executed: f64,
    pub skipped: f64,
    pub squashed: f64,
    pub dcache_acc: f64,
    pub dcache_miss: f64,
    pub sasa_hits: f64,
    pub speedup: f64,
}

impl Row {
    /// Row for a single run; `speedup` is relative to the paired baseline.
    pub fn from_outcome(spec: KernelSpec, pattern: Pattern, seed: u64, run: &RunOutcome, speedup: f64) -> Row {
        let s = &run.stats;
        Row {
            kernel: spec.to_string(),
            pattern: pattern.to_string(),
            sparsity: pattern.nominal_sparsity(),
            seed: Some(seed),
            mode: run.mode,
            cycles: s.cycles as f64,
            fetched: s.fetched as f64,
            executed: s.executed as f64,
            skipped: s.skipped_at_fetch as f64,
            squashed: s.squashed as f64,
            dcache_acc: s.dcache_accesses as f64,
            dcache_miss: s.dcache_misses as f64,
            sasa_hits: s.sasa_hits as f64,
            speedup,
        }
    }

    fn from_run(r: &ExperimentResult, run: &RunOutcome) -> Row {
        let speedup = if run.mode == Mode::Baseline { 1.0 } else { r.speedup() };
        Row::from_outcome(r.spec, r.pattern, r.seed, run, speedup)
    }

    pub fn rows(r: &ExperimentResult) -> [Row; 2] {
        [Row::from_run(r, &r.baseline), Row::from_run(r, &r.sparce)]
    }

    fn mean(rows: &[&Row]) -> Row {
        let n = rows.len() as f64;
        let avg = |f: fn(&Row) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
        Row {
            seed: None,
            cycles: avg(|r| r.cycles),
            fetched: avg(|r| r.fetched),
            executed: avg(|r| r.executed),
            skipped: avg(|r| r.skipped),
            squashed: avg(|r| r.squashed),
            dcache_acc: avg(|r| r.dcache_acc),
            dcache_miss: avg(|r| r.dcache_miss),
            sasa_hits: avg(|r| r.sasa_hits),
            speedup: avg(|r| r.speedup),
            ..rows[0].clone()
        }
    }

    fn record(&self) -> Vec<String> {
        let num = |x: f64| if x.fract() == 0.0 && x.abs() < 1e15 { format!("{}", x as i64) } else { format!("{:.4}", x) };
        vec![
            self.kernel.clone(),
            self.pattern.clone(),
            format!("{}", self.sparsity),
            self.seed.map(|s| s.to_string()).unwrap_or_else(|| "mean".into()),
            self.mode.name().to_string(),
            num(self.cycles),
            num(self.fetched),
            num(self.executed),
            num(self.skipped),
            num(self.squashed),
            num(self.dcache_acc),
            num(self.dcache_miss),
            num(self.sasa_hits),
            format!("{:.4}", self.speedup),
        ]
    }
}

/// Parses `START:STOP:STEP` (inclusive) or a comma-separated list.
pub fn parse_sparsities(s: &str) -> Result<Vec<f64>, HarnessError> {
    let bad = || HarnessError::Range(s.to_string());
    let out: Vec<f64> = if let [a, b, c] = s.split(':').collect::<Vec<_>>().as_slice() {
        let (a, b, c): (f64, f64, f64) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?, c.parse().map_err(|_| bad())?);
        if c <= 0.0 || b < a {
            return Err(bad());
        }
        let steps = ((b - a) / c + 1e-9).floor() as usize;
        (0..=steps).map(|i| ((a + i as f64 * c) * 1e9).round() / 1e9).collect()
    } else {
        s.split(',').map(|x| x.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_, _>>()?
    };
    if out.is_empty() || out.iter().any(|x| !(0.0..1.0).contains(x)) {
        return Err(bad());
    }
    Ok(out)
}

/// Runs every (sparsity, seed) point in parallel. Results come back in
/// (sparsity, seed) order; each point yields baseline and skipping rows,
/// followed by mean rows per sparsity when more than one seed is given.
pub fn sweep(
    spec: KernelSpec,
    pattern: Pattern,
    sparsities: &[f64],
    seeds: &[u64],
    config: &SimConfig,
) -> Result<(Vec<ExperimentResult>, Vec<Row>), HarnessError> {
    let prepared = prepare(spec, config)?;
    let points: Vec<(f64, u64)> = sparsities.iter().flat_map(|&s| seeds.iter().map(move |&seed| (s, seed))).collect();
    let results: Vec<ExperimentResult> =
        points.par_iter().map(|&(s, seed)| prepared.run(pattern.with_sparsity(s), seed)).collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for chunk in results.chunks(seeds.len().max(1)) {
        let per: Vec<[Row; 2]> = chunk.iter().map(Row::rows).collect();
        for pair in &per {
            rows.extend(pair.iter().cloned());
        }
        if chunk.len() > 1 {
            for m in 0..2 {
                let of_mode: Vec<&Row> = per.iter().map(|p| &p[m]).collect();
                rows.push(Row::mean(&of_mode));
            }
        }
    }
    Ok((results, rows))
}

pub fn write_csv<W: Write>(rows: &[Row], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}
