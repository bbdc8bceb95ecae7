//! `sim`: command-line front end for the skipping pipeline simulator.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use sparce::annotator::{annotate, AnnotateOptions, SparseMarker};
use sparce::harness::{parse_sparsities, prepare, sweep, write_csv, ExperimentResult, Row};
use sparce::pipeline::{simulate, Mode, PsruPolicy, RunStats, SimConfig};
use sparce::workloads::{KernelSpec, Pattern, Shared};
use sparce::{parse_program, validate, MachineState};

#[derive(Parser, Debug)]
#[command(name = "sim", version, about = "In-order pipeline simulator with sparsity-aware instruction skipping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Baseline,
    Sparce,
    Both,
}

impl ModeArg {
    fn modes(self) -> &'static [Mode] {
        match self {
            ModeArg::Baseline => &[Mode::Baseline],
            ModeArg::Sparce => &[Mode::Sparce],
            ModeArg::Both => &[Mode::Baseline, Mode::Sparce],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Normal,
    /// Every SASA hit opens a pending region.
    Defer,
    /// Never skip.
    Execute,
}

impl From<PolicyArg> for PsruPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Normal => PsruPolicy::Normal,
            PolicyArg::Defer => PsruPolicy::DeferAll,
            PolicyArg::Execute => PsruPolicy::ExecuteAll,
        }
    }
}

#[derive(clap::Args, Debug)]
struct SimOpts {
    /// JSON config (l1_size, l1_line, l1_assoc, l1_hit, l1_miss, fadd_lat, fmul_lat, fmla_lat, int_lat, branch_penalty, ...).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "normal")]
    policy: PolicyArg,
}

impl SimOpts {
    fn load(&self) -> Result<SimConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => SimConfig::default(),
        };
        cfg.psru_policy = self.policy.into();
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one kernel on one input and verify against the golden result.
    Run {
        /// dot:N, conv:HxWxK or gemm:MxNxK[:a|:b]
        #[arg(long)]
        kernel: KernelSpec,
        /// uniform:S, block:S:LEN, relu:MEAN:STD, maxpool:PxQ or dense
        #[arg(long, default_value = "dense")]
        pattern: Pattern,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value = "both")]
        mode: ModeArg,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        sim: SimOpts,
    },
    /// Sweep sparsity levels over several seeds and emit CSV.
    Sweep {
        #[arg(long)]
        kernel: KernelSpec,
        /// Pattern family; its sparsity is replaced by each sweep point.
        #[arg(long, default_value = "uniform:0")]
        pattern: Pattern,
        /// START:STOP:STEP (inclusive) or a comma-separated list
        #[arg(long, default_value = "0:0.9:0.1")]
        sparsity: String,
        /// Number of seeds per point.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// First seed.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// CSV output; standard output when absent.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        sim: SimOpts,
    },
    /// Compare GEMM with B broadcast against A broadcast at each sparsity.
    Compare {
        /// gemm:MxNxK (any shared suffix is ignored)
        #[arg(long)]
        kernel: KernelSpec,
        #[arg(long, default_value = "0.2:0.6:0.1")]
        sparsity: String,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        sim: SimOpts,
    },
    /// Derive a SASA table for an assembly file and insert its load.
    Annotate {
        input: PathBuf,
        /// Marked load: label (trailing `*` matches a prefix) or pc, with optional :lane or :full
        #[arg(long = "sparse", required = true)]
        sparse: Vec<SparseMarker>,
        #[arg(long, default_value_t = sparce::sparce::DEFAULT_SASA_CAPACITY)]
        capacity: usize,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// One table per marked label group, reloaded when control reaches it.
        #[arg(long)]
        refresh: bool,
        #[arg(long)]
        warn_as_error: bool,
    },
    /// Simulate an assembly file and print run statistics.
    Exec {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        mode: ModeArg,
        /// Print the fetch/commit trace to standard error.
        #[arg(long)]
        trace: bool,
        #[command(flatten)]
        sim: SimOpts,
    },
}

fn stats_header(out: &mut impl Write) -> io::Result<()> {
    writeln!(out, "{:<9} {:>10} {:>9} {:>9} {:>8} {:>8} {:>9} {:>9}", "mode", "cycles", "fetched", "executed", "skipped", "squashed", "dc_miss", "sasa_hits")
}

fn stats_line(out: &mut impl Write, mode: Mode, s: &RunStats) -> io::Result<()> {
    writeln!(
        out,
        "{:<9} {:>10} {:>9} {:>9} {:>8} {:>8} {:>9} {:>9}",
        mode.name(),
        s.cycles,
        s.fetched,
        s.executed,
        s.skipped_at_fetch,
        s.squashed,
        s.dcache_misses,
        s.sasa_hits
    )
}

fn write_rows(rows: &[Row], path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => write_csv(rows, fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)?,
        None => write_csv(rows, io::stdout().lock())?,
    }
    Ok(())
}

fn seed_list(first: u64, count: u64) -> Result<Vec<u64>> {
    if count == 0 {
        bail!("--seeds must be at least 1");
    }
    Ok((first..first + count).collect())
}

fn cmd_run(kernel: KernelSpec, pattern: Pattern, seed: u64, mode: ModeArg, csv: Option<PathBuf>, cfg: SimConfig) -> Result<()> {
    let p = prepare(kernel, &cfg)?;
    let inputs = p.kernel.gen_inputs(pattern, seed);
    let mut out = io::stdout().lock();
    writeln!(out, "kernel {kernel}  pattern {pattern}  seed {seed}  zeros {}/{}", inputs.sparse.zeros, inputs.sparse.data.len())?;
    stats_header(&mut out)?;
    let mut runs = Vec::new();
    for &m in mode.modes() {
        let r = p.run_mode(&inputs, m, &p.config)?;
        stats_line(&mut out, m, &r.stats)?;
        runs.push(r);
    }
    let rows: Vec<Row> = if let [b, s] = runs.as_slice() {
        let r = ExperimentResult { spec: kernel, pattern, seed, zeros: inputs.sparse.zeros, baseline: b.clone(), sparce: s.clone() };
        writeln!(
            out,
            "speedup {:.4}  instructions -{:.1}%  cycles -{:.1}%",
            r.speedup(),
            100.0 * r.instruction_reduction(),
            100.0 * r.cycle_reduction()
        )?;
        Row::rows(&r).to_vec()
    } else {
        runs.iter().map(|r| Row::from_outcome(kernel, pattern, seed, r, 1.0)).collect()
    };
    writeln!(out, "live-out verified against golden")?;
    if let Some(path) = csv {
        write_rows(&rows, Some(&path))?;
    }
    Ok(())
}

fn cmd_sweep(kernel: KernelSpec, pattern: Pattern, sparsity: &str, seeds: Vec<u64>, csv: Option<PathBuf>, cfg: SimConfig) -> Result<()> {
    let points = parse_sparsities(sparsity)?;
    let (results, rows) = sweep(kernel, pattern, &points, &seeds, &cfg)?;
    write_rows(&rows, csv.as_deref())?;
    if csv.is_some() {
        let mut out = io::stdout().lock();
        writeln!(out, "{:>8} {:>9} {:>12} {:>12}", "sparsity", "speedup", "instr_red", "cycle_red")?;
        for chunk in results.chunks(seeds.len()) {
            let n = chunk.len() as f64;
            let mean = |f: fn(&ExperimentResult) -> f64| chunk.iter().map(f).sum::<f64>() / n;
            writeln!(
                out,
                "{:>8} {:>9.4} {:>12.4} {:>12.4}",
                chunk[0].pattern.nominal_sparsity(),
                mean(|r| r.speedup()),
                mean(|r| r.instruction_reduction()),
                mean(|r| r.cycle_reduction())
            )?;
        }
    }
    Ok(())
}

fn cmd_compare(kernel: KernelSpec, sparsity: &str, seeds: Vec<u64>, cfg: SimConfig) -> Result<()> {
    let KernelSpec::Gemm { m, n, k, .. } = kernel else {
        bail!("compare needs a gemm kernel");
    };
    let points = parse_sparsities(sparsity)?;
    let b = prepare(KernelSpec::Gemm { m, n, k, shared: Shared::B }, &cfg)?;
    let a = prepare(KernelSpec::Gemm { m, n, k, shared: Shared::A }, &cfg)?;
    let mut out = io::stdout().lock();
    writeln!(out, "{:>8} {:>12} {:>12} {:>10} {:>10}", "sparsity", "fmla_skip_b", "fmla_skip_a", "speedup_b", "speedup_a")?;
    for s in points {
        let (mut fb, mut fa, mut sb, mut sa) = (0.0, 0.0, 0.0, 0.0);
        for &seed in &seeds {
            let rb = b.run(Pattern::Uniform(s), seed)?;
            let ra = a.run(Pattern::Uniform(s), seed)?;
            fb += rb.sparce.stats.fmla_skipped as f64;
            fa += ra.sparce.stats.fmla_skipped as f64;
            sb += rb.speedup();
            sa += ra.speedup();
        }
        let n = seeds.len() as f64;
        writeln!(out, "{:>8} {:>12.1} {:>12.1} {:>10.4} {:>10.4}", s, fb / n, fa / n, sb / n, sa / n)?;
    }
    Ok(())
}

fn cmd_annotate(input: &Path, markers: &[SparseMarker], capacity: usize, out: Option<PathBuf>, refresh: bool, warn_as_error: bool) -> Result<bool> {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let program = parse_program(&text).with_context(|| format!("parsing {}", input.display()))?;
    let annotated = annotate(&program, markers, &AnnotateOptions { capacity, refresh })?;
    for w in &annotated.warnings {
        eprintln!("warning: {w}");
    }
    if warn_as_error && !annotated.warnings.is_empty() {
        eprintln!("error: {} warning(s) with --warn-as-error; no output written", annotated.warnings.len());
        return Ok(false);
    }
    let asm = annotated.program.to_asm();
    match out {
        Some(p) => fs::write(&p, asm).with_context(|| format!("writing {}", p.display()))?,
        None => io::stdout().lock().write_all(asm.as_bytes())?,
    }
    eprintln!("{} SASA entries", annotated.entries.len());
    Ok(true)
}

fn cmd_exec(input: &Path, mode: ModeArg, trace: bool, mut cfg: SimConfig) -> Result<()> {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let program = parse_program(&text).with_context(|| format!("parsing {}", input.display()))?;
    let diags = validate(&program);
    if !diags.is_empty() {
        for d in &diags {
            eprintln!("error: {d}");
        }
        bail!("{} has {} validation error(s)", input.display(), diags.len());
    }
    cfg.trace = trace;
    let mut out = io::stdout().lock();
    stats_header(&mut out)?;
    let mut finals = Vec::new();
    for &m in mode.modes() {
        let r = simulate(&program, MachineState::with_program(&program), &cfg, m).with_context(|| format!("{} run", m.name()))?;
        stats_line(&mut out, m, &r.stats)?;
        if trace {
            for ev in &r.trace {
                eprintln!("{}: {:?}", m.name(), ev);
            }
        }
        finals.push(r.state);
    }
    if let [b, s] = finals.as_slice() {
        writeln!(out, "memory identical: {}", if b.memory == s.memory { "yes" } else { "no" })?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { kernel, pattern, seed, mode, csv, sim } => sim.load().and_then(|cfg| cmd_run(kernel, pattern, seed, mode, csv, cfg)),
        Command::Sweep { kernel, pattern, sparsity, seeds, seed, csv, sim } => {
            sim.load().and_then(|cfg| cmd_sweep(kernel, pattern, &sparsity, seed_list(seed, seeds)?, csv, cfg))
        }
        Command::Compare { kernel, sparsity, seeds, seed, sim } => {
            sim.load().and_then(|cfg| cmd_compare(kernel, &sparsity, seed_list(seed, seeds)?, cfg))
        }
        Command::Annotate { input, sparse, capacity, out, refresh, warn_as_error } => {
            match cmd_annotate(&input, &sparse, capacity, out, refresh, warn_as_error) {
                Ok(true) => Ok(()),
                Ok(false) => return ExitCode::FAILURE,
                Err(e) => Err(e),
            }
        }
        Command::Exec { input, mode, trace, sim } => sim.load().and_then(|cfg| cmd_exec(&input, mode, trace, cfg)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
