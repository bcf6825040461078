//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O, 4 resource limit, 5 malformed
//! event line, 6 out-of-order events.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::calibrate::{self, EstimateScope, MonitorConfig, TRACE_CSV_HEADER};
use crate::error::Error;
use crate::harness;
use crate::markov::{self, PipelineSpec, ALPHA_NORM};
use crate::report::{self, ReportRow};
use crate::sim::{self, SimConfig, DEFAULT_SUCCESS_CUTOFF};
use crate::stats;

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_DELTAS: &str = "0.1:0.9:0.1";

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) => 3,
            Error::ResourceLimit { .. } => 4,
            Error::Malformed { .. } => 5,
            Error::OutOfOrder { .. } => 6,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        Error::Io(e).into()
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "convlab",
    version,
    about = "Convergence analysis for sequential generate-and-verify pipelines"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact fundamental-matrix analysis of the pipeline chain.
    Exact(ExactArgs),
    /// Monte Carlo campaign, one report row per delta.
    Sweep(SweepArgs),
    /// Empirical CCDF and fitted tail slope.
    Tail(TailArgs),
    /// Replay a JSON-lines event stream through the drift monitor.
    Monitor(MonitorArgs),
    /// Histogram and percentiles of convergence times per delta.
    Distribution(DistributionArgs),
    /// Export one raw batch (sojourn matrix) as CSV plus a JSON sidecar.
    Batch(BatchArgs),
    /// Stepwise harness runs as JSON-lines traces or events.
    Trace(TraceArgs),
    /// Synthesize a piecewise-stationary event stream.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CountingConvention {
    /// Every attempt, including the successful one, counts (stages / delta).
    Attempts,
    /// Also report (stages - (stages - 1) delta) / delta.
    Failures,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TextFormat {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DataFormat {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct ExactArgs {
    #[arg(long)]
    pub delta: f64,
    #[arg(long, default_value_t = 4)]
    pub stages: usize,
    #[arg(long, value_enum, default_value_t = CountingConvention::Attempts)]
    pub counting_convention: CountingConvention,
    #[arg(long, value_enum, default_value_t = TextFormat::Text)]
    pub format: TextFormat,
}

#[derive(Debug, Args)]
pub struct SeedArg {
    /// Base seed; falls back to CONVLAB_SEED, then 42.
    #[arg(long, env = "CONVLAB_SEED", default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma list and/or inclusive `start:end:step` ranges.
    #[arg(long, default_value = DEFAULT_DELTAS)]
    pub deltas: String,
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long, default_value_t = DEFAULT_SUCCESS_CUTOFF)]
    pub cutoff: u64,
    #[arg(long, default_value_t = 4)]
    pub stages: usize,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DataFormat::Csv)]
    pub format: DataFormat,
    /// Include runtime, throughput and peak memory columns.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct TailArgs {
    #[arg(long)]
    pub delta: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pub trials: usize,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Noise floor for the fit; defaults to 10 / trials.
    #[arg(long)]
    pub floor: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    /// Event file, or `-` for standard input.
    #[arg(long, default_value = "-")]
    pub input: String,
    #[arg(long, default_value_t = 100)]
    pub window: usize,
    #[arg(long, default_value_t = 30)]
    pub min_samples: usize,
    #[arg(long, default_value_t = 0.3)]
    pub trigger: f64,
    #[arg(long, default_value_t = 0.35)]
    pub rearm: f64,
    /// Keep one window per stage instead of pooling all stages.
    #[arg(long)]
    pub per_stage: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DistributionArgs {
    /// Same syntax as `sweep --deltas`.
    #[arg(long, default_value = DEFAULT_DELTAS)]
    pub delta: String,
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DataFormat::Csv)]
    pub format: DataFormat,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    #[arg(long)]
    pub delta: f64,
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long, default_value_t = DEFAULT_SUCCESS_CUTOFF)]
    pub cutoff: u64,
    #[arg(long, default_value_t = 4)]
    pub stages: usize,
    /// CSV path; the sidecar goes to `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[arg(long)]
    pub delta: f64,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long, default_value_t = DEFAULT_SUCCESS_CUTOFF)]
    pub max_steps: u64,
    /// Emit monitor events instead of trace records.
    #[arg(long)]
    pub events: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Comma list of `delta:attempts` segments.
    #[arg(long)]
    pub segments: String,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `0.1,0.5` and `0.1:0.9:0.1` (inclusive within 1e-9) or mixtures.
pub fn parse_deltas(spec: &str) -> CliResult<Vec<f64>> {
    let mut out = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let parts: Vec<&str> = item.split(':').collect();
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::usage(format!("bad number {s:?} in delta list")))
        };
        match parts.as_slice() {
            [single] => out.push(num(single)?),
            [start, end, step] => {
                let (start, end, step) = (num(start)?, num(end)?, num(step)?);
                if step.is_nan() || step <= 0.0 || end < start {
                    return Err(CliError::usage(format!("bad delta range {item:?}")));
                }
                let count = ((end - start) / step + 1e-9).floor() as usize;
                for i in 0..=count {
                    let v = start + i as f64 * step;
                    out.push((v * 1e12).round() / 1e12);
                }
            }
            _ => return Err(CliError::usage(format!("bad delta item {item:?}"))),
        }
    }
    if out.is_empty() {
        return Err(CliError::usage("delta list is empty"));
    }
    for &d in &out {
        check_delta(d)?;
    }
    Ok(out)
}

fn check_delta(d: f64) -> CliResult {
    if d.is_finite() && d > 0.0 && d <= 1.0 {
        Ok(())
    } else {
        Err(CliError::usage(format!(
            "delta must lie in (0, 1], got {d}"
        )))
    }
}

fn check_trials(trials: usize) -> CliResult {
    if trials == 0 {
        Err(CliError::usage("--trials must be at least 1"))
    } else {
        Ok(())
    }
}

/// Writes to `path` through a temporary file in the same directory, renamed
/// into place only on success. `None` writes to standard output.
pub fn write_output<F>(path: Option<&Path>, body: F) -> CliResult
where
    F: FnOnce(&mut dyn Write) -> crate::error::Result<()>,
{
    match path {
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            body(&mut lock)?;
            lock.flush()?;
        }
        Some(path) => {
            let dir = match path.parent() {
                Some(p) if !p.as_os_str().is_empty() => p,
                _ => Path::new("."),
            };
            let tmp = tempfile::NamedTempFile::new_in(dir)?;
            {
                let mut w = BufWriter::new(tmp.as_file());
                body(&mut w)?;
                w.flush()?;
            }
            tmp.persist(path).map_err(|e| CliError::from(e.error))?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ExactReport {
    delta: f64,
    stages: usize,
    expected_steps: Vec<f64>,
    spectral_radius: f64,
    alpha: f64,
    alpha_norm: &'static str,
    closed_form: f64,
    relative_difference: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    failures_convention: Option<f64>,
}

pub fn cmd_exact(args: &ExactArgs, out: &mut dyn Write) -> CliResult {
    check_delta(args.delta)?;
    let spec = PipelineSpec::new(args.delta, args.stages)?;
    let analysis = markov::analyze_pipeline(spec)?;
    let closed = markov::exact_expected_steps_closed_form(spec);
    let report = ExactReport {
        delta: spec.delta,
        stages: spec.stages,
        expected_steps: analysis.expected_steps.iter().copied().collect(),
        spectral_radius: analysis.spectral_radius,
        alpha: analysis.alpha,
        alpha_norm: ALPHA_NORM,
        closed_form: closed,
        relative_difference: (analysis.expected_steps[0] - closed).abs() / closed,
        failures_convention: (args.counting_convention == CountingConvention::Failures)
            .then(|| markov::failures_convention_expected_steps(spec)),
    };
    match args.format {
        TextFormat::Json => {
            serde_json::to_writer_pretty(&mut *out, &report).map_err(Error::from)?;
            writeln!(out)?;
        }
        TextFormat::Text => {
            let steps: Vec<String> = report
                .expected_steps
                .iter()
                .map(|s| format!("{s:.6}"))
                .collect();
            writeln!(out, "delta: {}", report.delta)?;
            writeln!(out, "stages: {}", report.stages)?;
            writeln!(
                out,
                "expected steps (attempts convention): {:.6}",
                report.expected_steps[0]
            )?;
            writeln!(out, "expected steps by start stage: [{}]", steps.join(", "))?;
            writeln!(out, "closed form stages/delta: {:.6}", report.closed_form)?;
            writeln!(out, "relative difference: {:e}", report.relative_difference)?;
            writeln!(out, "spectral radius: {:.6}", report.spectral_radius)?;
            writeln!(
                out,
                "alpha ({} norm of N): {:.6}",
                report.alpha_norm, report.alpha
            )?;
            if let Some(f) = report.failures_convention {
                writeln!(out, "expected steps (failures convention): {f:.6}")?;
            }
        }
    }
    Ok(())
}

pub fn cmd_sweep(args: &SweepArgs) -> CliResult {
    let deltas = parse_deltas(&args.deltas)?;
    check_trials(args.trials)?;
    let template = SimConfig::new(1.0, args.trials, args.seed.seed)
        .with_cutoff(args.cutoff)
        .with_stages(args.stages);
    let batches = sim::run_sweep_with(&template, &deltas)?;
    let rows = batches
        .iter()
        .map(|b| ReportRow::from_batch(b, args.timing))
        .collect::<crate::error::Result<Vec<_>>>()?;
    write_output(args.out.as_deref(), |w| match args.format {
        DataFormat::Csv => report::write_csv(&rows, args.timing, w),
        DataFormat::Json => report::write_json(&rows, w),
    })?;
    let trials: usize = batches.iter().map(|b| b.trials()).sum();
    let runtime: f64 = batches.iter().map(|b| b.runtime_seconds).sum();
    let peak = batches
        .iter()
        .map(|b| b.peak_memory_bytes)
        .max()
        .unwrap_or(0);
    eprintln!(
        "{} deltas, {trials} trials, {runtime:.4} s generation, {:.0} trials/s, peak {peak} bytes",
        batches.len(),
        trials as f64 / runtime
    );
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct TailSummary {
    pub delta: f64,
    pub trials: usize,
    pub floor: f64,
    pub fitted_slope: f64,
    pub theoretical_slope: f64,
    pub relative_error: f64,
}

pub fn cmd_tail(args: &TailArgs) -> CliResult<TailSummary> {
    check_delta(args.delta)?;
    check_trials(args.trials)?;
    let batch = sim::run_batch(&SimConfig::new(args.delta, args.trials, args.seed.seed))?;
    let series = stats::ccdf(&batch.totals)?;
    write_output(args.out.as_deref(), |w| {
        writeln!(w, "k,ccdf")?;
        for (k, p) in &series.points {
            writeln!(w, "{k},{p:e}")?;
        }
        Ok(())
    })?;
    let floor = args.floor.unwrap_or(10.0 / args.trials as f64);
    let fitted_slope = stats::tail_decay_fit(&series, floor)?;
    let theoretical_slope = (-args.delta).ln_1p();
    Ok(TailSummary {
        delta: args.delta,
        trials: args.trials,
        floor,
        fitted_slope,
        theoretical_slope,
        relative_error: ((fitted_slope - theoretical_slope) / theoretical_slope).abs(),
    })
}

#[derive(Debug, Default, Serialize)]
pub struct MonitorSummary {
    pub events: usize,
    pub actions: usize,
}

pub fn cmd_monitor(args: &MonitorArgs, stdin: &mut dyn BufRead) -> CliResult<MonitorSummary> {
    let config = MonitorConfig {
        window_size: args.window,
        min_samples: args.min_samples,
        trigger_threshold: args.trigger,
        rearm_threshold: args.rearm,
        scope: if args.per_stage {
            EstimateScope::PerStage
        } else {
            EstimateScope::Aggregate
        },
        ..MonitorConfig::default()
    };
    config.validate()?;
    let mut summary = MonitorSummary::default();
    let mut file_reader;
    let reader: &mut dyn BufRead = if args.input == "-" {
        stdin
    } else {
        file_reader = BufReader::new(File::open(&args.input)?);
        &mut file_reader
    };
    write_output(args.out.as_deref(), |w| {
        writeln!(w, "{TRACE_CSV_HEADER}")?;
        calibrate::replay_jsonl(reader, &config, |row| {
            summary.events += 1;
            if row.action != calibrate::ActionKind::NoAction {
                summary.actions += 1;
            }
            writeln!(w, "{}", row.to_csv())?;
            Ok(())
        })
    })?;
    Ok(summary)
}

#[derive(Debug, Serialize)]
struct DistributionEntry {
    delta: f64,
    trials: usize,
    min: u64,
    p25: u64,
    p50: u64,
    p75: u64,
    p99: u64,
    max: u64,
    histogram: Vec<(u64, usize)>,
}

pub fn cmd_distribution(args: &DistributionArgs) -> CliResult {
    let deltas = parse_deltas(&args.delta)?;
    check_trials(args.trials)?;
    let batches = sim::run_sweep(&deltas, args.trials, args.seed.seed)?;
    let entries: Vec<DistributionEntry> = batches
        .iter()
        .map(|b| {
            let mut sorted = b.totals.clone();
            sorted.sort_unstable();
            let pct = |p| stats::percentile_nearest_rank(&sorted, p);
            DistributionEntry {
                delta: b.config.delta,
                trials: b.trials(),
                min: sorted[0],
                p25: pct(25.0),
                p50: pct(50.0),
                p75: pct(75.0),
                p99: pct(99.0),
                max: *sorted.last().unwrap(),
                histogram: stats::histogram(&sorted),
            }
        })
        .collect();
    write_output(args.out.as_deref(), |w| {
        match args.format {
            DataFormat::Csv => {
                writeln!(w, "delta,k,count,fraction")?;
                for e in &entries {
                    for &(k, c) in &e.histogram {
                        writeln!(
                            w,
                            "{:.6},{k},{c},{:.6}",
                            e.delta,
                            c as f64 / e.trials as f64
                        )?;
                    }
                }
            }
            DataFormat::Json => {
                serde_json::to_writer_pretty(&mut *w, &entries)?;
                writeln!(w)?;
            }
        }
        Ok(())
    })
}

pub fn cmd_batch(args: &BatchArgs) -> CliResult {
    check_delta(args.delta)?;
    check_trials(args.trials)?;
    let config = SimConfig::new(args.delta, args.trials, args.seed.seed)
        .with_cutoff(args.cutoff)
        .with_stages(args.stages);
    let batch = sim::run_batch(&config)?;
    write_output(Some(&args.out), |w| batch.write_csv(w))?;
    let mut sidecar = args.out.clone().into_os_string();
    sidecar.push(".json");
    write_output(Some(Path::new(&sidecar)), |w| {
        serde_json::to_writer_pretty(&mut *w, &batch.sidecar())?;
        writeln!(w)?;
        Ok(())
    })
}

pub fn cmd_trace(args: &TraceArgs) -> CliResult {
    check_delta(args.delta)?;
    check_trials(args.trials)?;
    if args.max_steps < harness::STAGES as u64 {
        return Err(CliError::usage(
            "--max-steps must be at least the stage count",
        ));
    }
    let traces = harness::run_trials(args.delta, args.trials, args.max_steps, args.seed.seed)?;
    write_output(args.out.as_deref(), |w| {
        if args.events {
            let mut ts = 0;
            for (i, t) in traces.iter().enumerate() {
                let events = t.to_events(i as u64, ts);
                ts += events.len() as u64;
                calibrate::write_events_jsonl(&events, &mut *w)?;
            }
            Ok(())
        } else {
            harness::write_traces_jsonl(&traces, w)
        }
    })
}

pub fn parse_segments(spec: &str) -> CliResult<Vec<(f64, u64)>> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (d, n) = item.split_once(':').ok_or_else(|| {
                CliError::usage(format!("segment {item:?} is not delta:attempts"))
            })?;
            let d: f64 = d
                .trim()
                .parse()
                .map_err(|_| CliError::usage(format!("bad delta in {item:?}")))?;
            let n: u64 = n
                .trim()
                .parse()
                .map_err(|_| CliError::usage(format!("bad count in {item:?}")))?;
            check_delta(d)?;
            Ok((d, n))
        })
        .collect()
}

pub fn cmd_synth(args: &SynthArgs) -> CliResult {
    let segments = parse_segments(&args.segments)?;
    let events = calibrate::synthesize_drift_stream(&segments, args.seed.seed)?;
    write_output(args.out.as_deref(), |w| {
        calibrate::write_events_jsonl(&events, w)
    })
}

/// Runs a parsed command, printing summaries to standard error.
pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Exact(a) => {
            let stdout = io::stdout();
            cmd_exact(&a, &mut stdout.lock())
        }
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Tail(a) => {
            let s = cmd_tail(&a)?;
            eprintln!(
                "fitted slope {:.6}, theoretical ln(1-delta) {:.6}, relative error {:.4}",
                s.fitted_slope, s.theoretical_slope, s.relative_error
            );
            Ok(())
        }
        Command::Monitor(a) => {
            let stdin = io::stdin();
            let s = cmd_monitor(&a, &mut stdin.lock())?;
            eprintln!("{} events, {} actions", s.events, s.actions);
            Ok(())
        }
        Command::Distribution(a) => cmd_distribution(&a),
        Command::Batch(a) => cmd_batch(&a),
        Command::Trace(a) => cmd_trace(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_ranges() {
        assert_eq!(
            parse_deltas("0.1:0.9:0.1").unwrap(),
            vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
        );
        assert_eq!(parse_deltas("1.0").unwrap(), vec![1.0]);
        assert_eq!(
            parse_deltas("0.2, 0.5:0.7:0.1").unwrap(),
            vec![0.2, 0.5, 0.6, 0.7]
        );
        assert!(parse_deltas("0").is_err());
        assert!(parse_deltas("0.5:0.1:0.1").is_err());
        assert!(parse_deltas("a").is_err());
        assert!(parse_deltas("").is_err());
        assert!(parse_deltas("0.1:0.2").is_err());
    }

    #[test]
    fn segments() {
        assert_eq!(
            parse_segments("0.7:500,0.2:500").unwrap(),
            vec![(0.7, 500), (0.2, 500)]
        );
        assert!(parse_segments("0.7").is_err());
        assert!(parse_segments("1.5:10").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(
            CliError::from(Error::ResourceLimit {
                cells: 1,
                budget: 0
            })
            .code,
            4
        );
        assert_eq!(
            CliError::from(Error::OutOfOrder {
                previous: 1,
                got: 0
            })
            .code,
            6
        );
        assert_eq!(
            CliError::from(Error::Malformed {
                line: 1,
                message: String::new()
            })
            .code,
            5
        );
        assert_eq!(CliError::from(io::Error::other("x")).code, 3);
        assert_eq!(CliError::from(Error::EmptyInput).code, 2);
    }

    #[test]
    fn exact_text_output() {
        let args = ExactArgs {
            delta: 0.5,
            stages: 4,
            counting_convention: CountingConvention::Failures,
            format: TextFormat::Text,
        };
        let mut buf = Vec::new();
        cmd_exact(&args, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("expected steps (attempts convention): 8.000000"));
        assert!(text.contains("expected steps (failures convention): 5.000000"));
        assert!(text.contains("spectral radius: 0.500000"));
    }
}
