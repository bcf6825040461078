//! Vectorized Monte Carlo engine.
//!
//! Each trial's per-stage sojourn times are drawn directly as
//! `Geometric(delta)` variables on `{1, 2, ...}` by inversion, so a batch is a
//! `trials x stages` matrix filled without stepping through the chain. The
//! trial total is the row sum.

use std::io::Write;
use std::sync::Once;
use std::time::Instant;

use rand::distr::Open01;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};
use crate::memory;
use crate::rng;

pub const DEFAULT_STAGES: usize = 4;
pub const DEFAULT_TRIALS: usize = 10_000;
pub const DEFAULT_SUCCESS_CUTOFF: u64 = 1_000;
pub const DEFAULT_MAX_CELLS: u64 = 1 << 28;

/// Trials per RNG partition. Fixed, so the partitioning (and therefore the
/// output) does not depend on the number of worker threads.
pub const PARTITION_TRIALS: usize = 4_096;

/// The sweep grid used for the headline campaign.
pub const CAMPAIGN_DELTAS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub delta: f64,
    pub stages: usize,
    pub trials: usize,
    pub seed: u64,
    pub success_cutoff: u64,
    /// Upper bound on `trials * stages`.
    pub max_cells: u64,
}

impl SimConfig {
    pub fn new(delta: f64, trials: usize, seed: u64) -> Self {
        Self {
            delta,
            stages: DEFAULT_STAGES,
            trials,
            seed,
            success_cutoff: DEFAULT_SUCCESS_CUTOFF,
            max_cells: DEFAULT_MAX_CELLS,
        }
    }

    pub fn with_stages(mut self, stages: usize) -> Self {
        self.stages = stages;
        self
    }

    pub fn with_cutoff(mut self, cutoff: u64) -> Self {
        self.success_cutoff = cutoff;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("delta", self.delta)?;
        if self.stages == 0 {
            return Err(Error::InvalidParameter("stages must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        if self.success_cutoff < self.stages as u64 {
            return Err(Error::InvalidParameter(format!(
                "success cutoff {} is below the stage count {}",
                self.success_cutoff, self.stages
            )));
        }
        Ok(())
    }
}

/// Raw output of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialBatch {
    /// Row-major `trials x stages` sojourn matrix.
    pub sojourns: Vec<u64>,
    pub totals: Vec<u64>,
    pub success_flags: Vec<bool>,
    pub config: SimConfig,
    pub runtime_seconds: f64,
    pub throughput_trials_per_second: f64,
    /// Zero when no tracking allocator is installed.
    pub peak_memory_bytes: u64,
}

impl TrialBatch {
    pub fn trials(&self) -> usize {
        self.config.trials
    }

    pub fn stages(&self) -> usize {
        self.config.stages
    }

    pub fn sojourn_row(&self, trial: usize) -> &[u64] {
        let s = self.config.stages;
        &self.sojourns[trial * s..(trial + 1) * s]
    }

    /// Sojourn times of one stage across all trials.
    pub fn stage_column(&self, stage: usize) -> impl Iterator<Item = u64> + '_ {
        self.sojourns
            .iter()
            .skip(stage)
            .step_by(self.config.stages)
            .copied()
    }

    pub fn success_rate(&self) -> f64 {
        let ok = self.success_flags.iter().filter(|&&f| f).count();
        ok as f64 / self.trials() as f64
    }

    /// CSV export: `trial,stage1,...,stageN,total,success` with success as
    /// `1`/`0`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = String::from("trial");
        for j in 1..=self.stages() {
            header.push_str(&format!(",stage{j}"));
        }
        header.push_str(",total,success");
        writeln!(out, "{header}")?;
        for i in 0..self.trials() {
            write!(out, "{i}")?;
            for m in self.sojourn_row(i) {
                write!(out, ",{m}")?;
            }
            writeln!(
                out,
                ",{},{}",
                self.totals[i],
                u8::from(self.success_flags[i])
            )?;
        }
        Ok(())
    }

    pub fn sidecar(&self) -> BatchSidecar {
        BatchSidecar {
            config: self.config,
            seed: self.config.seed,
            runtime_seconds: self.runtime_seconds,
            throughput_trials_per_second: self.throughput_trials_per_second,
            peak_memory_bytes: self.peak_memory_bytes,
            memory_measured: memory::is_tracking(),
        }
    }
}

/// JSON metadata written next to a batch CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchSidecar {
    pub config: SimConfig,
    pub seed: u64,
    pub runtime_seconds: f64,
    pub throughput_trials_per_second: f64,
    pub peak_memory_bytes: u64,
    pub memory_measured: bool,
}

/// Inverse-CDF draw of `Geometric(delta)` on `{1, 2, ...}`:
/// `ceil(ln u / ln(1 - delta))`, or 1 when `delta = 1`.
pub fn sample_geometric(delta: f64, uniform_draw: f64) -> Result<u64> {
    check_probability("delta", delta)?;
    if !(uniform_draw > 0.0 && uniform_draw < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "uniform draw must lie in (0, 1), got {uniform_draw}"
        )));
    }
    Ok(geometric_with_log_keep((-delta).ln_1p(), uniform_draw))
}

/// `log_keep` is `ln(1 - delta)`; `-inf` encodes `delta = 1`.
#[inline]
fn geometric_with_log_keep(log_keep: f64, u: f64) -> u64 {
    if log_keep == f64::NEG_INFINITY {
        return 1;
    }
    let k = (u.ln() / log_keep).ceil();
    // `as` saturates for huge values; a ratio rounding to 0 still means one attempt.
    (k as u64).max(1)
}

fn warn_untracked() {
    static WARN: Once = Once::new();
    WARN.call_once(|| {
        log::warn!("no tracking allocator installed; peak memory is reported as 0");
    });
}

/// Runs one batch. Identical configs produce bit-identical sojourn
/// matrices regardless of thread count.
pub fn run_batch(config: &SimConfig) -> Result<TrialBatch> {
    config.validate()?;
    let cells = (config.trials as u64).saturating_mul(config.stages as u64);
    if cells > config.max_cells {
        return Err(Error::ResourceLimit {
            cells,
            budget: config.max_cells,
        });
    }
    let stages = config.stages;
    let log_keep = (-config.delta).ln_1p();
    let seed = config.seed;

    let start = Instant::now();
    let ((sojourns, totals), peak) = memory::measure_peak(|| {
        let mut sojourns = vec![0u64; config.trials * stages];
        sojourns
            .par_chunks_mut(PARTITION_TRIALS * stages)
            .enumerate()
            .for_each(|(part, chunk)| {
                let mut rng = rng::stream(seed, part as u64);
                for cell in chunk.iter_mut() {
                    let u: f64 = rng.sample(Open01);
                    *cell = geometric_with_log_keep(log_keep, u);
                }
            });
        let totals: Vec<u64> = sojourns
            .par_chunks(stages)
            .map(|row| row.iter().sum())
            .collect();
        (sojourns, totals)
    });
    let runtime_seconds = start.elapsed().as_secs_f64().max(1e-9);

    let peak_memory_bytes = match peak {
        Some(bytes) => bytes as u64,
        None => {
            warn_untracked();
            0
        }
    };
    let success_flags = totals.iter().map(|&t| t <= config.success_cutoff).collect();
    Ok(TrialBatch {
        sojourns,
        totals,
        success_flags,
        config: *config,
        runtime_seconds,
        throughput_trials_per_second: config.trials as f64 / runtime_seconds,
        peak_memory_bytes,
    })
}

/// Seed used for batch `index` of a sweep started from `base_seed`.
pub fn sweep_seed(base_seed: u64, index: usize) -> u64 {
    rng::derive_seed(base_seed, index as u64)
}

/// One four-stage batch per delta with the default cutoff.
pub fn run_sweep(deltas: &[f64], trials: usize, base_seed: u64) -> Result<Vec<TrialBatch>> {
    let template = SimConfig::new(1.0, trials, base_seed);
    run_sweep_with(&template, deltas)
}

/// Like [`run_sweep`] but takes stages, cutoff and budget from `template`;
/// the template's delta is ignored and its seed is the base seed.
pub fn run_sweep_with(template: &SimConfig, deltas: &[f64]) -> Result<Vec<TrialBatch>> {
    if deltas.is_empty() {
        return Err(Error::InvalidParameter("delta list is empty".into()));
    }
    for &d in deltas {
        check_probability("delta", d)?;
    }
    deltas
        .iter()
        .enumerate()
        .map(|(i, &delta)| {
            let config = SimConfig {
                delta,
                seed: sweep_seed(template.seed, i),
                ..*template
            };
            run_batch(&config)
        })
        .collect()
}
