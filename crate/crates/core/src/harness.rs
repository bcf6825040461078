//! Literal step-by-step execution of the four-stage pipeline chain.
//!
//! Each iteration asks a [`StageOracle`] whether the current stage's attempt
//! succeeds; success advances one stage, failure retries. One iteration is
//! one attempt, and the attempt that clears a stage counts toward that
//! stage, so `tau` is the sum of per-stage attempt counts.

use std::io::Write;

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::StageEvent;
use crate::error::{check_probability, Error, Result};
use crate::rng;
use crate::sim::{self, SimConfig};

pub const STAGES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PipelineState {
    CodeGen,
    Compilation,
    InvariantSynth,
    SMTSolving,
    Verified,
}

impl PipelineState {
    pub const ALL: [PipelineState; 5] = [
        PipelineState::CodeGen,
        PipelineState::Compilation,
        PipelineState::InvariantSynth,
        PipelineState::SMTSolving,
        PipelineState::Verified,
    ];

    /// 1-based index (`CodeGen` = 1, `Verified` = 5).
    pub fn index(self) -> usize {
        self as usize + 1
    }

    pub fn from_index(index: usize) -> Option<Self> {
        index.checked_sub(1).and_then(|i| Self::ALL.get(i).copied())
    }

    pub fn is_terminal(self) -> bool {
        self == PipelineState::Verified
    }

    fn advance(self) -> Self {
        Self::from_index(self.index() + 1).unwrap_or(PipelineState::Verified)
    }
}

/// Decides whether an attempt at `stage` succeeds.
pub trait StageOracle {
    fn attempt(&mut self, stage: PipelineState, rng: &mut dyn RngCore) -> bool;
}

/// Memoryless oracle with the same success probability at every stage.
#[derive(Debug, Clone, Copy)]
pub struct BernoulliOracle {
    delta: f64,
}

impl BernoulliOracle {
    pub fn new(delta: f64) -> Result<Self> {
        check_probability("delta", delta)?;
        Ok(Self { delta })
    }
}

impl StageOracle for BernoulliOracle {
    fn attempt(&mut self, _stage: PipelineState, rng: &mut dyn RngCore) -> bool {
        rng.random::<f64>() < self.delta
    }
}

/// Per-stage success probabilities.
#[derive(Debug, Clone, Copy)]
pub struct StageBernoulliOracle {
    deltas: [f64; STAGES],
}

impl StageBernoulliOracle {
    pub fn new(deltas: [f64; STAGES]) -> Result<Self> {
        for d in deltas {
            check_probability("delta", d)?;
        }
        Ok(Self { deltas })
    }
}

impl StageOracle for StageBernoulliOracle {
    fn attempt(&mut self, stage: PipelineState, rng: &mut dyn RngCore) -> bool {
        rng.random::<f64>() < self.deltas[stage.index() - 1]
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysSucceed;

impl StageOracle for AlwaysSucceed {
    fn attempt(&mut self, _: PipelineState, _: &mut dyn RngCore) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysFail;

impl StageOracle for AlwaysFail {
    fn attempt(&mut self, _: PipelineState, _: &mut dyn RngCore) -> bool {
        false
    }
}

impl<F: FnMut(PipelineState, &mut dyn RngCore) -> bool> StageOracle for F {
    fn attempt(&mut self, stage: PipelineState, rng: &mut dyn RngCore) -> bool {
        self(stage, rng)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// `X_0, X_1, ..., X_tau` (one entry per iteration plus the start).
    pub states: Vec<PipelineState>,
    pub total_iterations: u64,
    pub per_stage_attempts: Vec<u64>,
    pub converged: bool,
}

impl TraceRecord {
    /// One event per attempt; timestamps start at `start_ts`.
    pub fn to_events(&self, trial_id: u64, start_ts: u64) -> Vec<StageEvent> {
        let mut events = Vec::with_capacity(self.states.len().saturating_sub(1));
        let mut attempt = 0;
        for (i, pair) in self.states.windows(2).enumerate() {
            let (from, to) = (pair[0], pair[1]);
            attempt += 1;
            let success = to != from;
            events.push(StageEvent {
                trial_id,
                stage: from.index() as u32,
                attempt,
                success,
                timestamp: start_ts + i as u64,
            });
            if success {
                attempt = 0;
            }
        }
        events
    }

    /// Rebuilds a trace from the events of a single trial.
    pub fn from_events(events: &[StageEvent]) -> Result<Self> {
        let mut state = PipelineState::CodeGen;
        let mut states = vec![state];
        let mut per_stage = vec![0u64; STAGES];
        for e in events {
            if e.stage as usize != state.index() {
                return Err(Error::InvalidParameter(format!(
                    "event at ts {} is for stage {} but the trace is at stage {}",
                    e.timestamp,
                    e.stage,
                    state.index()
                )));
            }
            per_stage[state.index() - 1] += 1;
            if e.success {
                state = state.advance();
            }
            states.push(state);
        }
        Ok(Self {
            total_iterations: events.len() as u64,
            converged: state.is_terminal(),
            per_stage_attempts: per_stage,
            states,
        })
    }
}

/// One transition: the next stage on success, the same stage on failure.
pub fn step(
    state: PipelineState,
    oracle: &mut dyn StageOracle,
    rng: &mut dyn RngCore,
) -> Result<PipelineState> {
    if state.is_terminal() {
        return Err(Error::Terminal);
    }
    Ok(if oracle.attempt(state, rng) {
        state.advance()
    } else {
        state
    })
}

fn walk(
    oracle: &mut dyn StageOracle,
    max_steps: u64,
    rng: &mut dyn RngCore,
    mut states: Option<&mut Vec<PipelineState>>,
) -> (u64, Vec<u64>, bool) {
    let mut state = PipelineState::CodeGen;
    let mut per_stage = vec![0u64; STAGES];
    let mut steps = 0;
    while steps < max_steps && !state.is_terminal() {
        per_stage[state.index() - 1] += 1;
        state = step(state, oracle, rng).expect("state is transient");
        steps += 1;
        if let Some(s) = states.as_deref_mut() {
            s.push(state);
        }
    }
    (steps, per_stage, state.is_terminal())
}

/// Iterates from `CodeGen` until `Verified` or `max_steps` iterations.
pub fn run_to_absorption_with_rng(
    oracle: &mut dyn StageOracle,
    max_steps: u64,
    rng: &mut dyn RngCore,
) -> TraceRecord {
    let mut states = vec![PipelineState::CodeGen];
    let (total_iterations, per_stage_attempts, converged) =
        walk(oracle, max_steps, rng, Some(&mut states));
    TraceRecord {
        states,
        total_iterations,
        per_stage_attempts,
        converged,
    }
}

/// [`run_to_absorption_with_rng`] on stream 0 of `seed`.
pub fn run_to_absorption(oracle: &mut dyn StageOracle, max_steps: u64, seed: u64) -> TraceRecord {
    run_to_absorption_with_rng(oracle, max_steps, &mut rng::stream(seed, 0))
}

/// `trials` independent Bernoulli runs; trial `i` uses stream `i` of `seed`.
pub fn run_trials(
    delta: f64,
    trials: usize,
    max_steps: u64,
    seed: u64,
) -> Result<Vec<TraceRecord>> {
    let oracle = BernoulliOracle::new(delta)?;
    Ok((0..trials)
        .into_par_iter()
        .map(|i| {
            let mut o = oracle;
            run_to_absorption_with_rng(&mut o, max_steps, &mut rng::stream(seed, i as u64))
        })
        .collect())
}

/// Convergence times only, without recording state sequences. Entries are
/// `None` for runs that hit `max_steps`.
pub fn run_tau_sample(
    delta: f64,
    trials: usize,
    max_steps: u64,
    seed: u64,
) -> Result<Vec<Option<u64>>> {
    let oracle = BernoulliOracle::new(delta)?;
    Ok((0..trials)
        .into_par_iter()
        .map(|i| {
            let mut o = oracle;
            let (tau, _, converged) =
                walk(&mut o, max_steps, &mut rng::stream(seed, i as u64), None);
            converged.then_some(tau)
        })
        .collect())
}

pub fn write_traces_jsonl<W: Write>(traces: &[TraceRecord], mut out: W) -> Result<()> {
    for t in traces {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Step cap for cross-validation runs; unreachable in practice for the
/// deltas of interest.
pub const CROSS_VALIDATION_MAX_STEPS: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub delta: f64,
    pub trials: usize,
    pub stepwise_mean: f64,
    pub stepwise_variance: f64,
    pub vectorized_mean: f64,
    pub vectorized_variance: f64,
    pub mean_difference: f64,
    /// `sqrt(var_1 / n + var_2 / n)`.
    pub combined_se: f64,
    pub z: f64,
    /// Stepwise over vectorized sample variance.
    pub variance_ratio: f64,
    pub non_converged: usize,
}

impl CrossValidation {
    pub fn mean_agrees(&self) -> bool {
        self.mean_difference.abs() < 3.0 * self.combined_se
            || (self.combined_se == 0.0 && self.mean_difference == 0.0)
    }

    pub fn variance_agrees(&self) -> bool {
        (0.9..=1.1).contains(&self.variance_ratio)
    }

    pub fn passes(&self) -> bool {
        self.non_converged == 0 && self.mean_agrees() && self.variance_agrees()
    }
}

fn mean_and_variance(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Compares the stepwise harness against the vectorized engine at the same
/// delta and trial count, using seeds `derive_seed(seed, 0)` and
/// `derive_seed(seed, 1)` respectively.
pub fn cross_validate(delta: f64, trials: usize, seed: u64) -> Result<CrossValidation> {
    if trials < 1_000 {
        return Err(Error::InvalidParameter(format!(
            "cross-validation needs at least 1000 trials, got {trials}"
        )));
    }
    let stepwise = run_tau_sample(
        delta,
        trials,
        CROSS_VALIDATION_MAX_STEPS,
        rng::derive_seed(seed, 0),
    )?;
    let non_converged = stepwise.iter().filter(|t| t.is_none()).count();
    let batch = sim::run_batch(&SimConfig::new(delta, trials, rng::derive_seed(seed, 1)))?;

    let (m1, v1) = mean_and_variance(stepwise.iter().flatten().map(|&t| t as f64));
    let (m2, v2) = mean_and_variance(batch.totals.iter().map(|&t| t as f64));
    let n = trials as f64;
    let combined_se = (v1 / n + v2 / n).sqrt();
    let diff = m1 - m2;
    let variance_ratio = if v2 == 0.0 {
        if v1 == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        v1 / v2
    };
    Ok(CrossValidation {
        delta,
        trials,
        stepwise_mean: m1,
        stepwise_variance: v1,
        vectorized_mean: m2,
        vectorized_variance: v2,
        mean_difference: diff,
        combined_se,
        z: if combined_se > 0.0 {
            diff / combined_se
        } else {
            0.0
        },
        variance_ratio,
        non_converged,
    })
}
