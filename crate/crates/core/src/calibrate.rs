//! Runtime drift monitor.
//!
//! Per-attempt outcomes feed a count-based sliding window. Once the window
//! holds `min_samples` outcomes its success fraction is the running estimate
//! of `delta`. An armed monitor fires the next action of its policy when the
//! estimate drops below `trigger_threshold`, then stays quiet until the
//! estimate climbs back to `rearm_threshold`.

use std::collections::VecDeque;
use std::fmt;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};
use crate::regions::{classify_unchecked, RegionLabel, RegionThresholds};
use crate::rng;

/// One attempt at one pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEvent {
    #[serde(rename = "trial")]
    pub trial_id: u64,
    /// 1-based stage index.
    pub stage: u32,
    /// 1-based attempt index within the stage.
    pub attempt: u64,
    pub success: bool,
    #[serde(rename = "ts")]
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    NoAction,
    ContextReset,
    TemperatureAdjust,
    Alert,
}

impl ActionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::NoAction => "NoAction",
            ActionKind::ContextReset => "ContextReset",
            ActionKind::TemperatureAdjust => "TemperatureAdjust",
            ActionKind::Alert => "Alert",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationAction {
    pub kind: ActionKind,
    pub delta_hat: Option<f64>,
    pub timestamp: u64,
}

/// Whether one window pools all stages or each stage keeps its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EstimateScope {
    #[default]
    Aggregate,
    PerStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    pub window_size: usize,
    pub min_samples: usize,
    pub trigger_threshold: f64,
    pub rearm_threshold: f64,
    /// Actions for the first, second, ... trigger; the last one repeats.
    pub action_policy: Vec<ActionKind>,
    pub stages: u32,
    pub scope: EstimateScope,
    pub thresholds: RegionThresholds,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            window_size: 100,
            min_samples: 30,
            trigger_threshold: 0.3,
            rearm_threshold: 0.35,
            action_policy: vec![
                ActionKind::Alert,
                ActionKind::ContextReset,
                ActionKind::TemperatureAdjust,
            ],
            stages: 4,
            scope: EstimateScope::Aggregate,
            thresholds: RegionThresholds::default(),
        }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.window_size == 0 || self.min_samples == 0 {
            return bad("window size and min samples must be positive".into());
        }
        if self.min_samples > self.window_size {
            return bad(format!(
                "min samples {} exceeds window size {}",
                self.min_samples, self.window_size
            ));
        }
        if self.trigger_threshold.is_nan()
            || self.rearm_threshold.is_nan()
            || self.trigger_threshold >= self.rearm_threshold
        {
            return bad(format!(
                "trigger threshold {} must be below rearm threshold {}",
                self.trigger_threshold, self.rearm_threshold
            ));
        }
        if self.action_policy.is_empty() || self.action_policy.contains(&ActionKind::NoAction) {
            return bad("action policy must be non-empty and free of NoAction".into());
        }
        if self.stages == 0 {
            return bad("stages must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Window {
    outcomes: VecDeque<bool>,
    capacity: usize,
    successes: usize,
    armed: bool,
}

impl Window {
    fn new(capacity: usize) -> Self {
        Self {
            outcomes: VecDeque::with_capacity(capacity),
            capacity,
            successes: 0,
            armed: true,
        }
    }

    fn push(&mut self, success: bool) {
        if self.outcomes.len() == self.capacity {
            if let Some(true) = self.outcomes.pop_front() {
                self.successes -= 1;
            }
        }
        self.outcomes.push_back(success);
        self.successes += usize::from(success);
    }

    fn estimate(&self, min_samples: usize) -> Option<f64> {
        let len = self.outcomes.len();
        (len >= min_samples && len > 0).then(|| self.successes as f64 / len as f64)
    }
}

/// Mutable monitor state. One owner drives it through [`observe`].
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationState {
    windows: Vec<Window>,
    min_samples: usize,
    current: usize,
    last_timestamp: Option<u64>,
    pub delta_hat: Option<f64>,
    pub region: Option<RegionLabel>,
    pub actions_emitted: u64,
}

impl CalibrationState {
    pub fn new(config: &MonitorConfig) -> Self {
        let count = match config.scope {
            EstimateScope::Aggregate => 1,
            EstimateScope::PerStage => config.stages as usize,
        };
        Self {
            windows: vec![Window::new(config.window_size); count],
            min_samples: config.min_samples,
            current: 0,
            last_timestamp: None,
            delta_hat: None,
            region: None,
            actions_emitted: 0,
        }
    }

    /// Estimate for the window touched by the latest event.
    pub fn estimate_delta(&self) -> Option<f64> {
        self.windows[self.current].estimate(self.min_samples)
    }

    /// Estimate for 1-based `stage`; in aggregate mode every stage shares
    /// the pooled window.
    pub fn stage_estimate(&self, stage: u32) -> Option<f64> {
        let idx = if self.windows.len() == 1 {
            0
        } else {
            (stage as usize).checked_sub(1)?
        };
        self.windows.get(idx)?.estimate(self.min_samples)
    }

    pub fn armed(&self) -> bool {
        self.windows[self.current].armed
    }

    /// Outcomes in the current window, oldest first.
    pub fn window(&self) -> impl Iterator<Item = bool> + '_ {
        self.windows[self.current].outcomes.iter().copied()
    }
}

/// Feeds one event through the monitor.
pub fn observe(
    state: &mut CalibrationState,
    event: &StageEvent,
    config: &MonitorConfig,
) -> Result<CalibrationAction> {
    if let Some(previous) = state.last_timestamp {
        if event.timestamp < previous {
            return Err(Error::OutOfOrder {
                previous,
                got: event.timestamp,
            });
        }
    }
    if event.stage == 0 || event.stage > config.stages || event.attempt == 0 {
        return Err(Error::InvalidParameter(format!(
            "event stage {} / attempt {} out of bounds",
            event.stage, event.attempt
        )));
    }
    state.last_timestamp = Some(event.timestamp);
    state.current = if state.windows.len() == 1 {
        0
    } else {
        event.stage as usize - 1
    };

    let min_samples = state.min_samples;
    let window = &mut state.windows[state.current];
    window.push(event.success);
    let delta_hat = window.estimate(min_samples);

    let mut kind = ActionKind::NoAction;
    if let Some(d) = delta_hat {
        if window.armed && d < config.trigger_threshold {
            let idx = (state.actions_emitted as usize).min(config.action_policy.len() - 1);
            kind = config.action_policy[idx];
            window.armed = false;
            state.actions_emitted += 1;
        } else if !window.armed && d >= config.rearm_threshold {
            window.armed = true;
        }
    }
    state.delta_hat = delta_hat;
    state.region = delta_hat.map(|d| classify_unchecked(d, config.thresholds));
    Ok(CalibrationAction {
        kind,
        delta_hat,
        timestamp: event.timestamp,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub timestamp: u64,
    pub delta_hat: Option<f64>,
    pub region: Option<RegionLabel>,
    pub action: ActionKind,
}

pub const TRACE_CSV_HEADER: &str = "ts,delta_hat,region,action";

impl TraceRow {
    /// CSV line without newline; undefined estimates are empty fields.
    pub fn to_csv(&self) -> String {
        let d = self
            .delta_hat
            .map(|d| format!("{d:.6}"))
            .unwrap_or_default();
        let r = self.region.map(RegionLabel::as_str).unwrap_or("");
        format!("{},{d},{r},{}", self.timestamp, self.action)
    }
}

/// Runs a fresh monitor across `events` and returns one row per event.
pub fn replay<'a, I>(events: I, config: &MonitorConfig) -> Result<Vec<TraceRow>>
where
    I: IntoIterator<Item = &'a StageEvent>,
{
    config.validate()?;
    let mut state = CalibrationState::new(config);
    events
        .into_iter()
        .map(|e| {
            let action = observe(&mut state, e, config)?;
            Ok(TraceRow {
                timestamp: e.timestamp,
                delta_hat: state.delta_hat,
                region: state.region,
                action: action.kind,
            })
        })
        .collect()
}

/// Streaming replay of a JSON-lines event source. Blank lines are skipped;
/// unparseable lines fail with [`Error::Malformed`] carrying the 1-based line
/// number.
pub fn replay_jsonl<R, F>(reader: R, config: &MonitorConfig, mut sink: F) -> Result<()>
where
    R: BufRead,
    F: FnMut(TraceRow) -> Result<()>,
{
    config.validate()?;
    let mut state = CalibrationState::new(config);
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::Malformed {
            line: idx + 1,
            message,
        };
        let event: StageEvent =
            serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let action = match observe(&mut state, &event, config) {
            Err(Error::InvalidParameter(m)) => return Err(malformed(m)),
            other => other?,
        };
        sink(TraceRow {
            timestamp: event.timestamp,
            delta_hat: state.delta_hat,
            region: state.region,
            action: action.kind,
        })?;
    }
    Ok(())
}

pub fn write_events_jsonl<W: Write>(events: &[StageEvent], mut out: W) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Bernoulli outcome stream, one segment after another, arranged as
/// four-stage pipeline attempts: a success advances the stage (and starts a
/// new trial after the last stage), a failure bumps the attempt counter.
/// Timestamps run 0, 1, 2, ...
pub fn synthesize_drift_stream(segments: &[(f64, u64)], seed: u64) -> Result<Vec<StageEvent>> {
    const STAGES: u32 = 4;
    if segments.is_empty() {
        return Err(Error::InvalidParameter("segment list is empty".into()));
    }
    for &(d, n) in segments {
        check_probability("segment delta", d)?;
        if n == 0 {
            return Err(Error::InvalidParameter(
                "segment attempts must be positive".into(),
            ));
        }
    }
    let mut rng = rng::stream(seed, 0);
    let total: u64 = segments.iter().map(|s| s.1).sum();
    let mut events = Vec::with_capacity(total as usize);
    let (mut trial, mut stage, mut attempt, mut ts) = (0u64, 1u32, 1u64, 0u64);
    for &(delta, attempts) in segments {
        for _ in 0..attempts {
            let success = rng.random::<f64>() < delta;
            events.push(StageEvent {
                trial_id: trial,
                stage,
                attempt,
                success,
                timestamp: ts,
            });
            ts += 1;
            if success {
                attempt = 1;
                if stage == STAGES {
                    stage = 1;
                    trial += 1;
                } else {
                    stage += 1;
                }
            } else {
                attempt += 1;
            }
        }
    }
    Ok(events)
}
