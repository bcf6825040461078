//! Per-delta report rows for sweep output.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::regions::{classify, RegionLabel, RegionThresholds};
use crate::sim::TrialBatch;
use crate::stats::{summarize, SummaryStats};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub delta: f64,
    pub theory: f64,
    pub mean: f64,
    pub std: f64,
    pub conservative_factor: f64,
    pub p99: f64,
    pub success_rate_percent: f64,
    pub efficiency: f64,
    pub ci_width_99: f64,
    pub region: RegionLabel,
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub p25: f64,
    pub p75: f64,
    pub iqr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub throughput: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak_memory_bytes: Option<u64>,
}

pub const CSV_HEADER: &str = "delta,theory,mean,std,conservative_factor,p99,success_rate_percent,\
efficiency,ci_width_99,region,variance,skewness,kurtosis,p25,p75,iqr";
pub const CSV_TIMING_HEADER: &str = ",runtime_seconds,throughput,peak_memory_bytes";

impl ReportRow {
    /// Timing columns are filled only when `timing` is set, so that the
    /// default report is a pure function of the flags.
    pub fn from_batch(batch: &TrialBatch, timing: bool) -> Result<Self> {
        let s = summarize(batch)?;
        Ok(Self::from_summary(batch, &s, timing))
    }

    pub fn from_summary(batch: &TrialBatch, s: &SummaryStats, timing: bool) -> Self {
        let cfg = &batch.config;
        Self {
            delta: cfg.delta,
            theory: cfg.stages as f64 / cfg.delta,
            mean: s.mean,
            std: s.std,
            conservative_factor: s.conservative_factor,
            p99: s.p99,
            success_rate_percent: 100.0 * s.success_rate,
            efficiency: s.efficiency,
            ci_width_99: s.ci_width_99,
            region: classify(cfg.delta, RegionThresholds::default())
                .expect("batch delta was validated"),
            variance: s.variance,
            skewness: s.skewness,
            kurtosis: s.kurtosis,
            p25: s.p25,
            p75: s.p75,
            iqr: s.iqr,
            runtime_seconds: timing.then_some(batch.runtime_seconds),
            throughput: timing.then_some(batch.throughput_trials_per_second),
            peak_memory_bytes: timing.then_some(batch.peak_memory_bytes),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut line = format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.delta,
            self.theory,
            self.mean,
            self.std,
            self.conservative_factor,
            self.p99,
            self.success_rate_percent,
            self.efficiency,
            self.ci_width_99,
            self.region,
            self.variance,
            self.skewness,
            self.kurtosis,
            self.p25,
            self.p75,
            self.iqr,
        );
        if let (Some(r), Some(t), Some(m)) = (
            self.runtime_seconds,
            self.throughput,
            self.peak_memory_bytes,
        ) {
            line.push_str(&format!(",{r:.6},{t:.6},{m}"));
        }
        line
    }
}

pub fn write_csv<W: Write>(rows: &[ReportRow], timing: bool, mut out: W) -> Result<()> {
    if timing {
        writeln!(out, "{CSV_HEADER}{CSV_TIMING_HEADER}")?;
    } else {
        writeln!(out, "{CSV_HEADER}")?;
    }
    for row in rows {
        writeln!(out, "{}", row.to_csv())?;
    }
    Ok(())
}

pub fn write_json<W: Write>(rows: &[ReportRow], mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, rows)?;
    out.write_all(b"\n")?;
    Ok(())
}
