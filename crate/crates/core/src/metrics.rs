//! Per-UE trial metrics, empirical CDFs and result files.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{DerivedConstants, Mode, PrecoderKind, SystemConfig};
use crate::error::SimError;

/// Spectral efficiency `P_f log2(M_o) (1 - ber)` in bit/s/Hz.
pub fn se_from_ber(ber: f64, prelog: f64, psk_order: usize) -> f64 {
    prelog * (psk_order as f64).log2() * (1.0 - ber)
}

/// Sorted `(value, fraction)` pairs, fraction `(i + 1) / n` at the i-th value.
pub fn empirical_cdf(values: &[f64]) -> Result<Vec<(f64, f64)>, SimError> {
    if values.is_empty() {
        return Err(SimError::Empty("empirical_cdf needs at least one value"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, (i + 1) as f64 / n))
        .collect())
}

/// Median of a sample; mean of the two central values for even sizes.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

/// One UE in one setup under one (mode, precoder) pair, bits summed over blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub setup_id: usize,
    pub ue_id: usize,
    pub mode: Mode,
    pub precoder: PrecoderKind,
    pub bits_total: u64,
    pub bit_errors: u64,
    pub ber: f64,
    pub se: f64,
}

impl TrialMetrics {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        setup_id: usize,
        ue_id: usize,
        mode: Mode,
        precoder: PrecoderKind,
        bits_total: u64,
        bit_errors: u64,
        prelog: f64,
        psk_order: usize,
    ) -> Self {
        let ber = if bits_total == 0 {
            0.0
        } else {
            bit_errors as f64 / bits_total as f64
        };
        TrialMetrics {
            setup_id,
            ue_id,
            mode,
            precoder,
            bits_total,
            bit_errors,
            ber,
            se: se_from_ber(ber, prelog, psk_order),
        }
    }

    fn sort_key(&self) -> (Mode, PrecoderKind, usize, usize) {
        (self.mode, self.precoder, self.setup_id, self.ue_id)
    }
}

/// Distribution of per-UE results for one (mode, precoder) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub mode: Mode,
    pub precoder: PrecoderKind,
    pub samples: usize,
    pub se_cdf: Vec<(f64, f64)>,
    pub ber_cdf: Vec<(f64, f64)>,
    /// Network-average SE: mean over all (setup, UE) samples.
    pub mean_se: f64,
    /// `mean_se` times the streams per UE: average SE of a UE counting
    /// all of its streams.
    pub mean_se_all_streams: f64,
    pub median_se: f64,
    pub mean_ber: f64,
    pub median_ber: f64,
}

/// Run-level facts recorded next to the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub prelog_coherent: f64,
    pub prelog_dstbc: f64,
    /// Per-AP power limit in watts.
    pub rho_max_w: f64,
    /// Largest time-averaged expected AP transmit power seen, per precoder.
    pub max_ap_power_w: Vec<(PrecoderKind, f64)>,
    /// Blocks in which some Gram matrix needed diagonal loading.
    pub regularized_blocks: u64,
    pub config: SystemConfig,
    pub derived: DerivedConstants,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub rows: Vec<TrialMetrics>,
    pub series: Vec<SeriesSummary>,
    pub metadata: Option<RunMetadata>,
}

impl AggregateReport {
    /// Canonical report: rows sorted by (mode, precoder, setup, UE), so any
    /// arrival order of the same rows gives the same report.
    pub fn from_rows(mut rows: Vec<TrialMetrics>, metadata: Option<RunMetadata>) -> Result<Self, SimError> {
        rows.sort_by_key(|a| a.sort_key());
        let streams = metadata.as_ref().map_or(1, |m| m.config.streams) as f64;
        let mut series = Vec::new();
        for chunk in rows.chunk_by(|a, b| (a.mode, a.precoder) == (b.mode, b.precoder)) {
            let se: Vec<f64> = chunk.iter().map(|r| r.se).collect();
            let ber: Vec<f64> = chunk.iter().map(|r| r.ber).collect();
            let n = chunk.len() as f64;
            let mean_se = se.iter().sum::<f64>() / n;
            series.push(SeriesSummary {
                mode: chunk[0].mode,
                precoder: chunk[0].precoder,
                samples: chunk.len(),
                se_cdf: empirical_cdf(&se)?,
                ber_cdf: empirical_cdf(&ber)?,
                mean_se,
                mean_se_all_streams: mean_se * streams,
                median_se: median(&se).unwrap_or(0.0),
                mean_ber: ber.iter().sum::<f64>() / n,
                median_ber: median(&ber).unwrap_or(0.0),
            });
        }
        Ok(AggregateReport { rows, series, metadata })
    }

    pub fn series(&self, mode: Mode, precoder: PrecoderKind) -> Option<&SeriesSummary> {
        self.series.iter().find(|s| s.mode == mode && s.precoder == precoder)
    }

    pub fn rows_for_setup(&self, setup_id: usize) -> Vec<&TrialMetrics> {
        self.rows.iter().filter(|r| r.setup_id == setup_id).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("setup_id,ue_id,mode,precoder,ber,se\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{},{}", r.setup_id, r.ue_id, r.mode, r.precoder, r.ber, r.se);
        }
        out
    }

    pub fn to_json(&self) -> Result<String, SimError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(format!("unknown format '{other}' (expected csv or json)")),
        }
    }
}

pub fn write_results(report: &AggregateReport, path: &Path, format: OutputFormat) -> Result<(), SimError> {
    let text = match format {
        OutputFormat::Csv => report.to_csv(),
        OutputFormat::Json => report.to_json()?,
    };
    std::fs::write(path, text).map_err(|source| SimError::Io {
        path: path.display().to_string(),
        source,
    })
}
