//! Guidance metrics over session logs: zone occupancy, directional
//! centroid histograms, Bhattacharyya distance and per-block box
//! statistics.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::SessionLog;
use crate::types::TargetEnd;

pub const DEFAULT_BINS: usize = 30;
pub const BC_FLOOR: f64 = 1e-12;
const NORM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("no session logs given")]
    NoLogs,
    #[error("no samples recorded while guiding {0}")]
    NoSamples(TargetEnd),
    #[error("histograms need at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("histogram bin edges differ")]
    EdgeMismatch,
    #[error("histogram is not density-normalized")]
    NotNormalized,
    #[error("cannot write report file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Zone {
    Target,
    Intermediate,
    Opposite,
}

/// Zone of centroid x while guiding toward `target`. The 30% strip nearest
/// the target end is closed on its inner edge; the opposite strip is open
/// on its inner edge.
pub fn classify(x: f64, target: TargetEnd) -> Zone {
    match target {
        TargetEnd::Right if x >= 0.7 => Zone::Target,
        TargetEnd::Right if x < 0.3 => Zone::Opposite,
        TargetEnd::Left if x <= 0.3 => Zone::Target,
        TargetEnd::Left if x > 0.7 => Zone::Opposite,
        _ => Zone::Intermediate,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupancyResult {
    pub target_pct: f64,
    pub intermediate_pct: f64,
    pub opposite_pct: f64,
}

/// Occupancy from raw `(centroid x, target)` samples.
pub fn occupancy_of(samples: impl IntoIterator<Item = (f64, TargetEnd)>) -> Option<OccupancyResult> {
    let mut counts = [0u64; 3];
    for (x, t) in samples {
        counts[classify(x, t) as usize] += 1;
    }
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return None;
    }
    let pct = |c: u64| 100.0 * c as f64 / n as f64;
    Some(OccupancyResult {
        target_pct: pct(counts[0]),
        intermediate_pct: pct(counts[1]),
        opposite_pct: pct(counts[2]),
    })
}

fn centroid_samples(logs: &[SessionLog]) -> impl Iterator<Item = (f64, TargetEnd)> + '_ {
    logs.iter()
        .flat_map(|l| l.records.iter())
        .map(|r| (r.centroid().x, r.target_end))
}

/// Fraction of steps, over all logs, that the school centroid spent in
/// each zone.
pub fn area_occupancy(logs: &[SessionLog]) -> Result<OccupancyResult, AnalyticsError> {
    if logs.is_empty() {
        return Err(AnalyticsError::NoLogs);
    }
    occupancy_of(centroid_samples(logs)).ok_or(AnalyticsError::NoLogs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<f64>,
    pub normalized: bool,
}

impl Histogram {
    /// Raw counts of `samples` in `n_bins` equal bins over [0, 1]. Values
    /// outside are clamped into the end bins.
    pub fn from_samples(samples: &[f64], n_bins: usize) -> Result<Self, AnalyticsError> {
        if n_bins < 2 {
            return Err(AnalyticsError::TooFewBins(n_bins));
        }
        let bin_edges: Vec<f64> = (0..=n_bins).map(|i| i as f64 / n_bins as f64).collect();
        let mut counts = vec![0.0; n_bins];
        for &x in samples {
            let i = ((x * n_bins as f64).floor().max(0.0) as usize).min(n_bins - 1);
            counts[i] += 1.0;
        }
        Ok(Histogram {
            bin_edges,
            counts,
            normalized: false,
        })
    }

    pub fn widths(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Rescale counts to a density (Σ count·width = 1).
    pub fn normalize(&mut self) {
        let widths = self.widths();
        let total: f64 = self.counts.iter().sum();
        if total > 0.0 {
            for (c, w) in self.counts.iter_mut().zip(&widths) {
                *c /= total * w;
            }
            self.normalized = true;
        }
    }

    /// Probability mass per bin.
    pub fn masses(&self) -> Vec<f64> {
        self.counts.iter().zip(self.widths()).map(|(c, w)| c * w).collect()
    }

    pub fn is_density(&self) -> bool {
        self.normalized && (self.masses().iter().sum::<f64>() - 1.0).abs() <= NORM_TOL
    }
}

/// Density histograms of centroid x, split by active target.
pub fn directional_histograms(
    logs: &[SessionLog],
    n_bins: usize,
) -> Result<(Histogram, Histogram), AnalyticsError> {
    if logs.is_empty() {
        return Err(AnalyticsError::NoLogs);
    }
    let mut left = Vec::new();
    let mut right = Vec::new();
    for (x, t) in centroid_samples(logs) {
        match t {
            TargetEnd::Left => left.push(x),
            TargetEnd::Right => right.push(x),
        }
    }
    let build = |xs: &[f64], t| {
        if xs.is_empty() {
            return Err(AnalyticsError::NoSamples(t));
        }
        let mut h = Histogram::from_samples(xs, n_bins)?;
        h.normalize();
        Ok(h)
    };
    Ok((build(&left, TargetEnd::Left)?, build(&right, TargetEnd::Right)?))
}

/// `-ln(max(BC, 1e-12))` with `BC = Σ √(p_i q_i)` over bin masses.
pub fn bhattacharyya_distance(h1: &Histogram, h2: &Histogram) -> Result<f64, AnalyticsError> {
    if h1.bin_edges != h2.bin_edges {
        return Err(AnalyticsError::EdgeMismatch);
    }
    if !h1.is_density() || !h2.is_density() {
        return Err(AnalyticsError::NotNormalized);
    }
    let bc: f64 = h1
        .masses()
        .iter()
        .zip(h2.masses())
        .map(|(p, q)| (p * q).sqrt())
        .sum();
    Ok((-bc.max(BC_FLOOR).ln()).max(0.0))
}

/// Linear interpolation between closest ranks of sorted data:
/// position `q·(n-1)`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn five_number(values: &[f64]) -> Option<FiveNumber> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(FiveNumber {
        min: v[0],
        q1: quantile_sorted(&v, 0.25),
        median: quantile_sorted(&v, 0.5),
        q3: quantile_sorted(&v, 0.75),
        max: v[v.len() - 1],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubIntervalStats {
    pub block: usize,
    pub target_end: TargetEnd,
    pub stats: FiveNumber,
}

/// Five-number summary of every individual fish x within each
/// `switch_every`-step block. A trailing partial block is summarized too.
pub fn subinterval_stats(log: &SessionLog) -> Vec<SubIntervalStats> {
    let block_len = log.header.config.protocol.switch_every.max(1);
    log.records
        .chunks(block_len)
        .enumerate()
        .filter_map(|(block, recs)| {
            let xs: Vec<f64> = recs.iter().flat_map(|r| r.fish.iter().map(|f| f.x)).collect();
            five_number(&xs).map(|stats| SubIntervalStats {
                block,
                target_end: recs[0].target_end,
                stats,
            })
        })
        .collect()
}

/// One condition's aggregate metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub condition: String,
    pub sessions: usize,
    pub steps: usize,
    pub occupancy: OccupancyResult,
    pub bhattacharyya: f64,
    pub n_bins: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<ConditionRow>,
    pub files: Vec<PathBuf>,
}

pub const METRICS_FILE: &str = "metrics.tsv";
pub const METRICS_COLUMNS: &str =
    "condition\tsessions\tsteps\ttarget_pct\tintermediate_pct\topposite_pct\tbhattacharyya\tn_bins";

/// Metrics row for the concatenation of `logs`.
pub fn condition_row(
    condition: &str,
    logs: &[SessionLog],
    n_bins: usize,
) -> Result<(ConditionRow, Histogram, Histogram), AnalyticsError> {
    let occupancy = area_occupancy(logs)?;
    let (left, right) = directional_histograms(logs, n_bins)?;
    let bhattacharyya = bhattacharyya_distance(&left, &right)?;
    let row = ConditionRow {
        condition: condition.to_string(),
        sessions: logs.len(),
        steps: logs.iter().map(|l| l.records.len()).sum(),
        occupancy,
        bhattacharyya,
        n_bins,
    };
    Ok((row, left, right))
}

fn hist_table(h: &Histogram) -> String {
    let mut s = String::from("bin_lo\tbin_hi\tdensity\n");
    for (w, c) in h.bin_edges.windows(2).zip(&h.counts) {
        let _ = writeln!(s, "{}\t{}\t{}", w[0], w[1], c);
    }
    s
}

fn box_table(logs: &[SessionLog]) -> String {
    let mut s = String::from("session\tblock\ttarget_end\tmin\tq1\tmedian\tq3\tmax\n");
    for (i, log) in logs.iter().enumerate() {
        for b in subinterval_stats(log) {
            let f = b.stats;
            let _ = writeln!(
                s,
                "{i}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                b.block, b.target_end, f.min, f.q1, f.median, f.q3, f.max
            );
        }
    }
    s
}

/// Write `metrics.tsv` (one row per condition) plus, per condition,
/// `hist_left_<c>.tsv`, `hist_right_<c>.tsv` and `boxstats_<c>.tsv`.
pub fn emit_report(
    conditions: &[(String, Vec<SessionLog>)],
    out_dir: &Path,
    n_bins: usize,
) -> Result<MetricsReport, AnalyticsError> {
    if conditions.is_empty() || conditions.iter().any(|(_, l)| l.is_empty()) {
        return Err(AnalyticsError::NoLogs);
    }
    let write = |name: String, body: String| -> Result<PathBuf, AnalyticsError> {
        let path = out_dir.join(name);
        std::fs::write(&path, body).map_err(|source| AnalyticsError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    };
    std::fs::create_dir_all(out_dir).map_err(|source| AnalyticsError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut rows = Vec::new();
    let mut files = Vec::new();
    let mut table = format!("{METRICS_COLUMNS}\n");
    for (name, logs) in conditions {
        let (row, left, right) = condition_row(name, logs, n_bins)?;
        let o = row.occupancy;
        let _ = writeln!(
            table,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            row.condition,
            row.sessions,
            row.steps,
            o.target_pct,
            o.intermediate_pct,
            o.opposite_pct,
            row.bhattacharyya,
            row.n_bins
        );
        files.push(write(format!("hist_left_{name}.tsv"), hist_table(&left))?);
        files.push(write(format!("hist_right_{name}.tsv"), hist_table(&right))?);
        files.push(write(format!("boxstats_{name}.tsv"), box_table(logs))?);
        rows.push(row);
    }
    files.insert(0, write(METRICS_FILE.to_string(), table)?);
    Ok(MetricsReport { rows, files })
}
