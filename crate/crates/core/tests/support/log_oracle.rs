//! Recomputes session metrics straight from JSONL log text, without the
//! crate's own log types or analytics code.

#![allow(dead_code)]

use serde_json::Value;

pub struct RawMetrics {
    pub steps: usize,
    pub target_pct: f64,
    pub intermediate_pct: f64,
    pub opposite_pct: f64,
    pub bhattacharyya: f64,
}

/// `(centroid x, target is right)` per record, header line skipped.
pub fn centroid_samples(jsonl: &str) -> Vec<(f64, bool)> {
    jsonl
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let v: Value = serde_json::from_str(line).expect("record parses");
            let fish = v["fish"].as_array().expect("fish array");
            let sum: f64 = fish.iter().map(|f| f[0].as_f64().unwrap()).sum();
            let right = match v["target_end"].as_str() {
                Some("right") => true,
                Some("left") => false,
                other => panic!("bad target_end {other:?}"),
            };
            (sum / fish.len() as f64, right)
        })
        .collect()
}

pub fn target_ends(jsonl: &str) -> Vec<String> {
    jsonl
        .lines()
        .skip(1)
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["target_end"].as_str().unwrap().to_string())
        .collect()
}

fn bin_masses(xs: &[f64], bins: usize) -> Vec<f64> {
    let mut counts = vec![0.0; bins];
    for &x in xs {
        let i = (x * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize;
        counts[i] += 1.0;
    }
    counts.iter().map(|c| c / xs.len() as f64).collect()
}

/// Occupancy zones: the 30% strip at the target end counts its inner edge,
/// the opposite strip does not.
pub fn metrics(logs: &[String], bins: usize) -> RawMetrics {
    let samples: Vec<(f64, bool)> = logs.iter().flat_map(|l| centroid_samples(l)).collect();
    let (mut target, mut opposite) = (0usize, 0usize);
    for &(x, right) in &samples {
        let (hit, miss) = if right { (x >= 0.7, x < 0.3) } else { (x <= 0.3, x > 0.7) };
        target += hit as usize;
        opposite += miss as usize;
    }
    let n = samples.len() as f64;
    let left: Vec<f64> = samples.iter().filter(|s| !s.1).map(|s| s.0).collect();
    let right: Vec<f64> = samples.iter().filter(|s| s.1).map(|s| s.0).collect();
    let bc: f64 = bin_masses(&left, bins)
        .iter()
        .zip(bin_masses(&right, bins))
        .map(|(p, q)| (p * q).sqrt())
        .sum();
    RawMetrics {
        steps: samples.len(),
        target_pct: 100.0 * target as f64 / n,
        intermediate_pct: 100.0 * (samples.len() - target - opposite) as f64 / n,
        opposite_pct: 100.0 * opposite as f64 / n,
        bhattacharyya: (-bc.max(1e-12).ln()).max(0.0),
    }
}

/// The `metrics.tsv` row for `condition`, keyed by column name.
pub fn metrics_row(tsv: &str, condition: &str) -> std::collections::HashMap<String, String> {
    let mut lines = tsv.lines();
    let header: Vec<&str> = lines.next().unwrap().split('\t').collect();
    let row = lines
        .map(|l| l.split('\t').collect::<Vec<_>>())
        .find(|r| r[0] == condition)
        .unwrap_or_else(|| panic!("no row for {condition}"));
    header.iter().map(|h| h.to_string()).zip(row.iter().map(|v| v.to_string())).collect()
}
