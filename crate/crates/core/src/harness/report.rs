//! Metrics over a replay log.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::replay::{ReplayLog, StepLog};
use crate::domain::{reduction_percent, word_count, Granularity};

/// Accuracies and mean reduction from the original human-subject study,
/// printed next to ours for orientation only.
pub const REFERENCE_ACCURACY: [(Granularity, f64); 3] = [
    (Granularity::Full, 95.4),
    (Granularity::Partial, 86.7),
    (Granularity::Zero, 83.3),
];
pub const REFERENCE_REDUCTION: f64 = 49.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub granularity: Granularity,
    pub correct: usize,
    pub total: usize,
}

impl AccuracyRow {
    pub fn percent(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionPair {
    pub step: String,
    pub full_words: usize,
    pub partial_words: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub steps: usize,
    pub mismatches: Vec<(String, Vec<String>)>,
    pub accuracy: Vec<AccuracyRow>,
    pub reductions: Vec<ReductionPair>,
    /// Partial steps without a usable full counterpart.
    pub unpaired: Vec<String>,
    pub latency: Option<LatencySummary>,
}

impl Report {
    pub fn mean_reduction(&self) -> Option<f64> {
        if self.reductions.is_empty() {
            return None;
        }
        Some(self.reductions.iter().map(|r| r.percent).sum::<f64>() / self.reductions.len() as f64)
    }

    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

fn latency(steps: &[StepLog]) -> Option<LatencySummary> {
    let mut v: Vec<f64> = steps.iter().map(|s| s.latency_ms).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(LatencySummary {
        count: v.len(),
        mean_ms: v.iter().sum::<f64>() / v.len() as f64,
        p50_ms: percentile(&v, 50.0),
        p95_ms: percentile(&v, 95.0),
        max_ms: v[v.len() - 1],
    })
}

pub fn build_report(log: &ReplayLog) -> Report {
    let mut accuracy: Vec<AccuracyRow> = [Granularity::Full, Granularity::Partial, Granularity::Zero]
        .into_iter()
        .map(|granularity| AccuracyRow {
            granularity,
            correct: 0,
            total: 0,
        })
        .collect();
    let mut reductions = Vec::new();
    let mut unpaired = Vec::new();
    for s in &log.steps {
        if let (true, Some(g)) = (s.graded, s.granularity) {
            let row = accuracy.iter_mut().find(|r| r.granularity == g).expect("all rows");
            row.total += 1;
            let retrieval_ok = !s
                .mismatches
                .iter()
                .any(|m| m.starts_with("top1") || m.starts_with("routing"));
            if retrieval_ok && s.error.is_none() {
                row.correct += 1;
            }
        }
        if s.granularity == Some(Granularity::Partial) {
            let partial = s.transcript.as_deref().map(word_count).unwrap_or(0);
            match s.full_counterpart.as_deref().map(word_count) {
                Some(full) => match reduction_percent(full, partial) {
                    Ok(percent) => reductions.push(ReductionPair {
                        step: s.step.clone(),
                        full_words: full,
                        partial_words: partial,
                        percent,
                    }),
                    Err(e) => {
                        tracing::warn!(step = %s.step, error = %e, "unusable full counterpart");
                        unpaired.push(s.step.clone());
                    }
                },
                None => {
                    tracing::warn!(step = %s.step, "partial step without a full counterpart");
                    unpaired.push(s.step.clone());
                }
            }
        }
    }
    Report {
        scenario: log.scenario.clone(),
        steps: log.steps.len(),
        mismatches: log
            .steps
            .iter()
            .filter(|s| !s.mismatches.is_empty())
            .map(|s| (s.step.clone(), s.mismatches.clone()))
            .collect(),
        accuracy,
        reductions,
        unpaired,
        latency: latency(&log.steps),
    }
}

/// Plain-text table. With `with_latency` false the output depends only on
/// engine behavior, so two replays of the same scenario render identically.
pub fn render(report: &Report, with_latency: bool) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scenario: {}", report.scenario);
    let _ = writeln!(
        out,
        "steps: {}  mismatched: {}",
        report.steps,
        report.mismatches.len()
    );
    let _ = writeln!(out, "\ntop-1 accuracy by granularity");
    for row in &report.accuracy {
        let reference = REFERENCE_ACCURACY
            .iter()
            .find(|(g, _)| *g == row.granularity)
            .map(|(_, v)| *v)
            .unwrap_or_default();
        let ours = if row.total == 0 {
            "n/a".to_owned()
        } else {
            format!("{:.1}%", row.percent())
        };
        let _ = writeln!(
            out,
            "  {:<8} {:>3}/{:<3} {:>7}   (human study reference {reference:.1}%)",
            row.granularity.to_string(),
            row.correct,
            row.total,
            ours
        );
    }
    let _ = writeln!(out, "\nword-count reduction (partial vs full)");
    for r in &report.reductions {
        let _ = writeln!(
            out,
            "  {:<24} {:>3} -> {:<3} {:>6.1}%",
            r.step, r.full_words, r.partial_words, r.percent
        );
    }
    match report.mean_reduction() {
        Some(m) => {
            let _ = writeln!(
                out,
                "  mean {m:.1}% over {} pairs   (human study reference {REFERENCE_REDUCTION:.1}%)",
                report.reductions.len()
            );
        }
        None => {
            let _ = writeln!(out, "  no paired steps");
        }
    }
    for u in &report.unpaired {
        let _ = writeln!(out, "  warning: {u} has no full counterpart, excluded");
    }
    if with_latency {
        if let Some(l) = &report.latency {
            let _ = writeln!(
                out,
                "\nlatency over {} requests: mean {:.2} ms, p50 {:.2} ms, p95 {:.2} ms, max {:.2} ms",
                l.count, l.mean_ms, l.p50_ms, l.p95_ms, l.max_ms
            );
        }
    }
    if !report.mismatches.is_empty() {
        let _ = writeln!(out, "\nmismatches");
        for (step, ms) in &report.mismatches {
            for m in ms {
                let _ = writeln!(out, "  {step}: {m}");
            }
        }
    }
    out
}
