//! Feature-domain evaluation: mean squared distance to clean features,
//! grouped by condition and SNR tag, with relative reduction against an
//! unprocessed baseline.

use std::collections::BTreeMap;

use serde::Serialize;

use rft_core::frontend::FeatureSequence;

use crate::{Result, RftError};

/// Mean squared per-frame distance between two aligned sequences.
pub fn mse(a: &FeatureSequence, b: &FeatureSequence) -> Result<f64> {
    if a.frames.rows() != b.frames.rows() || a.frames.cols() != b.frames.cols() {
        return Err(RftError::Format(format!(
            "shape mismatch: {}x{} vs {}x{}",
            a.frames.rows(),
            a.frames.cols(),
            b.frames.rows(),
            b.frames.cols()
        )));
    }
    let n = a.frames.rows();
    if n == 0 {
        return Ok(0.0);
    }
    let total: f64 = a
        .frames
        .data()
        .iter()
        .zip(b.frames.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(total / n as f64)
}

#[derive(Debug, Serialize)]
pub struct GroupReport {
    pub condition: String,
    pub snr: String,
    pub utterances: usize,
    pub mse_processed: f64,
    pub mse_baseline: Option<f64>,
    /// Relative reduction vs the baseline, in percent.
    pub reduction_pct: Option<f64>,
}

#[derive(Debug, Default)]
struct Accum {
    utterances: usize,
    processed: f64,
    baseline: f64,
    frames: f64,
}

/// Accumulates per-group distances. Keys are (condition, snr) tags.
#[derive(Debug, Default)]
pub struct Evaluation {
    groups: BTreeMap<(String, String), Accum>,
}

impl Evaluation {
    pub fn add(
        &mut self,
        condition: &str,
        snr: &str,
        clean: &FeatureSequence,
        processed: &FeatureSequence,
        baseline: Option<&FeatureSequence>,
    ) -> Result<()> {
        let frames = clean.frames.rows() as f64;
        let p = mse(clean, processed)? * frames;
        let b = match baseline {
            Some(seq) => mse(clean, seq)? * frames,
            None => 0.0,
        };
        let acc = self.groups.entry((condition.to_string(), snr.to_string())).or_default();
        acc.utterances += 1;
        acc.processed += p;
        acc.baseline += b;
        acc.frames += frames;
        Ok(())
    }

    pub fn reports(&self, has_baseline: bool) -> Vec<GroupReport> {
        self.groups
            .iter()
            .map(|((condition, snr), acc)| {
                let frames = acc.frames.max(1.0);
                let mse_processed = acc.processed / frames;
                let mse_baseline = has_baseline.then_some(acc.baseline / frames);
                let reduction_pct = mse_baseline.map(|b| {
                    if b > 0.0 {
                        (1.0 - mse_processed / b) * 100.0
                    } else {
                        0.0
                    }
                });
                GroupReport {
                    condition: condition.clone(),
                    snr: snr.clone(),
                    utterances: acc.utterances,
                    mse_processed,
                    mse_baseline,
                    reduction_pct,
                }
            })
            .collect()
    }
}

/// Plain text table for human consumption.
pub fn render_table(reports: &[GroupReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:>6} {:>6} {:>14} {:>14} {:>10}\n",
        "condition", "snr", "utts", "mse", "baseline", "reduction"
    ));
    for r in reports {
        let base = r.mse_baseline.map_or("-".to_string(), |v| format!("{v:.6}"));
        let red = r.reduction_pct.map_or("-".to_string(), |v| format!("{v:.2}%"));
        out.push_str(&format!(
            "{:<12} {:>6} {:>6} {:>14.6} {:>14} {:>10}\n",
            r.condition, r.snr, r.utterances, r.mse_processed, base, red
        ));
    }
    out
}
