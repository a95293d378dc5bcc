//! Quantile-based histogram equalization: maps a scalar stream's empirical
//! distribution onto a reference distribution via g(x) = F_ref^-1(F_test(x)).

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::frontend::FeatureSequence;
use crate::mat::Mat;

/// Monotone table of (cdf level, feature value) breakpoints for one
/// feature dimension. Levels are q / n_quantiles for q = 1..n_quantiles;
/// values are empirical quantiles with linear interpolation between order
/// statistics (type-7 convention).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTable {
    pub breakpoints: Vec<(f64, f64)>,
}

impl QuantileTable {
    pub fn n_quantiles(&self) -> usize {
        self.breakpoints.len()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.breakpoints.iter().map(|&(_, v)| v)
    }

    /// Rebuilds a table from stored values on the implicit q/n cdf grid.
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        QuantileTable {
            breakpoints: values
                .iter()
                .enumerate()
                .map(|(i, &v)| ((i + 1) as f64 / n as f64, v))
                .collect(),
        }
    }
}

/// Builds the empirical quantile table of a scalar stream.
pub fn build_table(samples: &[f64], n_quantiles: usize) -> Result<QuantileTable> {
    if samples.len() < 2 {
        return Err(Error::Estimation(format!(
            "need at least 2 samples to build a quantile table, got {}",
            samples.len()
        )));
    }
    if n_quantiles == 0 {
        return Err(Error::Config("n_quantiles must be positive".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample"));
    let n = sorted.len();
    let mut breakpoints = Vec::with_capacity(n_quantiles);
    for q in 1..=n_quantiles {
        let p = q as f64 / n_quantiles as f64;
        let h = (n - 1) as f64 * p;
        let lo = h as usize;
        let frac = h - lo as f64;
        let v = if lo + 1 < n { sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac } else { sorted[n - 1] };
        breakpoints.push((p, v));
    }
    Ok(QuantileTable { breakpoints })
}

/// Piecewise-linear empirical CDF evaluated at `x`, with linear
/// extrapolation beyond the outermost breakpoints. Flat regions (repeated
/// values) map to the upper cdf level so the map stays monotone.
fn cdf_of(table: &QuantileTable, x: f64) -> f64 {
    let b = &table.breakpoints;
    let q = b.len();
    if q == 1 || b[q - 1].1 == b[0].1 {
        // degenerate (constant) table
        return if x < b[0].1 { 0.0 } else { b[q - 1].0 };
    }
    if x <= b[0].1 {
        if x == b[0].1 {
            return b[0].0;
        }
        let (c0, v0) = b[0];
        let (c1, v1) = b.iter().copied().find(|&(_, v)| v > v0).unwrap();
        return c0 + (x - v0) * (c1 - c0) / (v1 - v0);
    }
    if x >= b[q - 1].1 {
        if x == b[q - 1].1 {
            return b[q - 1].0;
        }
        let (c1, v1) = b[q - 1];
        let (c0, v0) = b.iter().rev().copied().find(|&(_, v)| v < v1).unwrap();
        return c1 + (x - v1) * (c1 - c0) / (v1 - v0);
    }
    // binary search for the segment containing x
    let mut lo = 0usize;
    let mut hi = q - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if b[mid].1 <= x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (c0, v0) = b[lo];
    let (c1, v1) = b[hi];
    if x == v0 {
        // report the highest level among equal values
        let mut k = lo;
        while k + 1 < q && b[k + 1].1 == x {
            k += 1;
        }
        return b[k].0;
    }
    if v1 == v0 {
        return c1;
    }
    c0 + (x - v0) * (c1 - c0) / (v1 - v0)
}

/// Inverse of the reference CDF at level `u`, with linear extrapolation
/// outside the table's cdf range.
fn inv_cdf(table: &QuantileTable, u: f64) -> f64 {
    let b = &table.breakpoints;
    let q = b.len();
    if q == 1 {
        return b[0].1;
    }
    if u <= b[0].0 {
        let (c0, v0) = b[0];
        let (c1, v1) = b[1];
        return v0 + (u - c0) * (v1 - v0) / (c1 - c0);
    }
    if u >= b[q - 1].0 {
        let (c1, v1) = b[q - 1];
        let (c0, v0) = b[q - 2];
        return v1 + (u - c1) * (v1 - v0) / (c1 - c0);
    }
    let mut lo = 0usize;
    let mut hi = q - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if b[mid].0 <= u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (c0, v0) = b[lo];
    let (c1, v1) = b[hi];
    v0 + (u - c0) * (v1 - v0) / (c1 - c0)
}

/// g(x) = F_ref^-1(F_test(x)); monotone non-decreasing in `x`.
pub fn equalize(x: f64, test: &QuantileTable, reference: &QuantileTable) -> f64 {
    inv_cdf(reference, cdf_of(test, x))
}

/// How the per-dimension test tables are obtained in [`equalize_sequence`].
pub enum TestTables<'a> {
    /// Build a table per dimension from the utterance itself.
    PerUtterance { n_quantiles: usize },
    /// Use externally supplied tables (e.g. corpus-level).
    Given(&'a [QuantileTable]),
}

/// Equalizes every dimension of a feature sequence against per-dimension
/// reference tables. Shape and kind are preserved.
pub fn equalize_sequence(
    seq: &FeatureSequence,
    references: &[QuantileTable],
    mode: TestTables<'_>,
) -> Result<FeatureSequence> {
    let d = seq.dim();
    if references.len() != d {
        return Err(Error::Dimension { expected: d, got: references.len(), what: "reference tables" });
    }
    if let TestTables::PerUtterance { .. } = mode {
        if seq.n_frames() < 2 {
            return Err(Error::Estimation(format!(
                "utterance with {} frame(s) is too short to build a test table",
                seq.n_frames()
            )));
        }
    }
    if let TestTables::Given(tables) = &mode {
        if tables.len() != d {
            return Err(Error::Dimension { expected: d, got: tables.len(), what: "test tables" });
        }
    }
    let mut out = Mat::zeros(seq.n_frames(), d);
    for j in 0..d {
        let column = seq.frames.col(j);
        let owned_test;
        let test: &QuantileTable = match &mode {
            TestTables::PerUtterance { n_quantiles } => {
                owned_test = build_table(&column, *n_quantiles)?;
                &owned_test
            }
            TestTables::Given(tables) => &tables[j],
        };
        for (t, &x) in column.iter().enumerate() {
            out[(t, j)] = equalize(x, test, &references[j]);
        }
    }
    Ok(FeatureSequence::new(out, seq.kind, seq.frame_period_ms))
}
