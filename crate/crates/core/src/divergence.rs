//! Per-neuron comparison of activation distributions between two datasets.
//!
//! For every neuron the pooled activations of both datasets define shared
//! Freedman-Diaconis bins; the two histograms are compared with the
//! Jensen-Shannon divergence and the sign of the mean gap gives direction.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sae::ActivationMatrix;
use crate::Direction;

pub const MIN_BINS: usize = 8;
pub const MAX_BINS: usize = 512;
const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinRule {
    FreedmanDiaconis,
    /// IQR was zero; `ceil(sqrt(n))` bins.
    SqrtFallback,
    /// All values equal; one zero-width bin.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bins {
    /// Bin boundaries; `edges.len() == bins + 1`. A degenerate bin has
    /// equal endpoints.
    pub edges: Vec<f64>,
    pub rule: BinRule,
    /// `2 * IQR * n^(-1/3)` before the bin count was clamped.
    pub raw_width: Option<f64>,
}

impl Bins {
    pub fn count(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn index_of(&self, v: f64) -> usize {
        let n = self.count();
        let (lo, hi) = (self.edges[0], self.edges[n]);
        if hi <= lo {
            return 0;
        }
        let pos = ((v - lo) / (hi - lo) * n as f64).floor();
        if pos <= 0.0 {
            0
        } else {
            (pos as usize).min(n - 1)
        }
    }
}

/// Linear-interpolation quantile over a sorted sample exposed by index.
fn quantile(n: usize, at: &impl Fn(usize) -> f64, p: f64) -> f64 {
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    let (a, b) = (at(lo), at(hi));
    a + frac * (b - a)
}

fn bins_from_sorted(n: usize, at: impl Fn(usize) -> f64) -> Bins {
    let (lo, hi) = (at(0), at(n - 1));
    if lo == hi {
        return Bins {
            edges: vec![lo, hi],
            rule: BinRule::Degenerate,
            raw_width: None,
        };
    }
    let iqr = quantile(n, &at, 0.75) - quantile(n, &at, 0.25);
    let (count, rule, raw_width) = if iqr > 0.0 {
        let width = 2.0 * iqr * (n as f64).powf(-1.0 / 3.0);
        let count = ((hi - lo) / width).ceil() as usize;
        (count, BinRule::FreedmanDiaconis, Some(width))
    } else {
        let count = (n as f64).sqrt().ceil() as usize;
        (count, BinRule::SqrtFallback, None)
    };
    let count = count.clamp(MIN_BINS, MAX_BINS);
    let step = (hi - lo) / count as f64;
    let mut edges: Vec<f64> = (0..count).map(|i| lo + step * i as f64).collect();
    edges.push(hi);
    Bins {
        edges,
        rule,
        raw_width,
    }
}

/// Freedman-Diaconis bins over the pooled sample, spanning its range.
pub fn fd_edges(values_a: &[f64], values_b: &[f64]) -> Result<Bins> {
    let mut pooled: Vec<f64> = values_a.iter().chain(values_b).copied().collect();
    if pooled.is_empty() {
        return Err(Error::InvalidArgument("fd_edges needs at least one value".into()));
    }
    if pooled.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("fd_edges got a non-finite value".into()));
    }
    pooled.sort_by(f64::total_cmp);
    Ok(bins_from_sorted(pooled.len(), |i| pooled[i]))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramPair {
    pub edges: Vec<f64>,
    pub mass_a: Vec<f64>,
    pub mass_b: Vec<f64>,
}

/// Histograms of both samples over shared [`fd_edges`] bins.
pub fn histogram_pair(values_a: &[f64], values_b: &[f64]) -> Result<HistogramPair> {
    let bins = fd_edges(values_a, values_b)?;
    let hist = |vals: &[f64]| {
        let mut m = vec![0.0; bins.count()];
        for v in vals {
            m[bins.index_of(*v)] += 1.0;
        }
        let n = vals.len().max(1) as f64;
        m.iter_mut().for_each(|x| *x /= n);
        m
    };
    Ok(HistogramPair {
        mass_a: hist(values_a),
        mass_b: hist(values_b),
        edges: bins.edges,
    })
}

fn check_distribution(p: &[f64], name: &str) -> Result<()> {
    if p.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} has negative or non-finite mass")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::InvalidArgument(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

/// Jensen-Shannon divergence in nats. Bins empty in both inputs are skipped.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimMismatch {
            expected: p.len(),
            actual: q.len(),
            context: "jsd",
        });
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    Ok(jsd_unchecked(p, q))
}

fn jsd_unchecked(p: &[f64], q: &[f64]) -> f64 {
    let term = |x: f64, m: f64| if x > 0.0 { x * (x / m).ln() } else { 0.0 };
    let total: f64 = p
        .iter()
        .zip(q)
        .filter(|(a, b)| **a > 0.0 || **b > 0.0)
        .map(|(&a, &b)| {
            let m = 0.5 * (a + b);
            term(a, m) + term(b, m)
        })
        .sum();
    (0.5 * total).max(0.0)
}

pub fn nats_to_bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ActivityMetric {
    /// Mean activation over both datasets.
    #[default]
    Mean,
    /// Fraction of samples where the neuron is active.
    NonzeroFrequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneReason {
    LowMonosemanticity,
    Dominant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronScore {
    pub neuron: usize,
    pub jsd: f64,
    pub mean_gap: f64,
    pub activity_joint: f64,
    pub mono_score: Option<f64>,
    pub pruned: bool,
    pub prune_reasons: Vec<PruneReason>,
}

impl NeuronScore {
    pub fn direction(&self) -> Option<Direction> {
        if self.mean_gap > 0.0 {
            Some(Direction::A)
        } else if self.mean_gap < 0.0 {
            Some(Direction::B)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceConfig {
    /// Fraction of neurons kept by monosemanticity score (when scores exist).
    pub mono_keep: f64,
    /// Fraction of most active neurons flagged as dominant.
    pub prune_frac: f64,
    pub activity: ActivityMetric,
}

impl Default for DivergenceConfig {
    fn default() -> Self {
        DivergenceConfig {
            mono_keep: 0.5,
            prune_frac: 0.10,
            activity: ActivityMetric::Mean,
        }
    }
}

struct ColumnStats {
    jsd: f64,
    sum_a: f64,
    sum_b: f64,
    nnz: usize,
}

/// Scores one neuron from its sorted nonzero activations in each dataset.
fn score_column(sorted_a: &[f32], sorted_b: &[f32], rows_a: usize, rows_b: usize) -> ColumnStats {
    let zeros = (rows_a - sorted_a.len()) + (rows_b - sorted_b.len());
    let n = rows_a + rows_b;
    // Activations are nonnegative, so the pooled order is the zeros followed
    // by the merge of the two sorted nonzero runs.
    let mut merged = Vec::with_capacity(sorted_a.len() + sorted_b.len());
    let (mut i, mut j) = (0, 0);
    while i < sorted_a.len() || j < sorted_b.len() {
        if j == sorted_b.len() || (i < sorted_a.len() && sorted_a[i] <= sorted_b[j]) {
            merged.push(sorted_a[i] as f64);
            i += 1;
        } else {
            merged.push(sorted_b[j] as f64);
            j += 1;
        }
    }
    let bins = bins_from_sorted(n, |k| if k < zeros { 0.0 } else { merged[k - zeros] });

    let hist = |sorted: &[f32], rows: usize| {
        let mut counts = vec![0usize; bins.count()];
        counts[bins.index_of(0.0)] += rows - sorted.len();
        for v in sorted {
            counts[bins.index_of(*v as f64)] += 1;
        }
        counts
            .into_iter()
            .map(|c| c as f64 / rows as f64)
            .collect::<Vec<f64>>()
    };
    let (pa, pb) = (hist(sorted_a, rows_a), hist(sorted_b, rows_b));
    ColumnStats {
        jsd: jsd_unchecked(&pa, &pb),
        sum_a: sorted_a.iter().map(|v| *v as f64).sum(),
        sum_b: sorted_b.iter().map(|v| *v as f64).sum(),
        nnz: sorted_a.len() + sorted_b.len(),
    }
}

/// Indices of the `count` largest keys, ties to the lower index.
fn top_indices(keys: &[f64], count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b)));
    idx.truncate(count);
    idx
}

fn fraction_count(frac: f64, k: usize, name: &str) -> Result<usize> {
    if !(0.0..=1.0).contains(&frac) {
        return Err(Error::InvalidArgument(format!("{name} must be in [0, 1], got {frac}")));
    }
    Ok((frac * k as f64).round() as usize)
}

/// JSD, mean gap and activity for every neuron, with filter flags applied.
/// Pruned neurons stay in the output, flagged.
pub fn neuron_divergences(
    z_a: &ActivationMatrix,
    z_b: &ActivationMatrix,
    mono: Option<&[f64]>,
    config: &DivergenceConfig,
) -> Result<Vec<NeuronScore>> {
    let k = z_a.neurons();
    if z_b.neurons() != k {
        return Err(Error::DimMismatch {
            expected: k,
            actual: z_b.neurons(),
            context: "neuron count of second activation matrix",
        });
    }
    if z_a.rows() == 0 || z_b.rows() == 0 {
        return Err(Error::InvalidArgument("both activation matrices need rows".into()));
    }
    if let Some(m) = mono {
        if m.len() != k {
            return Err(Error::DimMismatch {
                expected: k,
                actual: m.len(),
                context: "monosemanticity scores",
            });
        }
    }
    let keep = fraction_count(config.mono_keep, k, "mono_keep")?;
    let n_dominant = fraction_count(config.prune_frac, k, "prune_frac")?;

    let (rows_a, rows_b) = (z_a.rows(), z_b.rows());
    let mut cols_a = z_a.columns();
    let mut cols_b = z_b.columns();
    let stats: Vec<ColumnStats> = cols_a
        .par_iter_mut()
        .zip(cols_b.par_iter_mut())
        .map(|(a, b)| {
            a.sort_unstable_by(f32::total_cmp);
            b.sort_unstable_by(f32::total_cmp);
            score_column(a, b, rows_a, rows_b)
        })
        .collect();

    let total_rows = (rows_a + rows_b) as f64;
    let mut scores: Vec<NeuronScore> = stats
        .iter()
        .enumerate()
        .map(|(j, s)| NeuronScore {
            neuron: j,
            jsd: s.jsd,
            mean_gap: s.sum_a / rows_a as f64 - s.sum_b / rows_b as f64,
            activity_joint: match config.activity {
                ActivityMetric::Mean => (s.sum_a + s.sum_b) / total_rows,
                ActivityMetric::NonzeroFrequency => s.nnz as f64 / total_rows,
            },
            mono_score: mono.map(|m| m[j]),
            pruned: false,
            prune_reasons: Vec::new(),
        })
        .collect();

    if let Some(m) = mono {
        let mut kept = vec![false; k];
        for j in top_indices(m, keep) {
            kept[j] = true;
        }
        for (s, kept) in scores.iter_mut().zip(kept) {
            if !kept {
                s.pruned = true;
                s.prune_reasons.push(PruneReason::LowMonosemanticity);
            }
        }
    }
    let activity: Vec<f64> = scores.iter().map(|s| s.activity_joint).collect();
    for j in top_indices(&activity, n_dominant) {
        scores[j].pruned = true;
        scores[j].prune_reasons.push(PruneReason::Dominant);
    }
    Ok(scores)
}

/// Unpruned neurons biased toward `direction`, by JSD descending (ties to
/// the lower index), truncated to `top_k`.
pub fn rank_biased(scores: &[NeuronScore], direction: Direction, top_k: usize) -> Vec<NeuronScore> {
    let mut picked: Vec<&NeuronScore> = scores
        .iter()
        .filter(|s| !s.pruned && s.direction() == Some(direction))
        .collect();
    picked.sort_by(|a, b| b.jsd.total_cmp(&a.jsd).then(a.neuron.cmp(&b.neuron)));
    picked.into_iter().take(top_k).cloned().collect()
}

/// Reads `neuron_index<TAB>score` lines; every index in `0..k` must appear once.
pub fn read_mono_scores(path: &Path, k: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let perr = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut scores = vec![None; k];
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (idx, score) = line
            .split_once('\t')
            .ok_or_else(|| perr(i + 1, "expected neuron_index<TAB>score".into()))?;
        let idx: usize = idx.trim().parse().map_err(|e| perr(i + 1, format!("{e}")))?;
        let score: f64 = score.trim().parse().map_err(|e| perr(i + 1, format!("{e}")))?;
        if !score.is_finite() {
            return Err(perr(i + 1, "score is not finite".into()));
        }
        let slot = scores
            .get_mut(idx)
            .ok_or_else(|| perr(i + 1, format!("neuron {idx} out of range for k={k}")))?;
        if slot.replace(score).is_some() {
            return Err(perr(i + 1, format!("neuron {idx} listed twice")));
        }
    }
    scores
        .into_iter()
        .enumerate()
        .map(|(j, s)| {
            s.ok_or_else(|| Error::DimMismatch {
                expected: k,
                actual: j,
                context: "monosemanticity file is missing neurons",
            })
        })
        .collect()
}
