//! Density-ratio estimation with a linear logistic head.
//!
//! A classifier trained to tell A (label 1) from B (label 0) has logit
//! `f(h) = log p_A(h)/p_B(h) + log(n_A/n_B)`; subtracting the class prior
//! gives the log density ratio used to rank samples.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{ConceptHypothesis, Source};
use crate::store::EmbeddingMatrix;
use crate::Direction;

pub const DEFAULT_CONTRAST_K: usize = 10;
const GRAD_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioModel {
    pub weights: Vec<f64>,
    pub bias_term: f64,
    /// `ln(n_A / n_B)` of the training data.
    pub prior_correction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DreTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DreTrainConfig {
    fn default() -> Self {
        DreTrainConfig {
            epochs: 20,
            learning_rate: 0.1,
            l2: 1e-4,
            batch_size: 512,
            seed: 0,
        }
    }
}

impl RatioModel {
    pub fn dims(&self) -> usize {
        self.weights.len()
    }

    /// Raw classifier logit `w . h + b`.
    pub fn logit(&self, h: &[f32]) -> Result<f64> {
        if h.len() != self.weights.len() {
            return Err(Error::DimMismatch {
                expected: self.weights.len(),
                actual: h.len(),
                context: "log_ratio input",
            });
        }
        Ok(logit(&self.weights, self.bias_term, h))
    }

    /// Prior-corrected log density ratio `log p_A(h) / p_B(h)`.
    pub fn log_ratio(&self, h: &[f32]) -> Result<f64> {
        Ok(self.logit(h)? - self.prior_correction)
    }

    /// `log_ratio` for every row, in row order.
    pub fn score_rows(&self, m: &EmbeddingMatrix) -> Result<Vec<f64>> {
        if m.cols() != self.dims() {
            return Err(Error::DimMismatch {
                expected: self.dims(),
                actual: m.cols(),
                context: "log_ratio input",
            });
        }
        Ok((0..m.rows())
            .into_par_iter()
            .map(|r| logit(&self.weights, self.bias_term, m.row(r)) - self.prior_correction)
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: RatioModel = serde_json::from_str(&text)?;
        if !m.weights.iter().chain([&m.bias_term, &m.prior_correction]).all(|x| x.is_finite()) {
            return Err(Error::InvalidArgument(format!("{}: non-finite parameter", path.display())));
        }
        Ok(m)
    }
}

fn logit(w: &[f64], b: f64, h: &[f32]) -> f64 {
    w.iter().zip(h).map(|(w, x)| w * *x as f64).sum::<f64>() + b
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// L2-regularized logistic regression, A labelled 1 and B labelled 0,
/// trained by seeded mini-batch gradient descent.
pub fn train_ratio(h_a: &EmbeddingMatrix, h_b: &EmbeddingMatrix, config: &DreTrainConfig) -> Result<RatioModel> {
    if h_a.cols() != h_b.cols() {
        return Err(Error::DimMismatch {
            expected: h_a.cols(),
            actual: h_b.cols(),
            context: "dataset B dims vs dataset A",
        });
    }
    if h_a.rows() == 0 || h_b.rows() == 0 {
        return Err(Error::InvalidArgument("both datasets must be nonempty".into()));
    }
    if !(config.learning_rate > 0.0) || config.batch_size == 0 || !(config.l2 >= 0.0) {
        return Err(Error::InvalidArgument(
            "learning_rate > 0, l2 >= 0 and batch_size >= 1 are required".into(),
        ));
    }
    let d = h_a.cols();
    let n_a = h_a.rows();
    let n = n_a + h_b.rows();
    let sample = |i: usize| -> (&[f32], f64) {
        if i < n_a {
            (h_a.row(i), 1.0)
        } else {
            (h_b.row(i - n_a), 0.0)
        }
    };

    let mut w = vec![0.0f64; d];
    let mut b = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let partials: Vec<(Vec<f64>, f64, f64)> = batch
                .par_chunks(GRAD_CHUNK)
                .map(|rows| {
                    let mut gw = vec![0.0f64; d];
                    let (mut gb, mut loss) = (0.0f64, 0.0f64);
                    for &i in rows {
                        let (h, y) = sample(i);
                        let f = logit(&w, b, h);
                        // -log-likelihood = softplus(f) - y f
                        loss += softplus(f) - y * f;
                        let g = sigmoid(f) - y;
                        for (gw, x) in gw.iter_mut().zip(h) {
                            *gw += g * *x as f64;
                        }
                        gb += g;
                    }
                    (gw, gb, loss)
                })
                .collect();
            let mut gw = vec![0.0f64; d];
            let mut gb = 0.0;
            for (pw, pb, pl) in &partials {
                for (a, x) in gw.iter_mut().zip(pw) {
                    *a += x;
                }
                gb += pb;
                epoch_loss += pl;
            }
            if !epoch_loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let m = batch.len() as f64;
            for (wi, g) in w.iter_mut().zip(&gw) {
                *wi -= config.learning_rate * (g / m + config.l2 * *wi);
            }
            b -= config.learning_rate * gb / m;
        }
        log::debug!("dre epoch {epoch}: loss {:.6}", epoch_loss / n as f64);
    }
    if !w.iter().chain([&b]).all(|x| x.is_finite()) {
        return Err(Error::Diverged { epoch: config.epochs.saturating_sub(1) });
    }
    Ok(RatioModel {
        weights: w,
        bias_term: b,
        prior_correction: (n_a as f64 / h_b.rows() as f64).ln(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastEntry {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastSet {
    /// Largest log-ratio first.
    pub top_a: Vec<ContrastEntry>,
    /// Most negative log-ratio first.
    pub top_b: Vec<ContrastEntry>,
}

/// The `k` samples of A with the largest log-ratio and the `k` samples of B
/// with the smallest. Equal scores are ordered by id.
pub fn top_contrast(model: &RatioModel, h_a: &EmbeddingMatrix, h_b: &EmbeddingMatrix, k: usize) -> Result<ContrastSet> {
    if k == 0 {
        return Err(Error::InvalidArgument("contrast k must be at least 1".into()));
    }
    let pick = |m: &EmbeddingMatrix, side: Direction| -> Result<Vec<ContrastEntry>> {
        if k > m.rows() {
            log::warn!("contrast k={k} exceeds dataset {side} size {}; returning all rows", m.rows());
        }
        let scores = model.score_rows(m)?;
        let mut idx: Vec<usize> = (0..m.rows()).collect();
        idx.sort_by(|&x, &y| {
            let ord = match side {
                Direction::A => scores[y].total_cmp(&scores[x]),
                Direction::B => scores[x].total_cmp(&scores[y]),
            };
            ord.then_with(|| m.ids().get(x).cmp(m.ids().get(y)))
        });
        Ok(idx
            .into_iter()
            .take(k)
            .map(|i| ContrastEntry {
                id: m.ids().get(i).to_string(),
                score: scores[i],
            })
            .collect())
    };
    Ok(ContrastSet {
        top_a: pick(h_a, Direction::A)?,
        top_b: pick(h_b, Direction::B)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DreHypothesisRecord {
    pub direction: Direction,
    pub text: String,
    pub rank: usize,
}

/// Parses a hypothesis file (JSON list of `{direction, text, rank}`) into
/// hypotheses sorted by direction, then rank.
pub fn parse_hypotheses(text: &str) -> Result<Vec<ConceptHypothesis>> {
    let mut records: Vec<DreHypothesisRecord> = serde_json::from_str(text)?;
    records.sort_by_key(|r| (r.direction, r.rank));
    Ok(records
        .into_iter()
        .map(|r| ConceptHypothesis {
            neuron: None,
            direction: r.direction,
            labels: vec![r.text],
            jsd: None,
            rank: r.rank,
            source: Source::Dre,
        })
        .collect())
}

pub fn read_hypotheses(path: &Path) -> Result<Vec<ConceptHypothesis>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_hypotheses(&text)
}
