//! Scoring hypotheses against ground-truth labels and aggregate statistics.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::ensemble::CandidateSet;
use crate::error::{Error, Result};
use crate::labels::ConceptHypothesis;
use crate::text_table::{cosine, TextEmbeddingTable};
use crate::Direction;

/// Score assigned when there is nothing to compare.
pub const EMPTY_SCORE: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub score: f64,
    /// True when the candidate list was empty and `score` is [`EMPTY_SCORE`].
    pub empty: bool,
}

fn lookup<'t>(table: &'t TextEmbeddingTable, phrase: &str) -> Result<&'t [f32]> {
    table.get(phrase).ok_or_else(|| Error::MissingPhrase(phrase.to_string()))
}

/// Maximum cosine similarity between `truth` and any of `phrases`.
pub fn best_similarity<S: AsRef<str>>(phrases: &[S], truth: &str, table: &TextEmbeddingTable) -> Result<Similarity> {
    let t = lookup(table, truth)?;
    let mut best: Option<f64> = None;
    for p in phrases {
        let s = cosine(lookup(table, p.as_ref())?, t);
        best = Some(best.map_or(s, |b: f64| b.max(s)));
    }
    Ok(match best {
        Some(score) => Similarity { score, empty: false },
        None => Similarity {
            score: EMPTY_SCORE,
            empty: true,
        },
    })
}

/// Best similarity of one hypothesis: over all its words for an SAE neuron.
pub fn hypothesis_similarity(h: &ConceptHypothesis, truth: &str, table: &TextEmbeddingTable) -> Result<f64> {
    Ok(best_similarity(&h.labels, truth, table)?.score)
}

/// Best similarity over a whole candidate set.
pub fn candidate_similarity(cands: &[ConceptHypothesis], truth: &str, table: &TextEmbeddingTable) -> Result<Similarity> {
    let words: Vec<&str> = cands.iter().flat_map(|h| h.labels.iter().map(String::as_str)).collect();
    best_similarity(&words, truth, table)
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimMismatch {
            expected: xs.len(),
            actual: ys.len(),
            context: "pearson ys vs xs",
        });
    }
    if xs.len() < 2 {
        return Err(Error::Undefined("pearson needs at least two points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("pearson with zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PoolMethod {
    /// `tanh` of the `(n - 3)`-weighted mean of `atanh(rho)`.
    #[default]
    FisherZ,
    /// Fisher's method on the two-sided p-values; returns the pooled p.
    FisherP,
}

/// Two-sided p-value of a Pearson correlation under the t test.
pub fn correlation_p_value(rho: f64, n: usize) -> Result<f64> {
    if n < 3 {
        return Err(Error::Undefined("correlation p-value needs n >= 3".into()));
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Undefined(e.to_string()))?;
    Ok((2.0 * dist.sf(t.abs())).min(1.0))
}

pub fn pool_correlations(rhos: &[f64], ns: &[usize], method: PoolMethod) -> Result<f64> {
    if rhos.len() != ns.len() {
        return Err(Error::DimMismatch {
            expected: rhos.len(),
            actual: ns.len(),
            context: "sample sizes vs correlations",
        });
    }
    if rhos.is_empty() {
        return Err(Error::Undefined("no correlations to pool".into()));
    }
    if let Some(r) = rhos.iter().find(|r| !(r.abs() < 1.0)) {
        return Err(Error::Undefined(format!("|rho| = {} has infinite z", r.abs())));
    }
    if let Some(n) = ns.iter().find(|&&n| n < 4) {
        return Err(Error::Undefined(format!("sample size {n} is below 4")));
    }
    match method {
        PoolMethod::FisherZ => {
            let (mut num, mut den) = (0.0, 0.0);
            for (r, &n) in rhos.iter().zip(ns) {
                let w = (n - 3) as f64;
                num += w * r.atanh();
                den += w;
            }
            Ok((num / den).tanh())
        }
        PoolMethod::FisherP => {
            let mut stat = 0.0;
            for (&r, &n) in rhos.iter().zip(ns) {
                stat += -2.0 * correlation_p_value(r, n)?.max(f64::MIN_POSITIVE).ln();
            }
            let chi = ChiSquared::new(2.0 * rhos.len() as f64).map_err(|e| Error::Undefined(e.to_string()))?;
            Ok(chi.sf(stat))
        }
    }
}

/// For each threshold, the mean over pairs of the number of candidates whose
/// similarity to the pair's truth is at least the threshold.
pub fn coverage_curve(
    sets: &[Vec<ConceptHypothesis>],
    truths: &[String],
    table: &TextEmbeddingTable,
    thresholds: &[f64],
) -> Result<Vec<f64>> {
    if sets.len() != truths.len() {
        return Err(Error::DimMismatch {
            expected: sets.len(),
            actual: truths.len(),
            context: "truths vs candidate sets",
        });
    }
    let sims = sets
        .iter()
        .zip(truths)
        .map(|(set, t)| set.iter().map(|h| hypothesis_similarity(h, t, table)).collect::<Result<Vec<f64>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(thresholds
        .iter()
        .map(|&t| {
            if sims.is_empty() {
                return 0.0;
            }
            let total: usize = sims.iter().map(|s| s.iter().filter(|&&x| x >= t).count()).sum();
            total as f64 / sims.len() as f64
        })
        .collect())
}

/// One evaluated direction of one benchmark split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    pub split_id: String,
    /// Cases sharing a group (typically the parent label) form one
    /// correlation in the pooled statistic.
    #[serde(default)]
    pub group: String,
    pub direction: Direction,
    /// Ground-truth label of the mode missing from the other side.
    pub truth: String,
    pub scarcity: f64,
    pub candidates: CandidateSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub split_id: String,
    pub direction: Direction,
    pub best_similarity: f64,
    pub empty: bool,
    pub scarcity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub per_pair: Vec<PairScore>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// `None` when undefined (fewer than two cases or constant values).
    pub rho_scarcity: Option<f64>,
    /// Per-group scarcity correlations pooled with `pool_method`; groups
    /// where the correlation is undefined or the size is below 4 are skipped.
    pub pooled_rho: Option<f64>,
    pub pool_method: PoolMethod,
    pub coverage_thresholds: Vec<f64>,
    pub coverage: Vec<f64>,
}

pub fn evaluate(
    cases: &[EvalCase],
    table: &TextEmbeddingTable,
    thresholds: &[f64],
    pool_method: PoolMethod,
) -> Result<EvalResult> {
    let per_pair = cases
        .iter()
        .map(|c| {
            let s = candidate_similarity(&c.candidates.candidates, &c.truth, table)?;
            if s.empty {
                log::warn!("{} direction {}: no candidates, scored {EMPTY_SCORE}", c.split_id, c.direction);
            }
            Ok(PairScore {
                split_id: c.split_id.clone(),
                direction: c.direction,
                best_similarity: s.score,
                empty: s.empty,
                scarcity: c.scarcity,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = per_pair.iter().map(|p| p.best_similarity).collect();
    let n = scores.len().max(1) as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let std = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
    let scar: Vec<f64> = per_pair.iter().map(|p| p.scarcity).collect();
    let rho_scarcity = pearson(&scores, &scar).ok();
    let mut groups: std::collections::BTreeMap<&str, (Vec<f64>, Vec<f64>)> = Default::default();
    for (c, p) in cases.iter().zip(&per_pair) {
        let g = groups.entry(c.group.as_str()).or_default();
        g.0.push(p.best_similarity);
        g.1.push(p.scarcity);
    }
    let (mut rhos, mut ns) = (Vec::new(), Vec::new());
    for (xs, ys) in groups.values() {
        if let Ok(r) = pearson(xs, ys) {
            if xs.len() >= 4 && r.abs() < 1.0 {
                rhos.push(r);
                ns.push(xs.len());
            }
        }
    }
    let pooled_rho = pool_correlations(&rhos, &ns, pool_method).ok();
    let sets: Vec<Vec<ConceptHypothesis>> = cases.iter().map(|c| c.candidates.candidates.clone()).collect();
    let truths: Vec<String> = cases.iter().map(|c| c.truth.clone()).collect();
    let coverage = coverage_curve(&sets, &truths, table, thresholds)?;
    Ok(EvalResult {
        per_pair,
        mean,
        std,
        rho_scarcity,
        pooled_rho,
        pool_method,
        coverage_thresholds: thresholds.to_vec(),
        coverage,
    })
}

/// `threshold,coverage` CSV with a header line.
pub fn coverage_csv(thresholds: &[f64], coverage: &[f64]) -> String {
    let mut out = String::from("threshold,coverage\n");
    for (t, c) in thresholds.iter().zip(coverage) {
        out.push_str(&format!("{t},{c}\n"));
    }
    out
}
