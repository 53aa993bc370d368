//! Vocabulary labels for SAE neurons and the hypothesis record shared by
//! both hypothesis sources.

use serde::{Deserialize, Serialize};

use crate::divergence::NeuronScore;
use crate::error::{Error, Result};
use crate::sae::SaeModel;
use crate::text_table::{cosine, l2, TextEmbeddingTable};
use crate::Direction;

pub const DEFAULT_WORDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Source {
    Sae,
    Dre,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptHypothesis {
    /// Set for SAE hypotheses.
    pub neuron: Option<usize>,
    pub direction: Direction,
    /// Top words for an SAE neuron; the single hypothesis text for DRE.
    pub labels: Vec<String>,
    pub jsd: Option<f64>,
    /// 1-based rank within its source and direction.
    pub rank: usize,
    pub source: Source,
}

impl ConceptHypothesis {
    /// Labels joined with `", "`; the key used for exact duplicate removal.
    pub fn label_text(&self) -> String {
        self.labels.join(", ")
    }
}

/// Vocabulary entries ranked by cosine similarity to decoder atom `j`,
/// ties broken by phrase. A zero atom yields an empty list.
pub fn label_neuron_scored(
    model: &SaeModel,
    vocab: &TextEmbeddingTable,
    j: usize,
    n_words: usize,
) -> Result<Vec<(String, f64)>> {
    if vocab.dims() != model.d() {
        return Err(Error::DimMismatch {
            expected: model.d(),
            actual: vocab.dims(),
            context: "vocabulary dims vs SAE d",
        });
    }
    if j >= model.k() {
        return Err(Error::InvalidArgument(format!("neuron {j} out of range (k={})", model.k())));
    }
    let atom = model.atom(j);
    if l2(atom) == 0.0 {
        log::warn!("neuron {j} has a zero decoder atom; no labels");
        return Ok(Vec::new());
    }
    let mut scored: Vec<(&str, f64)> = vocab.iter().map(|(p, v)| (p, cosine(atom, v))).collect();
    scored.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(y.0)));
    scored.truncate(n_words);
    Ok(scored.into_iter().map(|(p, s)| (p.to_string(), s)).collect())
}

pub fn label_neuron(
    model: &SaeModel,
    vocab: &TextEmbeddingTable,
    j: usize,
    n_words: usize,
) -> Result<Vec<String>> {
    Ok(label_neuron_scored(model, vocab, j, n_words)?
        .into_iter()
        .map(|(p, _)| p)
        .collect())
}

/// Labels the output of [`crate::divergence::rank_biased`], keeping its order.
pub fn label_ranked(
    model: &SaeModel,
    vocab: &TextEmbeddingTable,
    ranked: &[NeuronScore],
    direction: Direction,
    n_words: usize,
) -> Result<Vec<ConceptHypothesis>> {
    ranked
        .iter()
        .enumerate()
        .map(|(i, s)| {
            Ok(ConceptHypothesis {
                neuron: Some(s.neuron),
                direction,
                labels: label_neuron(model, vocab, s.neuron, n_words)?,
                jsd: Some(s.jsd),
                rank: i + 1,
                source: Source::Sae,
            })
        })
        .collect()
}
