//! Union of SAE- and DRE-derived hypotheses.

use serde::{Deserialize, Serialize};

use crate::labels::{ConceptHypothesis, Source};
use crate::Direction;

pub const DEFAULT_P: usize = 3;
pub const DEFAULT_Q: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub direction: Direction,
    /// SAE block, then DRE block.
    pub candidates: Vec<ConceptHypothesis>,
    pub p_sae: usize,
    pub q_dre: usize,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn from_source(&self, source: Source) -> Vec<ConceptHypothesis> {
        self.candidates.iter().filter(|c| c.source == source).cloned().collect()
    }
}

/// First `p` SAE hypotheses and first `q` DRE hypotheses for `direction`,
/// with exact duplicate label strings removed. The first occurrence wins, so
/// an SAE hypothesis is kept over an identical DRE one.
pub fn combine(
    direction: Direction,
    sae: &[ConceptHypothesis],
    dre: &[ConceptHypothesis],
    p: usize,
    q: usize,
) -> CandidateSet {
    let pick = |hyps: &[ConceptHypothesis], n: usize| -> Vec<ConceptHypothesis> {
        hyps.iter().filter(|h| h.direction == direction).take(n).cloned().collect()
    };
    let mut seen = std::collections::HashSet::new();
    let candidates = pick(sae, p)
        .into_iter()
        .chain(pick(dre, q))
        .filter(|h| seen.insert(h.label_text()))
        .collect();
    CandidateSet {
        direction,
        candidates,
        p_sae: p,
        q_dre: q,
    }
}
