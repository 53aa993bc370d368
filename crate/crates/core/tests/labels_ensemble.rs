use latcmp::divergence::NeuronScore;
use latcmp::ensemble::combine;
use latcmp::labels::{label_neuron, label_neuron_scored, label_ranked, ConceptHypothesis, Source};
use latcmp::sae::SaeModel;
use latcmp::text_table::TextEmbeddingTable;
use latcmp::Direction;
use proptest::prelude::*;

/// d=3, k=3 model whose decoder rows are the given atoms.
fn model_with_atoms(atoms: &[[f32; 3]]) -> SaeModel {
    let k = atoms.len();
    let w_dec: Vec<f32> = atoms.iter().flatten().copied().collect();
    let mut w_enc = vec![0.0f32; 3 * k];
    for (j, a) in atoms.iter().enumerate() {
        for i in 0..3 {
            w_enc[i * k + j] = a[i];
        }
    }
    SaeModel::from_parts(3, k, 1, &w_enc, &w_dec, vec![0.0; 3]).unwrap()
}

fn vocab() -> TextEmbeddingTable {
    let mut t = TextEmbeddingTable::new(3);
    t.insert_normalized("surfboard", &[1.0, 0.1, 0.0]).unwrap();
    t.insert_normalized("wave", &[0.7, 0.7, 0.0]).unwrap();
    t.insert_normalized("motorcycle", &[0.0, 1.0, 0.0]).unwrap();
    t.insert_normalized("helmet", &[0.0, 0.8, 0.6]).unwrap();
    t.insert_normalized("zebra", &[0.0, 0.0, 1.0]).unwrap();
    t
}

#[test]
fn exact_atom_ranks_first_with_unit_similarity() {
    let v = vocab();
    let m = model_with_atoms(&[[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    let s = label_neuron_scored(&m, &v, 0, 5).unwrap();
    assert_eq!(s[0].0, "surfboard");
    assert!((s[0].1 - 1.0).abs() < 1e-6);
    assert_eq!(label_neuron(&m, &v, 1, 2).unwrap(), ["motorcycle", "helmet"]);
}

#[test]
fn orthogonal_atom_falls_back_to_lexicographic_order() {
    let mut t = TextEmbeddingTable::new(3);
    t.insert("b", &[1.0, 0.0, 0.0]).unwrap();
    t.insert("c", &[0.0, 1.0, 0.0]).unwrap();
    t.insert("a", &[1.0, 0.0, 0.0]).unwrap();
    let m = model_with_atoms(&[[0.0, 0.0, 1.0]]);
    assert_eq!(label_neuron(&m, &t, 0, 3).unwrap(), ["a", "b", "c"]);
}

#[test]
fn noisy_atom_recovers_its_word() {
    let v = vocab();
    let m = model_with_atoms(&[[0.98, 0.13, 0.02]]);
    assert!(label_neuron(&m, &v, 0, 5).unwrap()[..1].contains(&"surfboard".to_string()));
}

#[test]
fn zero_atom_has_no_labels() {
    let m = model_with_atoms(&[[0.0, 0.0, 0.0]]);
    assert!(label_neuron(&m, &vocab(), 0, 5).unwrap().is_empty());
}

#[test]
fn full_vocabulary_request_returns_each_word_once() {
    let v = vocab();
    let m = model_with_atoms(&[[0.3, -0.2, 0.9]]);
    let mut words = label_neuron(&m, &v, 0, v.len()).unwrap();
    words.sort();
    assert_eq!(words, ["helmet", "motorcycle", "surfboard", "wave", "zebra"]);
}

#[test]
fn rescaled_atom_gives_identical_ranking() {
    let v = vocab();
    let a = model_with_atoms(&[[0.3, -0.2, 0.9]]);
    let b = model_with_atoms(&[[2.1, -1.4, 6.3]]);
    assert_eq!(label_neuron(&a, &v, 0, 5).unwrap(), label_neuron(&b, &v, 0, 5).unwrap());
}

#[test]
fn label_errors() {
    let m = model_with_atoms(&[[1.0, 0.0, 0.0]]);
    assert!(label_neuron(&m, &vocab(), 1, 5).is_err());
    assert!(label_neuron(&m, &TextEmbeddingTable::new(4), 0, 5).is_err());
}

fn score(neuron: usize, jsd: f64) -> NeuronScore {
    NeuronScore {
        neuron,
        jsd,
        mean_gap: 1.0,
        activity_joint: 0.0,
        mono_score: None,
        pruned: false,
        prune_reasons: vec![],
    }
}

#[test]
fn ranked_labels_keep_order() {
    let v = vocab();
    let m = model_with_atoms(&[[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    assert!(label_ranked(&m, &v, &[], Direction::A, 5).unwrap().is_empty());
    let ranked = [score(2, 0.3), score(0, 0.2), score(1, 0.1)];
    let hyps = label_ranked(&m, &v, &ranked, Direction::A, 1).unwrap();
    let firsts: Vec<&str> = hyps.iter().map(|h| h.labels[0].as_str()).collect();
    assert_eq!(firsts, ["zebra", "surfboard", "motorcycle"]);
    assert_eq!(hyps.iter().map(|h| h.rank).collect::<Vec<_>>(), [1, 2, 3]);
    assert!(hyps.iter().all(|h| h.source == Source::Sae && h.direction == Direction::A));
}

fn hyp(text: &str, source: Source, rank: usize) -> ConceptHypothesis {
    ConceptHypothesis {
        neuron: (source == Source::Sae).then_some(rank),
        direction: Direction::A,
        labels: vec![text.to_string()],
        jsd: None,
        rank,
        source,
    }
}

fn sae(texts: &[&str]) -> Vec<ConceptHypothesis> {
    texts.iter().enumerate().map(|(i, t)| hyp(t, Source::Sae, i + 1)).collect()
}

fn dre(texts: &[&str]) -> Vec<ConceptHypothesis> {
    texts.iter().enumerate().map(|(i, t)| hyp(t, Source::Dre, i + 1)).collect()
}

#[test]
fn combine_examples() {
    let s = sae(&["surf", "wave", "beach", "sand", "sun"]);
    let d = dre(&["kite", "wave", "boat"]);
    let only = combine(Direction::A, &s, &d, 5, 0);
    assert_eq!(only.len(), 5);
    assert!(only.candidates.iter().all(|c| c.source == Source::Sae));
    assert!(combine(Direction::A, &s, &d, 0, 0).is_empty());

    let d = dre(&["wave", "kite"]);
    let c = combine(Direction::A, &s, &d, 3, 2);
    let got: Vec<(&str, Source)> = c.candidates.iter().map(|h| (h.labels[0].as_str(), h.source)).collect();
    assert_eq!(
        got,
        [("surf", Source::Sae), ("wave", Source::Sae), ("beach", Source::Sae), ("kite", Source::Dre)]
    );
}

#[test]
fn combine_ignores_other_direction() {
    let mut d = dre(&["kite"]);
    d[0].direction = Direction::B;
    assert!(combine(Direction::A, &[], &d, 3, 2).is_empty());
    assert_eq!(combine(Direction::B, &[], &d, 3, 2).len(), 1);
}

proptest! {
    #[test]
    fn combined_set_covers_each_source(
        sae_ids in prop::collection::vec(0usize..12, 0..8),
        dre_ids in prop::collection::vec(0usize..12, 0..8),
        scores in prop::collection::vec(-1.0f64..1.0, 12),
        p in 0usize..6,
        q in 0usize..6,
    ) {
        let words: Vec<String> = (0..12).map(|i| format!("w{i}")).collect();
        let s: Vec<_> = sae_ids.iter().enumerate().map(|(r, &i)| hyp(&words[i], Source::Sae, r + 1)).collect();
        let d: Vec<_> = dre_ids.iter().enumerate().map(|(r, &i)| hyp(&words[i], Source::Dre, r + 1)).collect();
        let c = combine(Direction::A, &s, &d, p, q);
        let score = |h: &ConceptHypothesis| scores[h.labels[0][1..].parse::<usize>().unwrap()];
        let best = |hs: &[ConceptHypothesis]| hs.iter().map(score).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(c.len() <= p + q);
        prop_assert!(best(&c.candidates) >= best(&s[..p.min(s.len())]));
        prop_assert!(best(&c.candidates) >= best(&d[..q.min(d.len())]));

        let again = combine(Direction::A, &c.from_source(Source::Sae), &c.from_source(Source::Dre), p, q);
        prop_assert_eq!(again, c);
    }
}
