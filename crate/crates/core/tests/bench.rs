use std::collections::BTreeSet;

use latcmp::bench::{
    build_split, enumerate_pairs, group_taxonomy, scarcity, AnnotationManifest, ManifestRecord, Taxonomy, TaxonomyEdge,
};
use latcmp::Error;
use proptest::prelude::*;

fn rec(id: &str, labels: &[&str]) -> ManifestRecord {
    ManifestRecord {
        id: id.into(),
        labels: labels.iter().map(|s| s.to_string()).collect(),
    }
}

fn toy() -> AnnotationManifest {
    let mut r = Vec::new();
    for i in 0..6 {
        r.push(rec(&format!("plain{i}"), &["dog"]));
    }
    r.push(rec("surf0", &["dog", "surfboard"]));
    r.push(rec("surf1", &["dog", "surfboard", "person"]));
    r.push(rec("moto0", &["dog", "motorcycle"]));
    r.push(rec("moto1", &["dog", "motorcycle"]));
    r.push(rec("both", &["dog", "surfboard", "motorcycle"]));
    r.push(rec("lonely", &["surfboard"]));
    AnnotationManifest::new(r).unwrap()
}

#[test]
fn toy_split_follows_the_set_algebra() {
    let s = build_split(&toy(), "dog", "surfboard", "motorcycle", 7).unwrap();
    assert_eq!(s.ids_a.len(), 5);
    assert_eq!(s.ids_b.len(), 5);
    assert!(s.ids_a.contains(&"surf0".into()) && s.ids_a.contains(&"surf1".into()));
    assert!(s.ids_b.contains(&"moto0".into()) && s.ids_b.contains(&"moto1".into()));
    for gone in ["both", "lonely"] {
        assert!(!s.ids_a.contains(&gone.into()) && !s.ids_b.contains(&gone.into()));
    }
    assert_eq!((s.mix_a_count, s.mix_b_count, s.excluded_both), (2, 2, 1));
    assert_eq!(scarcity(&s), (0.4, 0.4));
    assert_eq!(s, build_split(&toy(), "dog", "surfboard", "motorcycle", 7).unwrap());
}

#[test]
fn odd_plain_count_favours_side_a() {
    let mut m = toy();
    m.records.push(rec("plain6", &["dog"]));
    let s = build_split(&m, "dog", "surfboard", "motorcycle", 1).unwrap();
    assert_eq!((s.ids_a.len(), s.ids_b.len()), (6, 5));
}

#[test]
fn split_errors() {
    assert!(matches!(
        build_split(&toy(), "dog", "surfboard", "zebra", 0),
        Err(Error::Benchmark(_))
    ));
    assert!(build_split(&toy(), "dog", "dog", "surfboard", 0).is_err());
    assert!(build_split(&toy(), "dog", "surfboard", "surfboard", 0).is_err());
}

#[test]
fn manifest_validation_and_io() {
    assert!(AnnotationManifest::new(vec![rec("a", &["x"]), rec("a", &["y"])]).is_err());
    assert!(AnnotationManifest::new(vec![rec("a", &[])]).is_err());
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.jsonl");
    toy().write(&p).unwrap();
    assert_eq!(AnnotationManifest::read(&p).unwrap(), toy());
    std::fs::write(&p, "{\"id\": \"a\", \"labels\": [\"x\"]}\nnot json\n").unwrap();
    assert!(matches!(AnnotationManifest::read(&p), Err(Error::Parse { line: 2, .. })));
}

/// Parent "cat" with `n_attr` attributes, each attached to `per_attr` images.
fn co_occurrence_manifest(n_parent: usize, n_attr: usize, per_attr: usize) -> AnnotationManifest {
    let records = (0..n_parent)
        .map(|i| {
            let mut labels = vec!["cat".to_string()];
            if i < n_attr * per_attr {
                labels.push(format!("attr{:02}", i / per_attr));
            }
            ManifestRecord {
                id: format!("img{i:05}"),
                labels: labels.into_iter().collect(),
            }
        })
        .collect();
    AnnotationManifest::new(records).unwrap()
}

#[test]
fn enumeration_counts() {
    let m = co_occurrence_manifest(2400, 23, 100);
    assert_eq!(enumerate_pairs(&m, "cat", 100, 2000).len(), 253);
    let m = co_occurrence_manifest(2400, 23, 99);
    assert!(enumerate_pairs(&m, "cat", 100, 2000).is_empty());
    let m = co_occurrence_manifest(2400, 1, 150);
    assert!(enumerate_pairs(&m, "cat", 100, 2000).is_empty());
    let m = co_occurrence_manifest(1999, 5, 150);
    assert!(enumerate_pairs(&m, "cat", 100, 2000).is_empty());
    let m = co_occurrence_manifest(2000, 5, 150);
    assert_eq!(enumerate_pairs(&m, "cat", 100, 2000).len(), 10);
}

fn tree() -> Taxonomy {
    // entity(0) - animal(1) - mammal(2) - canine(3) - dog(4) - puppy(5)
    //                       \ bird(2)
    let edges = [
        ("animal", "entity"),
        ("mammal", "animal"),
        ("canine", "mammal"),
        ("dog", "canine"),
        ("puppy", "dog"),
        ("wolf", "canine"),
        ("bird", "animal"),
    ];
    Taxonomy::new(
        &edges
            .iter()
            .map(|(c, p)| TaxonomyEdge {
                child: c.to_string(),
                parent: p.to_string(),
            })
            .collect::<Vec<_>>(),
    )
    .unwrap()
}

#[test]
fn taxonomy_cut_maps_to_deepest_allowed_ancestor() {
    let t = tree();
    assert_eq!(t.depth("puppy"), Some(5));
    assert_eq!(t.ancestor_at("puppy", 3).unwrap(), "canine");
    assert_eq!(t.ancestor_at("puppy", 1).unwrap(), "animal");
    assert_eq!(t.ancestor_at("bird", 3).unwrap(), "bird");
    assert!(matches!(t.ancestor_at("cat", 3), Err(Error::MissingTaxonomyLabel(l)) if l == "cat"));
}

#[test]
fn grouping_collapses_and_identity_at_full_depth() {
    let m = AnnotationManifest::new(vec![rec("x", &["puppy", "wolf", "bird"]), rec("y", &["dog"])]).unwrap();
    let g = group_taxonomy(&m, &tree(), 2).unwrap();
    let want: BTreeSet<String> = ["mammal", "bird"].iter().map(|s| s.to_string()).collect();
    assert_eq!(g.records[0].labels, want);
    assert_eq!(group_taxonomy(&m, &tree(), tree().max_depth()).unwrap(), m);
    let bad = AnnotationManifest::new(vec![rec("z", &["cat"])]).unwrap();
    assert!(group_taxonomy(&bad, &tree(), 2).is_err());
}

#[test]
fn taxonomy_rejects_cycles_and_double_parents() {
    let e = |c: &str, p: &str| TaxonomyEdge {
        child: c.into(),
        parent: p.into(),
    };
    assert!(Taxonomy::new(&[e("a", "b"), e("b", "c"), e("c", "a")]).is_err());
    assert!(Taxonomy::new(&[e("a", "b"), e("a", "c")]).is_err());
    assert!(Taxonomy::new(&[e("a", "a")]).is_err());
}

fn arb_manifest() -> impl Strategy<Value = AnnotationManifest> {
    const LABELS: [&str; 5] = ["dog", "surfboard", "motorcycle", "person", "cat"];
    prop::collection::vec(prop::collection::btree_set(prop::sample::select(&LABELS[..]), 1..4), 10..80).prop_map(
        |sets| {
            AnnotationManifest::new(
                sets.into_iter()
                    .enumerate()
                    .map(|(i, s)| ManifestRecord {
                        id: format!("id{i:03}"),
                        labels: s.into_iter().map(String::from).collect(),
                    })
                    .collect(),
            )
            .unwrap()
        },
    )
}

proptest! {
    #[test]
    fn split_invariants_hold(m in arb_manifest(), seed in any::<u64>(), rot in 0usize..80) {
        let Ok(s) = build_split(&m, "dog", "surfboard", "motorcycle", seed) else { return Ok(()) };
        let has = |id: &str, l: &str| m.records.iter().find(|r| r.id == id).unwrap().labels.contains(l);
        prop_assert!(s.ids_a.iter().all(|id| !s.ids_b.contains(id)));
        prop_assert!(s.ids_a.iter().all(|id| has(id, "dog") && !has(id, "motorcycle")));
        prop_assert!(s.ids_b.iter().all(|id| has(id, "dog") && !has(id, "surfboard")));
        let non_parent = m.records.iter().filter(|r| !r.labels.contains("dog")).count();
        prop_assert_eq!(s.ids_a.len() + s.ids_b.len() + s.excluded_both + non_parent, m.len());

        let mut shuffled = m.clone();
        let k = rot % shuffled.records.len();
        shuffled.records.rotate_left(k);
        shuffled.records.reverse();
        prop_assert_eq!(build_split(&shuffled, "dog", "surfboard", "motorcycle", seed).unwrap(), s);
    }
}
