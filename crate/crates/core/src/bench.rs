//! Sparse-shift benchmark construction from labelled image manifests.
//!
//! For a parent label P and two attribute labels A and B, images with P but
//! neither attribute are split evenly between the two sides; images with P
//! and exactly one attribute go to that attribute's side. Each side is thus
//! missing the other side's attribute.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MIN_MIX: usize = 100;
pub const DEFAULT_MIN_PARENT: usize = 2000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub labels: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnnotationManifest {
    pub records: Vec<ManifestRecord>,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

impl AnnotationManifest {
    pub fn new(records: Vec<ManifestRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Ids(format!("duplicate manifest id {:?}", r.id)));
            }
            if r.labels.is_empty() {
                return Err(Error::Benchmark(format!("manifest record {:?} has no labels", r.id)));
            }
        }
        Ok(AnnotationManifest { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::new(read_jsonl(path)?)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSplit {
    pub parent: String,
    pub attr_a: String,
    pub attr_b: String,
    /// Sorted.
    pub ids_a: Vec<String>,
    pub ids_b: Vec<String>,
    pub mix_a_count: usize,
    pub mix_b_count: usize,
    pub scarcity_a: f64,
    pub scarcity_b: f64,
    /// Parent images carrying both attributes, dropped from both sides.
    pub excluded_both: usize,
    pub seed: u64,
}

pub fn build_split(
    manifest: &AnnotationManifest,
    parent: &str,
    attr_a: &str,
    attr_b: &str,
    seed: u64,
) -> Result<BenchmarkSplit> {
    if parent == attr_a || parent == attr_b || attr_a == attr_b {
        return Err(Error::InvalidArgument(format!(
            "parent {parent:?} and attributes {attr_a:?}, {attr_b:?} must be distinct"
        )));
    }
    let (mut plain, mut mix_a, mut mix_b) = (Vec::new(), Vec::new(), Vec::new());
    let mut excluded_both = 0;
    for r in manifest.records.iter().filter(|r| r.labels.contains(parent)) {
        match (r.labels.contains(attr_a), r.labels.contains(attr_b)) {
            (false, false) => plain.push(r.id.as_str()),
            (true, false) => mix_a.push(r.id.as_str()),
            (false, true) => mix_b.push(r.id.as_str()),
            (true, true) => excluded_both += 1,
        }
    }
    if mix_a.is_empty() || mix_b.is_empty() {
        return Err(Error::Benchmark(format!(
            "parent {parent:?}: {attr_a:?} has {} and {attr_b:?} has {} exclusive images; both must be nonempty",
            mix_a.len(),
            mix_b.len()
        )));
    }
    plain.sort_unstable();
    plain.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let half = plain.len().div_ceil(2);
    let side = |plain: &[&str], mix: &[&str]| -> Vec<String> {
        let mut ids: Vec<String> = plain.iter().chain(mix).map(|s| s.to_string()).collect();
        ids.sort_unstable();
        ids
    };
    let ids_a = side(&plain[..half], &mix_a);
    let ids_b = side(&plain[half..], &mix_b);
    Ok(BenchmarkSplit {
        parent: parent.into(),
        attr_a: attr_a.into(),
        attr_b: attr_b.into(),
        scarcity_a: mix_a.len() as f64 / ids_a.len() as f64,
        scarcity_b: mix_b.len() as f64 / ids_b.len() as f64,
        mix_a_count: mix_a.len(),
        mix_b_count: mix_b.len(),
        ids_a,
        ids_b,
        excluded_both,
        seed,
    })
}

pub fn scarcity(split: &BenchmarkSplit) -> (f64, f64) {
    (split.scarcity_a, split.scarcity_b)
}

/// Labels co-occurring with `parent` in at least `min_mix` images.
pub fn eligible_attributes(manifest: &AnnotationManifest, parent: &str, min_mix: usize) -> Vec<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in manifest.records.iter().filter(|r| r.labels.contains(parent)) {
        for l in r.labels.iter().filter(|l| *l != parent) {
            *counts.entry(l).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .filter(|&(_, c)| c >= min_mix)
        .map(|(l, _)| l.to_string())
        .collect()
}

/// All unordered pairs of eligible attributes of `parent`, lexicographic.
/// Empty when the parent has fewer than `min_parent` images.
pub fn enumerate_pairs(
    manifest: &AnnotationManifest,
    parent: &str,
    min_mix: usize,
    min_parent: usize,
) -> Vec<(String, String)> {
    let n_parent = manifest.records.iter().filter(|r| r.labels.contains(parent)).count();
    if n_parent < min_parent {
        log::info!("parent {parent:?} has {n_parent} images, below the {min_parent} minimum");
        return Vec::new();
    }
    let e = eligible_attributes(manifest, parent, min_mix);
    let mut pairs = Vec::with_capacity(e.len() * e.len().saturating_sub(1) / 2);
    for (i, a) in e.iter().enumerate() {
        for b in &e[i + 1..] {
            pairs.push((a.clone(), b.clone()));
        }
    }
    pairs
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyEdge {
    pub child: String,
    pub parent: String,
}

/// Rooted forest of labels. Roots have depth 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    parent: HashMap<String, String>,
    depth: HashMap<String, usize>,
}

impl Taxonomy {
    pub fn new(edges: &[TaxonomyEdge]) -> Result<Self> {
        let mut parent = HashMap::new();
        for e in edges {
            if e.child == e.parent {
                return Err(Error::Benchmark(format!("taxonomy self-loop at {:?}", e.child)));
            }
            if let Some(old) = parent.insert(e.child.clone(), e.parent.clone()) {
                if old != e.parent {
                    return Err(Error::Benchmark(format!(
                        "taxonomy label {:?} has two parents: {old:?} and {:?}",
                        e.child, e.parent
                    )));
                }
            }
        }
        let mut depth: HashMap<String, usize> = HashMap::new();
        let nodes: BTreeSet<&String> = edges.iter().flat_map(|e| [&e.child, &e.parent]).collect();
        for node in nodes {
            let mut chain = vec![node.as_str()];
            let mut cur = node.as_str();
            let base = loop {
                if let Some(&d) = depth.get(cur) {
                    chain.pop();
                    break d + 1;
                }
                match parent.get(cur) {
                    None => break 0,
                    Some(p) => {
                        if chain.contains(&p.as_str()) {
                            return Err(Error::Benchmark(format!("taxonomy cycle through {p:?}")));
                        }
                        chain.push(p);
                        cur = p;
                    }
                }
            };
            // chain runs from `node` up to the first node of known depth (or root).
            for (i, n) in chain.iter().rev().enumerate() {
                depth.insert(n.to_string(), base + i);
            }
        }
        Ok(Taxonomy { parent, depth })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::new(&read_jsonl::<TaxonomyEdge>(path)?)
    }

    pub fn depth(&self, label: &str) -> Option<usize> {
        self.depth.get(label).copied()
    }

    pub fn max_depth(&self) -> usize {
        self.depth.values().copied().max().unwrap_or(0)
    }

    /// Deepest ancestor-or-self of `label` with depth at most `cut_depth`.
    pub fn ancestor_at(&self, label: &str, cut_depth: usize) -> Result<&str> {
        let (mut cur, mut d) = self
            .depth
            .get_key_value(label)
            .map(|(k, &d)| (k.as_str(), d))
            .ok_or_else(|| Error::MissingTaxonomyLabel(label.to_string()))?;
        while d > cut_depth {
            cur = self.parent[cur].as_str();
            d -= 1;
        }
        Ok(cur)
    }
}

/// Replaces every label by its ancestor at `cut_depth`; labels that map to
/// the same group collapse.
pub fn group_taxonomy(manifest: &AnnotationManifest, taxonomy: &Taxonomy, cut_depth: usize) -> Result<AnnotationManifest> {
    let records = manifest
        .records
        .iter()
        .map(|r| {
            let labels = r
                .labels
                .iter()
                .map(|l| taxonomy.ancestor_at(l, cut_depth).map(str::to_string))
                .collect::<Result<BTreeSet<_>>>()?;
            Ok(ManifestRecord { id: r.id.clone(), labels })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AnnotationManifest { records })
}
