//! Synthetic latent datasets with planted modes, and closed-form oracles.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{EmbeddingMatrix, SampleIds};
use crate::text_table::TextEmbeddingTable;

/// Atoms mixed into every sample.
pub const BACKGROUND_ATOMS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dims: usize,
    pub n_per_side: usize,
    pub n_concepts: usize,
    pub planted_concept: usize,
    pub prevalence: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dims: 64,
            n_per_side: 2000,
            n_concepts: 32,
            planted_concept: 0,
            prevalence: 0.05,
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub config: SynthConfig,
    pub orthonormal: bool,
    pub dictionary: Vec<Vec<f32>>,
    pub planted_concept: usize,
    pub planted_word: String,
    pub planted_ids: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub a: EmbeddingMatrix,
    pub b: EmbeddingMatrix,
    pub truth: SynthTruth,
}

pub fn concept_word(j: usize) -> String {
    format!("concept_{j:03}")
}

const STREAM_DICTIONARY: u64 = 0;
const STREAM_PLANTED_ROWS: u64 = 1;
const STREAM_SIDE_A: u64 = 1 << 40;
const STREAM_SIDE_B: u64 = 2 << 40;
/// Keeps generator streams distinct from model RNGs seeded with the same value.
const SEED_DOMAIN: u64 = 0x9e37_79b9_7f4a_7c15;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SEED_DOMAIN);
    rng.set_stream(stream);
    rng
}

/// Draws two point clouds that share a background of sparse nonnegative
/// atom mixtures; exactly `round(prevalence * n)` rows of A also carry the
/// planted atom with coefficient in [1, 2]. B never carries it.
///
/// Every row has its own random stream derived from (seed, side, row), so
/// the output does not depend on generation order.
pub fn gen_planted(config: &SynthConfig) -> Result<SynthData> {
    let c = config;
    if !(c.prevalence > 0.0 && c.prevalence < 1.0) {
        return Err(Error::InvalidArgument("prevalence must be in (0, 1)".into()));
    }
    if c.planted_concept >= c.n_concepts {
        return Err(Error::InvalidArgument("planted_concept must be < n_concepts".into()));
    }
    if c.n_concepts <= BACKGROUND_ATOMS {
        return Err(Error::InvalidArgument(format!(
            "need more than {BACKGROUND_ATOMS} concepts"
        )));
    }
    if c.dims == 0 || c.n_per_side == 0 || !(c.noise_sigma >= 0.0) {
        return Err(Error::InvalidArgument(
            "dims and n_per_side must be positive, noise_sigma nonnegative".into(),
        ));
    }

    let orthonormal = c.n_concepts <= c.dims;
    if !orthonormal {
        log::warn!(
            "{} concepts exceed {} dims; using random unit atoms instead of an orthonormal set",
            c.n_concepts,
            c.dims
        );
    }
    let dictionary = random_dictionary(c.dims, c.n_concepts, orthonormal, c.seed);

    let n_planted = (c.prevalence * c.n_per_side as f64).round() as usize;
    let mut rows: Vec<usize> = (0..c.n_per_side).collect();
    rows.shuffle(&mut stream_rng(c.seed, STREAM_PLANTED_ROWS));
    let mut planted = vec![false; c.n_per_side];
    for &r in &rows[..n_planted] {
        planted[r] = true;
    }

    let background: Vec<usize> = (0..c.n_concepts).filter(|&j| j != c.planted_concept).collect();
    let noise = Normal::new(0.0, c.noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let sample_row = |stream: u64, with_planted: bool| -> Vec<f32> {
        let mut rng = stream_rng(c.seed, stream);
        let mut v = vec![0.0f64; c.dims];
        for &j in background.choose_multiple(&mut rng, BACKGROUND_ATOMS) {
            let coef: f64 = rng.gen_range(0.5..1.5);
            for (x, a) in v.iter_mut().zip(&dictionary[j]) {
                *x += coef * *a as f64;
            }
        }
        if with_planted {
            let coef: f64 = rng.gen_range(1.0..2.0);
            for (x, a) in v.iter_mut().zip(&dictionary[c.planted_concept]) {
                *x += coef * *a as f64;
            }
        }
        if c.noise_sigma > 0.0 {
            for x in v.iter_mut() {
                *x += rng.sample(noise);
            }
        }
        v.into_iter().map(|x| x as f32).collect()
    };

    let mut data_a = Vec::with_capacity(c.n_per_side * c.dims);
    let mut data_b = Vec::with_capacity(c.n_per_side * c.dims);
    for r in 0..c.n_per_side {
        data_a.extend(sample_row(STREAM_SIDE_A + r as u64, planted[r]));
        data_b.extend(sample_row(STREAM_SIDE_B + r as u64, false));
    }
    let ids_a: Vec<String> = (0..c.n_per_side).map(|r| format!("a{r:06}")).collect();
    let ids_b: Vec<String> = (0..c.n_per_side).map(|r| format!("b{r:06}")).collect();
    let planted_ids = (0..c.n_per_side)
        .filter(|&r| planted[r])
        .map(|r| ids_a[r].clone())
        .collect();

    Ok(SynthData {
        a: EmbeddingMatrix::new(SampleIds::new(&ids_a)?, c.dims, data_a)?,
        b: EmbeddingMatrix::new(SampleIds::new(&ids_b)?, c.dims, data_b)?,
        truth: SynthTruth {
            config: c.clone(),
            orthonormal,
            dictionary,
            planted_concept: c.planted_concept,
            planted_word: concept_word(c.planted_concept),
            planted_ids,
        },
    })
}

fn random_dictionary(d: usize, n: usize, orthonormal: bool, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = stream_rng(seed, STREAM_DICTIONARY);
    let mut atoms: Vec<Vec<f64>> = Vec::with_capacity(n);
    while atoms.len() < n {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if orthonormal {
            // Modified Gram-Schmidt, applied twice for stability.
            for _ in 0..2 {
                for a in &atoms {
                    let p: f64 = v.iter().zip(a).map(|(x, y)| x * y).sum();
                    for (x, y) in v.iter_mut().zip(a) {
                        *x -= p * y;
                    }
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        atoms.push(v);
    }
    atoms
        .into_iter()
        .map(|a| a.into_iter().map(|x| x as f32).collect())
        .collect()
}

/// One vocabulary entry per dictionary atom, named by [`concept_word`].
pub fn concept_vocabulary(truth: &SynthTruth) -> Result<TextEmbeddingTable> {
    let d = truth.dictionary.first().map_or(0, Vec::len);
    let mut table = TextEmbeddingTable::new(d);
    for (j, atom) in truth.dictionary.iter().enumerate() {
        table.insert_normalized(concept_word(j), atom)?;
    }
    Ok(table)
}

/// Isotropic Gaussian samples around `mu` with standard deviation `sigma`.
pub fn gaussian_cloud(
    prefix: &str,
    n: usize,
    mu: &[f64],
    sigma: f64,
    seed: u64,
) -> Result<EmbeddingMatrix> {
    let d = mu.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        for m in mu {
            let z: f64 = rng.sample(StandardNormal);
            data.push((m + sigma * z) as f32);
        }
    }
    let ids: Vec<String> = (0..n).map(|i| format!("{prefix}{i:06}")).collect();
    EmbeddingMatrix::new(SampleIds::new(&ids)?, d, data)
}

/// `log N(h; mu_a, sigma^2 I) - log N(h; mu_b, sigma^2 I)`.
pub fn exact_gaussian_logratio(mu_a: &[f64], mu_b: &[f64], sigma: f64, h: &[f64]) -> f64 {
    let sq = |mu: &[f64]| -> f64 { h.iter().zip(mu).map(|(x, m)| (x - m) * (x - m)).sum() };
    (sq(mu_b) - sq(mu_a)) / (2.0 * sigma * sigma)
}

/// Jensen-Shannon divergence in nats by explicit summation of both KL
/// terms against the mixture.
pub fn brute_jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimMismatch {
            expected: p.len(),
            actual: q.len(),
            context: "brute_jsd",
        });
    }
    if p.iter().chain(q).any(|x| *x < 0.0) {
        return Err(Error::InvalidArgument("negative probability mass".into()));
    }
    let mut kl_p = 0.0;
    for i in 0..p.len() {
        let m = 0.5 * p[i] + 0.5 * q[i];
        if p[i] > 0.0 {
            kl_p += p[i] * (p[i] / m).ln();
        }
    }
    let mut kl_q = 0.0;
    for i in 0..q.len() {
        let m = 0.5 * p[i] + 0.5 * q[i];
        if q[i] > 0.0 {
            kl_q += q[i] * (q[i] / m).ln();
        }
    }
    Ok(0.5 * kl_p + 0.5 * kl_q)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(seed: u64) -> SynthConfig {
        SynthConfig {
            dims: 16,
            n_per_side: 2000,
            n_concepts: 12,
            planted_concept: 4,
            prevalence: 0.05,
            noise_sigma: 0.0,
            seed,
        }
    }

    #[test]
    fn planted_count_is_exact() {
        let data = gen_planted(&cfg(1)).unwrap();
        assert_eq!(data.truth.planted_ids.len(), 100);
        assert_eq!(data.a.rows(), 2000);
        assert_eq!(data.b.rows(), 2000);
    }

    #[test]
    fn noiseless_rows_lie_in_dictionary_span() {
        let data = gen_planted(&cfg(2)).unwrap();
        let dict = &data.truth.dictionary;
        assert!(data.truth.orthonormal);
        let planted_atom = &dict[4];
        for r in 0..data.a.rows() {
            let h = data.a.row(r);
            // Orthonormal atoms: projections reconstruct the row exactly.
            let mut rec = vec![0.0f64; 16];
            for atom in dict {
                let p: f64 = h.iter().zip(atom).map(|(x, y)| *x as f64 * *y as f64).sum();
                for (o, a) in rec.iter_mut().zip(atom) {
                    *o += p * *a as f64;
                }
            }
            let err: f64 = rec.iter().zip(h).map(|(a, b)| (a - *b as f64).powi(2)).sum();
            assert!(err < 1e-9, "row {r}: {err}");
            let proj: f64 = h.iter().zip(planted_atom).map(|(x, y)| *x as f64 * *y as f64).sum();
            let is_planted = data.truth.planted_ids.iter().any(|id| id == data.a.ids().get(r));
            assert_eq!(proj >= 1.0 - 1e-5, is_planted);
        }
        for r in 0..data.b.rows() {
            let proj: f64 = data.b.row(r).iter().zip(planted_atom).map(|(x, y)| *x as f64 * *y as f64).sum();
            assert!(proj.abs() < 1e-5);
        }
    }

    #[test]
    fn same_seed_same_output() {
        let a = gen_planted(&cfg(7)).unwrap();
        let b = gen_planted(&cfg(7)).unwrap();
        assert_eq!(a.a, b.a);
        assert_eq!(a.b, b.b);
        assert_eq!(a.truth, b.truth);
        let c = gen_planted(&cfg(8)).unwrap();
        assert_ne!(a.a, c.a);
    }

    #[test]
    fn overcomplete_dictionary_falls_back() {
        let mut c = cfg(1);
        c.n_concepts = 40;
        let data = gen_planted(&c).unwrap();
        assert!(!data.truth.orthonormal);
        assert_eq!(data.truth.dictionary.len(), 40);
    }

    #[test]
    fn invalid_configs() {
        let mut c = cfg(1);
        c.prevalence = 0.0;
        assert!(gen_planted(&c).is_err());
        let mut c = cfg(1);
        c.planted_concept = 12;
        assert!(gen_planted(&c).is_err());
    }

    #[test]
    fn gaussian_logratio_closed_form() {
        assert_eq!(exact_gaussian_logratio(&[1.0], &[-1.0], 1.0, &[0.0]), 0.0);
        assert!((exact_gaussian_logratio(&[1.0], &[-1.0], 1.0, &[1.0]) - 2.0).abs() < 1e-15);
        let h = [0.3, -0.7];
        let (ma, mb) = ([1.0, 0.5], [-0.2, 0.1]);
        let base = exact_gaussian_logratio(&ma, &mb, 1.0, &h);
        let wide = exact_gaussian_logratio(&ma, &mb, 2.0, &h);
        assert!((wide - base / 4.0).abs() < 1e-15);
    }

    #[test]
    fn brute_jsd_fixed_points() {
        assert_eq!(brute_jsd(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        let ln2 = std::f64::consts::LN_2;
        assert!((brute_jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - ln2).abs() < 1e-15);
    }
}
