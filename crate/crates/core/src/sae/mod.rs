//! Sparse autoencoder over encoder latents.
//!
//! Encoding is `z = topk_relu(W_enc^T (h - b))` and decoding is
//! `h_hat = z^T W_dec + b`, with `W_enc` of shape d x k and `W_dec` of shape
//! k x d so that row `j` of `W_dec` is the dictionary atom of neuron `j`.

mod activations;
mod io;
mod train;

pub use activations::{encode_batch, ActivationMatrix, EncodeMode};
pub use io::{load_sae, save_sae, SaeMeta};
pub use train::{explained_variance, train_sae, SaeTrainConfig, TrainedSae};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Neuron indices and their (positive) activations, sorted by index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseCode {
    pub indices: Vec<u32>,
    pub values: Vec<f32>,
}

impl SparseCode {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn to_dense(&self, k: usize) -> Vec<f32> {
        let mut z = vec![0.0; k];
        for (&j, &v) in self.indices.iter().zip(&self.values) {
            z[j as usize] = v;
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel {
    d: usize,
    k: usize,
    topk: usize,
    /// Encoder stored neuron-major (k x d): row `j` is column `j` of `W_enc`.
    enc: Vec<f32>,
    /// Dictionary atoms (k x d).
    dec: Vec<f32>,
    bias: Vec<f32>,
}

impl SaeModel {
    /// Builds a model from `W_enc` (d x k, row-major), `W_dec` (k x d) and `b`.
    pub fn from_parts(
        d: usize,
        k: usize,
        topk: usize,
        w_enc: &[f32],
        w_dec: &[f32],
        bias: Vec<f32>,
    ) -> Result<Self> {
        if w_enc.len() != d * k {
            return Err(Error::DimMismatch {
                expected: d * k,
                actual: w_enc.len(),
                context: "w_enc",
            });
        }
        if w_dec.len() != k * d {
            return Err(Error::DimMismatch {
                expected: k * d,
                actual: w_dec.len(),
                context: "w_dec",
            });
        }
        if bias.len() != d {
            return Err(Error::DimMismatch {
                expected: d,
                actual: bias.len(),
                context: "bias",
            });
        }
        let mut enc = vec![0.0; k * d];
        for i in 0..d {
            for j in 0..k {
                enc[j * d + i] = w_enc[i * k + j];
            }
        }
        let model = SaeModel {
            d,
            k,
            topk,
            enc,
            dec: w_dec.to_vec(),
            bias,
        };
        model.validate()?;
        Ok(model)
    }

    /// Random unit dictionary atoms, encoder tied to the dictionary at init,
    /// bias set to `bias`.
    pub fn init<R: Rng>(d: usize, k: usize, topk: usize, bias: Vec<f32>, rng: &mut R) -> Result<Self> {
        if bias.len() != d {
            return Err(Error::DimMismatch {
                expected: d,
                actual: bias.len(),
                context: "bias",
            });
        }
        let mut dec = vec![0.0f32; k * d];
        for atom in dec.chunks_mut(d) {
            loop {
                for v in atom.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                if normalize(atom) {
                    break;
                }
            }
        }
        let model = SaeModel {
            d,
            k,
            topk,
            enc: dec.clone(),
            dec,
            bias,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if self.d == 0 || self.k == 0 {
            return Err(Error::InvalidArgument("SAE needs d > 0 and k > 0".into()));
        }
        if self.topk == 0 || self.topk > self.k {
            return Err(Error::InvalidArgument(format!(
                "topk must be in 1..={}, got {}",
                self.k, self.topk
            )));
        }
        let finite = |v: &[f32]| v.iter().all(|x| x.is_finite());
        if !finite(&self.enc) || !finite(&self.dec) || !finite(&self.bias) {
            return Err(Error::InvalidArgument("SAE weights contain non-finite values".into()));
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn topk(&self) -> usize {
        self.topk
    }

    /// k / d, when it is a whole number.
    pub fn expansion(&self) -> Option<usize> {
        (self.k % self.d == 0).then(|| self.k / self.d)
    }

    pub fn with_topk(mut self, topk: usize) -> Result<Self> {
        self.topk = topk;
        self.validate()?;
        Ok(self)
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn atom(&self, j: usize) -> &[f32] {
        &self.dec[j * self.d..(j + 1) * self.d]
    }

    pub fn encoder_row(&self, j: usize) -> &[f32] {
        &self.enc[j * self.d..(j + 1) * self.d]
    }

    /// `W_enc` in its d x k row-major layout.
    pub fn w_enc(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.d * self.k];
        for j in 0..self.k {
            for i in 0..self.d {
                out[i * self.k + j] = self.enc[j * self.d + i];
            }
        }
        out
    }

    pub fn w_dec(&self) -> &[f32] {
        &self.dec
    }

    fn check_input(&self, h: &[f32]) -> Result<()> {
        if h.len() != self.d {
            return Err(Error::DimMismatch {
                expected: self.d,
                actual: h.len(),
                context: "SAE input",
            });
        }
        Ok(())
    }

    /// Pre-activations `W_enc^T (h - b)` written into `out` (length k).
    pub fn pre_activations_into(&self, h: &[f32], centered: &mut [f32], out: &mut [f32]) {
        for ((c, x), b) in centered.iter_mut().zip(h).zip(&self.bias) {
            *c = x - b;
        }
        for (o, row) in out.iter_mut().zip(self.enc.chunks_exact(self.d)) {
            *o = dot(row, centered);
        }
    }

    pub fn pre_activations(&self, h: &[f32]) -> Result<Vec<f32>> {
        self.check_input(h)?;
        let mut centered = vec![0.0; self.d];
        let mut out = vec![0.0; self.k];
        self.pre_activations_into(h, &mut centered, &mut out);
        Ok(out)
    }

    pub fn encode(&self, h: &[f32]) -> Result<SparseCode> {
        let pre = self.pre_activations(h)?;
        Ok(topk_rectify(&pre, self.topk))
    }

    pub fn decode(&self, z: &[f32]) -> Result<Vec<f32>> {
        if z.len() != self.k {
            return Err(Error::DimMismatch {
                expected: self.k,
                actual: z.len(),
                context: "SAE code",
            });
        }
        let mut out = self.bias.clone();
        for (j, &v) in z.iter().enumerate() {
            if v != 0.0 {
                axpy(v, self.atom(j), &mut out);
            }
        }
        Ok(out)
    }

    pub fn decode_sparse(&self, z: &SparseCode) -> Vec<f32> {
        let mut out = self.bias.clone();
        for (&j, &v) in z.indices.iter().zip(&z.values) {
            axpy(v, self.atom(j as usize), &mut out);
        }
        out
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [f32], &mut [f32], &mut [f32]) {
        (&mut self.enc, &mut self.dec, &mut self.bias)
    }
}

/// Keeps the `topk` largest entries (ties to the lower index) and drops any
/// that are not strictly positive.
pub fn topk_rectify(pre: &[f32], topk: usize) -> SparseCode {
    let mut cand: Vec<u32> = (0..pre.len() as u32).filter(|&j| pre[j as usize] > 0.0).collect();
    if cand.len() > topk {
        let by_rank = |a: &u32, b: &u32| {
            pre[*b as usize]
                .total_cmp(&pre[*a as usize])
                .then(a.cmp(b))
        };
        if topk > 0 {
            cand.select_nth_unstable_by(topk - 1, by_rank);
        }
        cand.truncate(topk);
    }
    cand.sort_unstable();
    let values = cand.iter().map(|&j| pre[j as usize]).collect();
    SparseCode {
        indices: cand,
        values,
    }
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    // Eight independent accumulators let the compiler vectorize.
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
pub(crate) fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Scales `v` to unit length. Returns false for a zero vector.
pub(crate) fn normalize(v: &mut [f32]) -> bool {
    let n = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    for x in v.iter_mut() {
        *x = (*x as f64 / n) as f32;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Model with identity-like encoder so pre-activations are easy to pin.
    fn diag_model(pre: &[f32]) -> SaeModel {
        // d = 1, h = 1, bias 0: pre-activation j = w_enc[0][j].
        let k = pre.len();
        SaeModel::from_parts(1, k, 1, pre, &vec![1.0; k], vec![0.0]).unwrap()
    }

    #[test]
    fn topk_one_keeps_largest() {
        let m = diag_model(&[3.0, 1.0, 2.0]);
        let z = m.encode(&[1.0]).unwrap();
        assert_eq!(z.to_dense(3), vec![3.0, 0.0, 0.0]);
    }

    #[test]
    fn saturated_topk_is_relu() {
        let m = diag_model(&[3.0, 1.0, 2.0]).with_topk(3).unwrap();
        assert_eq!(m.encode(&[1.0]).unwrap().to_dense(3), vec![3.0, 1.0, 2.0]);
        let m = diag_model(&[3.0, -1.0, 2.0]).with_topk(3).unwrap();
        assert_eq!(m.encode(&[1.0]).unwrap().to_dense(3), vec![3.0, 0.0, 2.0]);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let z = topk_rectify(&[1.0, 2.0, 2.0, 2.0], 2);
        assert_eq!(z.indices, vec![1, 2]);
    }

    #[test]
    fn random_encode_matches_exhaustive_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (d, k, topk) = (8, 32, 4);
        let bias: Vec<f32> = (0..d).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let m = SaeModel::init(d, k, topk, bias, &mut rng).unwrap();
        for _ in 0..50 {
            let h: Vec<f32> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let pre = m.pre_activations(&h).unwrap();
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| pre[b].partial_cmp(&pre[a]).unwrap().then(a.cmp(&b)));
            let mut expected = vec![0.0f32; k];
            for &j in &order[..topk] {
                expected[j] = pre[j].max(0.0);
            }
            let z = m.encode(&h).unwrap();
            assert!(z.nnz() <= topk);
            assert_eq!(z.to_dense(k), expected);
        }
    }

    #[test]
    fn decode_origin_and_one_hot() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = SaeModel::init(4, 8, 2, vec![0.5, -0.5, 1.0, 0.0], &mut rng).unwrap();
        assert_eq!(m.decode(&[0.0; 8]).unwrap(), m.bias());
        let mut z = vec![0.0; 8];
        z[5] = 1.0;
        let out = m.decode(&z).unwrap();
        for i in 0..4 {
            assert_eq!(out[i], m.atom(5)[i] + m.bias()[i]);
        }
    }

    #[test]
    fn dimension_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = SaeModel::init(4, 8, 2, vec![0.0; 4], &mut rng).unwrap();
        assert!(matches!(m.encode(&[0.0; 3]), Err(Error::DimMismatch { .. })));
        assert!(matches!(m.decode(&[0.0; 7]), Err(Error::DimMismatch { .. })));
        assert!(m.clone().with_topk(9).is_err());
    }

    #[test]
    fn w_enc_layout_roundtrip() {
        let w_enc: Vec<f32> = (0..6).map(|x| x as f32).collect();
        let m = SaeModel::from_parts(2, 3, 1, &w_enc, &[1.0; 6], vec![0.0; 2]).unwrap();
        assert_eq!(m.w_enc(), w_enc);
        // Column 1 of W_enc (d x k) is [1, 4].
        assert_eq!(m.encoder_row(1), &[1.0, 4.0]);
    }

    /// Reconstruction error cannot grow with topk when atoms are orthonormal
    /// and the encoder is tied: each extra positive coefficient removes its
    /// squared projection from the residual.
    #[test]
    fn error_monotone_in_topk_for_orthonormal_tied_model() {
        let d = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut basis: Vec<Vec<f32>> = Vec::new();
        while basis.len() < d {
            let mut v: Vec<f32> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            for b in &basis {
                let p = dot(&v, b);
                axpy(-p, b, &mut v);
            }
            if normalize(&mut v) {
                basis.push(v);
            }
        }
        let dec: Vec<f32> = basis.concat();
        let mut w_enc = vec![0.0; d * d];
        for j in 0..d {
            for i in 0..d {
                w_enc[i * d + j] = dec[j * d + i];
            }
        }
        let base = SaeModel::from_parts(d, d, 1, &w_enc, &dec, vec![0.0; d]).unwrap();
        for _ in 0..25 {
            let h: Vec<f32> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let mut prev = f64::INFINITY;
            for topk in 1..=d {
                let m = base.clone().with_topk(topk).unwrap();
                let rec = m.decode_sparse(&m.encode(&h).unwrap());
                let err: f64 = rec.iter().zip(&h).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
                assert!(err <= prev + 1e-9, "topk {topk}: {err} > {prev}");
                prev = err;
            }
        }
    }
}
