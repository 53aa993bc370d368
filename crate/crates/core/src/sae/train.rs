use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::activations::batch_topk_codes;
use super::{axpy, dot, normalize, topk_rectify, SaeModel, SparseCode};
use crate::error::{Error, Result};
use crate::store::EmbeddingMatrix;

/// Rows per gradient partial. Partials are summed in chunk order, so the
/// result does not depend on how many workers computed them.
const GRAD_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaeTrainConfig {
    /// k / d.
    pub expansion: usize,
    pub topk: usize,
    pub lambda_sparsity: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub batch_topk: bool,
    pub seed: u64,
}

impl Default for SaeTrainConfig {
    fn default() -> Self {
        SaeTrainConfig {
            expansion: 4,
            topk: 20,
            lambda_sparsity: 1e-4,
            epochs: 50,
            batch_size: 256,
            learning_rate: 1e-3,
            batch_topk: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedSae {
    pub model: SaeModel,
    /// Mean per-sample loss of each epoch, measured before each step's update.
    pub loss_trace: Vec<f64>,
}

struct Partial {
    enc: Vec<f32>,
    dec: Vec<f32>,
    bias: Vec<f32>,
    touched: Vec<bool>,
    loss: f64,
}

/// Minimizes `||h - h_hat||^2 + lambda * ||z||_1` averaged over mini-batches
/// with plain gradient descent. Dictionary atoms are renormalized to unit
/// length after every step.
pub fn train_sae(matrix: &EmbeddingMatrix, config: &SaeTrainConfig) -> Result<TrainedSae> {
    let (n, d) = (matrix.rows(), matrix.cols());
    if !(config.learning_rate > 0.0) || config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "learning_rate > 0, epochs >= 1 and batch_size >= 1 are required".into(),
        ));
    }
    if config.lambda_sparsity < 0.0 {
        return Err(Error::InvalidArgument("lambda_sparsity must be nonnegative".into()));
    }
    if n < config.batch_size {
        return Err(Error::InvalidArgument(format!(
            "{n} rows is fewer than batch_size {}",
            config.batch_size
        )));
    }
    let k = config.expansion * d;

    let mut mean = vec![0.0f64; d];
    for r in 0..n {
        for (m, x) in mean.iter_mut().zip(matrix.row(r)) {
            *m += *x as f64;
        }
    }
    let bias: Vec<f32> = mean.iter().map(|m| (m / n as f64) as f32).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = SaeModel::init(d, k, config.topk, bias, &mut rng)?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_trace = Vec::with_capacity(config.epochs);
    let lambda = config.lambda_sparsity as f32;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(config.batch_size) {
            let codes = forward_codes(&model, matrix, batch, config.batch_topk);
            let partials: Vec<Partial> = batch
                .par_chunks(GRAD_CHUNK)
                .zip(codes.par_chunks(GRAD_CHUNK))
                .map(|(rows, codes)| partial_grad(&model, matrix, rows, codes, lambda))
                .collect();
            let mut total = Partial {
                enc: vec![0.0; k * d],
                dec: vec![0.0; k * d],
                bias: vec![0.0; d],
                touched: vec![false; k],
                loss: 0.0,
            };
            for p in &partials {
                total.loss += p.loss;
                axpy(1.0, &p.bias, &mut total.bias);
                for j in (0..k).filter(|&j| p.touched[j]) {
                    total.touched[j] = true;
                    let s = j * d..(j + 1) * d;
                    axpy(1.0, &p.enc[s.clone()], &mut total.enc[s.clone()]);
                    axpy(1.0, &p.dec[s.clone()], &mut total.dec[s]);
                }
            }
            epoch_loss += total.loss;
            if !total.loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }

            let step = -(config.learning_rate / batch.len() as f64) as f32;
            let (enc, dec, b) = model.parts_mut();
            axpy(step, &total.bias, b);
            for j in (0..k).filter(|&j| total.touched[j]) {
                let s = j * d..(j + 1) * d;
                axpy(step, &total.enc[s.clone()], &mut enc[s.clone()]);
                axpy(step, &total.dec[s.clone()], &mut dec[s.clone()]);
                if !normalize(&mut dec[s]) {
                    return Err(Error::Diverged { epoch });
                }
            }
        }
        let mean_loss = epoch_loss / n as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        log::debug!("sae epoch {epoch}: loss {mean_loss:.6}");
        loss_trace.push(mean_loss);
    }
    Ok(TrainedSae { model, loss_trace })
}

fn forward_codes(
    model: &SaeModel,
    matrix: &EmbeddingMatrix,
    batch: &[usize],
    batch_topk: bool,
) -> Vec<SparseCode> {
    let (d, k) = (model.d(), model.k());
    let pre: Vec<f32> = batch
        .par_iter()
        .flat_map_iter(|&r| {
            let mut centered = vec![0.0; d];
            let mut out = vec![0.0; k];
            model.pre_activations_into(matrix.row(r), &mut centered, &mut out);
            out
        })
        .collect();
    if batch_topk {
        batch_topk_codes(&pre, batch.len(), k, model.topk())
    } else {
        pre.par_chunks(k).map(|p| topk_rectify(p, model.topk())).collect()
    }
}

fn partial_grad(
    model: &SaeModel,
    matrix: &EmbeddingMatrix,
    rows: &[usize],
    codes: &[SparseCode],
    lambda: f32,
) -> Partial {
    let (d, k) = (model.d(), model.k());
    let mut p = Partial {
        enc: vec![0.0; k * d],
        dec: vec![0.0; k * d],
        bias: vec![0.0; d],
        touched: vec![false; k],
        loss: 0.0,
    };
    let mut centered = vec![0.0f32; d];
    let mut resid = vec![0.0f32; d];
    for (&r, code) in rows.iter().zip(codes) {
        let h = matrix.row(r);
        for ((c, x), b) in centered.iter_mut().zip(h).zip(model.bias()) {
            *c = x - b;
        }
        // resid = h_hat - h = sum_j z_j atom_j - (h - b)
        for (o, c) in resid.iter_mut().zip(&centered) {
            *o = -c;
        }
        for (&j, &z) in code.indices.iter().zip(&code.values) {
            axpy(z, model.atom(j as usize), &mut resid);
        }
        let sq: f64 = resid.iter().map(|v| (*v as f64) * (*v as f64)).sum();
        let l1: f64 = code.values.iter().map(|v| *v as f64).sum();
        p.loss += sq + lambda as f64 * l1;

        // d/d h_hat = 2 resid; h_hat depends on b directly and through h - b.
        axpy(2.0, &resid, &mut p.bias);
        for (&j, &z) in code.indices.iter().zip(&code.values) {
            let j = j as usize;
            p.touched[j] = true;
            let s = j * d..(j + 1) * d;
            axpy(2.0 * z, &resid, &mut p.dec[s.clone()]);
            let g = 2.0 * dot(&resid, model.atom(j)) + lambda;
            axpy(g, &centered, &mut p.enc[s]);
            axpy(-g, model.encoder_row(j), &mut p.bias);
        }
    }
    p
}

/// `1 - SSE / SST` of the SAE reconstruction over all rows.
pub fn explained_variance(model: &SaeModel, matrix: &EmbeddingMatrix) -> Result<f64> {
    let d = matrix.cols();
    let n = matrix.rows();
    if n == 0 {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    let mut mean = vec![0.0f64; d];
    for r in 0..n {
        for (m, x) in mean.iter_mut().zip(matrix.row(r)) {
            *m += *x as f64 / n as f64;
        }
    }
    let (mut sse, mut sst) = (0.0f64, 0.0f64);
    for r in 0..n {
        let h = matrix.row(r);
        let rec = model.decode_sparse(&model.encode(h)?);
        for i in 0..d {
            sse += ((h[i] - rec[i]) as f64).powi(2);
            sst += (h[i] as f64 - mean[i]).powi(2);
        }
    }
    Ok(1.0 - sse / sst)
}
