use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{topk_rectify, SaeModel, SparseCode};
use crate::error::{Error, Result};
use crate::store::EmbeddingMatrix;

/// Sparse codes for a batch of samples, stored row-major in compressed
/// sparse row form. Absent entries are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    rows: usize,
    neurons: usize,
    row_ptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f32>,
}

impl ActivationMatrix {
    pub fn from_codes(neurons: usize, codes: impl IntoIterator<Item = SparseCode>) -> Self {
        let mut m = ActivationMatrix {
            rows: 0,
            neurons,
            row_ptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        };
        for code in codes {
            m.push_row(&code.indices, &code.values);
        }
        m
    }

    fn push_row(&mut self, indices: &[u32], values: &[f32]) {
        self.indices.extend_from_slice(indices);
        self.values.extend_from_slice(values);
        self.row_ptr.push(self.indices.len());
        self.rows += 1;
    }

    /// Builds from a dense row-major matrix. Entries must be nonnegative.
    pub fn from_dense(rows: usize, neurons: usize, data: &[f32]) -> Result<Self> {
        if data.len() != rows * neurons {
            return Err(Error::DimMismatch {
                expected: rows * neurons,
                actual: data.len(),
                context: "dense activations",
            });
        }
        let mut m = ActivationMatrix::from_codes(neurons, std::iter::empty());
        for (r, row) in data.chunks(neurons.max(1)).take(rows).enumerate() {
            let mut idx = Vec::new();
            let mut val = Vec::new();
            for (j, &v) in row.iter().enumerate() {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "activation at row {r}, neuron {j} is {v}; expected finite and >= 0"
                    )));
                }
                if v > 0.0 {
                    idx.push(j as u32);
                    val.push(v);
                }
            }
            m.push_row(&idx, &val);
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, r: usize) -> (&[u32], &[f32]) {
        let (s, e) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.indices[s..e], &self.values[s..e])
    }

    pub fn get(&self, r: usize, j: usize) -> f32 {
        let (idx, val) = self.row(r);
        idx.binary_search(&(j as u32)).map_or(0.0, |p| val[p])
    }

    pub fn max_row_nnz(&self) -> usize {
        self.row_ptr.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
    }

    pub fn to_dense(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.rows * self.neurons];
        for r in 0..self.rows {
            let (idx, val) = self.row(r);
            for (&j, &v) in idx.iter().zip(val) {
                out[r * self.neurons + j as usize] = v;
            }
        }
        out
    }

    /// Nonzero values of every neuron column, each in row order.
    pub fn columns(&self) -> Vec<Vec<f32>> {
        let mut counts = vec![0usize; self.neurons];
        for &j in &self.indices {
            counts[j as usize] += 1;
        }
        let mut cols: Vec<Vec<f32>> = counts.iter().map(|&c| Vec::with_capacity(c)).collect();
        for r in 0..self.rows {
            let (idx, val) = self.row(r);
            for (&j, &v) in idx.iter().zip(val) {
                cols[j as usize].push(v);
            }
        }
        cols
    }

    fn append(&mut self, other: ActivationMatrix) {
        let base = self.indices.len();
        self.indices.extend(other.indices);
        self.values.extend(other.values);
        self.row_ptr
            .extend(other.row_ptr.into_iter().skip(1).map(|p| p + base));
        self.rows += other.rows;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum EncodeMode {
    /// TopK applied to each sample independently.
    SampleTopk,
    /// Keep the `topk * rows` largest pre-activations across each block of
    /// `batch_rows` consecutive rows.
    BatchTopk { batch_rows: usize },
}

const ROW_BLOCK: usize = 512;

pub fn encode_batch(
    matrix: &EmbeddingMatrix,
    model: &SaeModel,
    mode: EncodeMode,
) -> Result<ActivationMatrix> {
    if matrix.cols() != model.d() {
        return Err(Error::DimMismatch {
            expected: model.d(),
            actual: matrix.cols(),
            context: "embedding dims vs SAE input",
        });
    }
    let block = match mode {
        EncodeMode::SampleTopk => ROW_BLOCK,
        EncodeMode::BatchTopk { batch_rows } if batch_rows > 0 => batch_rows,
        EncodeMode::BatchTopk { .. } => {
            return Err(Error::InvalidArgument("batch_rows must be positive".into()))
        }
    };
    let starts: Vec<usize> = (0..matrix.rows()).step_by(block).collect();
    let parts: Vec<ActivationMatrix> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + block).min(matrix.rows());
            match mode {
                EncodeMode::SampleTopk => encode_rows(matrix, model, start, end),
                EncodeMode::BatchTopk { .. } => encode_block_batch_topk(matrix, model, start, end),
            }
        })
        .collect();
    let mut out = ActivationMatrix::from_codes(model.k(), std::iter::empty());
    for p in parts {
        out.append(p);
    }
    Ok(out)
}

fn encode_rows(m: &EmbeddingMatrix, model: &SaeModel, start: usize, end: usize) -> ActivationMatrix {
    let mut centered = vec![0.0; model.d()];
    let mut pre = vec![0.0; model.k()];
    let codes = (start..end).map(|r| {
        model.pre_activations_into(m.row(r), &mut centered, &mut pre);
        topk_rectify(&pre, model.topk())
    });
    // The closure borrows scratch buffers mutably, so collect eagerly.
    let codes: Vec<SparseCode> = codes.collect();
    ActivationMatrix::from_codes(model.k(), codes)
}

fn encode_block_batch_topk(
    m: &EmbeddingMatrix,
    model: &SaeModel,
    start: usize,
    end: usize,
) -> ActivationMatrix {
    let rows = end - start;
    let k = model.k();
    let mut centered = vec![0.0; model.d()];
    let mut pre = vec![0.0f32; rows * k];
    for (r, out) in pre.chunks_mut(k).enumerate() {
        model.pre_activations_into(m.row(start + r), &mut centered, out);
    }
    let codes = batch_topk_codes(&pre, rows, k, model.topk());
    ActivationMatrix::from_codes(k, codes)
}

/// Global TopK over a `rows x k` block of pre-activations. Ties go to the
/// lower flat index (row-major), then non-positive survivors are dropped.
pub(crate) fn batch_topk_codes(pre: &[f32], rows: usize, k: usize, topk: usize) -> Vec<SparseCode> {
    let budget = topk * rows;
    let mut cand: Vec<u32> = (0..pre.len() as u32).filter(|&i| pre[i as usize] > 0.0).collect();
    if cand.len() > budget {
        let by_rank = |a: &u32, b: &u32| pre[*b as usize].total_cmp(&pre[*a as usize]).then(a.cmp(b));
        if budget > 0 {
            cand.select_nth_unstable_by(budget - 1, by_rank);
        }
        cand.truncate(budget);
    }
    cand.sort_unstable();
    let mut codes = vec![SparseCode::default(); rows];
    for flat in cand {
        let (r, j) = (flat as usize / k, flat as usize % k);
        codes[r].indices.push(j as u32);
        codes[r].values.push(pre[flat as usize]);
    }
    codes
}
