//! Linear anchor decoder fitted by truncated eigen-decomposition.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// `attrs ≈ mean + basis · embedding`, with orthonormal basis columns.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderWeights {
    pub mean: DVector<f64>,
    /// `A × D`.
    pub basis: DMatrix<f64>,
}

impl DecoderWeights {
    pub fn attr_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn decode(&self, embedding: &[f64]) -> Result<DVector<f64>> {
        if embedding.len() != self.embed_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.embed_dim(),
                found: embedding.len(),
            });
        }
        Ok(&self.mean + &self.basis * DVector::from_column_slice(embedding))
    }

    pub fn encode(&self, attrs: &[f64]) -> Result<DVector<f64>> {
        if attrs.len() != self.attr_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.attr_dim(),
                found: attrs.len(),
            });
        }
        Ok(self.basis.tr_mul(&(DVector::from_column_slice(attrs) - &self.mean)))
    }

    /// Embeddings of every row of `attrs` (`N × A` to `N × D`).
    pub fn encode_rows(&self, attrs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut centered = attrs.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mean.transpose();
        }
        centered * &self.basis
    }

    /// Reconstruction of every row of `embeddings` (`N × D` to `N × A`).
    pub fn decode_rows(&self, embeddings: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = embeddings * self.basis.transpose();
        for mut row in out.row_iter_mut() {
            row += self.mean.transpose();
        }
        out
    }

    /// Weights as transmitted: every entry rounded to `f32`.
    pub fn to_f32_precision(&self) -> DecoderWeights {
        DecoderWeights {
            mean: self.mean.map(|v| v as f32 as f64),
            basis: self.basis.map(|v| v as f32 as f64),
        }
    }
}

/// Fits a rank-`d` linear decoder to the rows of `attrs` (`N × A`).
///
/// The basis holds the top `d` eigenvectors of the centered scatter matrix, each signed so
/// that its largest-magnitude entry is positive. Returns the embeddings and the weights.
pub fn fit_embedding(attrs: &DMatrix<f64>, d: usize) -> Result<(DMatrix<f64>, DecoderWeights)> {
    let (n, a) = attrs.shape();
    if n == 0 {
        return Err(Error::InsufficientData("no rows to fit an embedding".into()));
    }
    if d == 0 || d > a {
        return Err(Error::InvalidInput(format!("embedding dimension {d} outside 1..={a}")));
    }
    let mean = DVector::from_iterator(a, attrs.column_iter().map(|c| c.sum() / n as f64));
    let mut centered = attrs.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let scatter = centered.tr_mul(&centered);
    let eig = SymmetricEigen::new(scatter);
    let mut order: Vec<usize> = (0..a).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let mut basis = DMatrix::zeros(a, d);
    for (col, &src) in order.iter().take(d).enumerate() {
        let mut v = eig.eigenvectors.column(src).into_owned();
        let lead = v.iamax();
        if v[lead] < 0.0 {
            v = -v;
        }
        basis.set_column(col, &v);
    }
    let weights = DecoderWeights { mean, basis };
    let embeddings = weights.encode_rows(attrs);
    Ok((embeddings, weights))
}

/// Sum of squared reconstruction errors of `attrs` through `weights`.
pub fn reconstruction_error(attrs: &DMatrix<f64>, weights: &DecoderWeights) -> f64 {
    let rec = weights.decode_rows(&weights.encode_rows(attrs));
    (attrs - rec).norm_squared()
}
