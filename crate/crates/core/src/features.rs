//! Utterance embeddings from per-layer hidden states: frame-wise layer
//! concatenation, temporal mean pooling and projection onto the unit sphere.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SnapError};
use crate::store::LabeledEmbeddingSet;

/// Norms at or below this are treated as zero.
pub const NORM_EPSILON: f64 = 1e-12;

/// Stack two `T x D` layer outputs side by side into `T x 2D`.
pub fn concat_layers(low: &DMatrix<f64>, high: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if low.shape() != high.shape() {
        return Err(SnapError::Shape(format!(
            "layer shapes differ: {:?} vs {:?}",
            low.shape(),
            high.shape()
        )));
    }
    let (t, d) = low.shape();
    let mut out = DMatrix::zeros(t, 2 * d);
    out.columns_mut(0, d).copy_from(low);
    out.columns_mut(d, d).copy_from(high);
    Ok(out)
}

/// Column-wise mean over frames.
pub fn pool_mean(frames: &DMatrix<f64>) -> Result<DVector<f64>> {
    let t = frames.nrows();
    if t == 0 || frames.ncols() == 0 {
        return Err(SnapError::Empty("cannot pool an empty frame matrix".into()));
    }
    let mut sum = DVector::zeros(frames.ncols());
    for row in frames.row_iter() {
        sum += row.transpose();
    }
    Ok(sum / t as f64)
}

/// Scale `f` to unit Euclidean norm.
pub fn l2_normalize(f: &DVector<f64>) -> Result<DVector<f64>> {
    let norm = f.norm();
    if norm.is_nan() || norm <= NORM_EPSILON {
        return Err(SnapError::Degenerate(format!(
            "vector norm {norm:e} too small to normalize"
        )));
    }
    Ok(f / norm)
}

/// Pool and normalize every record. The result is a pooled set in input order.
pub fn prepare_set(set: &LabeledEmbeddingSet) -> Result<LabeledEmbeddingSet> {
    let records = set
        .records()
        .iter()
        .map(|rec| {
            let pooled = pool_mean(&rec.frames)?;
            let z = l2_normalize(&pooled).map_err(|e| {
                SnapError::Degenerate(format!("record {:?}: {e}", rec.utt_id))
            })?;
            Ok(rec.with_embedding(&z))
        })
        .collect::<Result<Vec<_>>>()?;
    LabeledEmbeddingSet::new(set.dim(), true, records)
}
