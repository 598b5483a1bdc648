//! Speaker subspace estimation and nulling.
//!
//! The subspace is spanned by the leading principal directions of the
//! per-speaker centroids. Projection onto its orthogonal complement is applied
//! as `z - U (U^T z)`; the `dim x dim` projector is never formed.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SnapError};
use crate::store::LabeledEmbeddingSet;

/// Rank used when none is given.
pub const DEFAULT_K: usize = 5;

/// Tolerance on `U^T U = I` accepted when constructing a subspace from stored
/// parameters.
const ORTHONORMALITY_TOLERANCE: f64 = 1e-8;

/// Per-speaker mean embeddings, one row per speaker in first-appearance order.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidTable {
    pub speakers: Vec<String>,
    pub centroids: DMatrix<f64>,
}

impl CentroidTable {
    pub fn n_speakers(&self) -> usize {
        self.speakers.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.ncols()
    }
}

/// Mean embedding of every speaker. All records count, whatever their class.
pub fn speaker_centroids(set: &LabeledEmbeddingSet) -> Result<CentroidTable> {
    if set.is_empty() {
        return Err(SnapError::Empty("no records to compute centroids from".into()));
    }
    if !set.is_pooled() {
        return Err(SnapError::validation("set", "centroids require a pooled set"));
    }
    let mut order: Vec<String> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let mut sums: Vec<DVector<f64>> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for rec in set.records() {
        let i = *slot.entry(rec.speaker_id.as_str()).or_insert_with(|| {
            order.push(rec.speaker_id.clone());
            sums.push(DVector::zeros(set.dim()));
            counts.push(0);
            order.len() - 1
        });
        sums[i] += rec.frames.row(0).transpose();
        counts[i] += 1;
    }
    let mut centroids = DMatrix::zeros(order.len(), set.dim());
    for (i, (sum, &n)) in sums.iter().zip(&counts).enumerate() {
        centroids.row_mut(i).copy_from(&(sum / n as f64).transpose());
    }
    Ok(CentroidTable {
        speakers: order,
        centroids,
    })
}

/// Orthonormal basis of the estimated speaker subspace plus the centering
/// mean and the retained covariance eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerSubspace {
    centroid_mean: DVector<f64>,
    basis: DMatrix<f64>,
    eigenvalues: Vec<f64>,
}

impl SpeakerSubspace {
    /// Rebuild a subspace from stored parameters, checking its invariants.
    pub fn new(centroid_mean: DVector<f64>, basis: DMatrix<f64>, eigenvalues: Vec<f64>) -> Result<Self> {
        let dim = centroid_mean.len();
        if dim == 0 {
            return Err(SnapError::validation("subspace", "dimension must be at least 1"));
        }
        if basis.nrows() != dim {
            return Err(SnapError::DimMismatch {
                context: "subspace basis rows".into(),
                expected: dim,
                found: basis.nrows(),
            });
        }
        let k = basis.ncols();
        if eigenvalues.len() != k {
            return Err(SnapError::DimMismatch {
                context: "subspace eigenvalue count".into(),
                expected: k,
                found: eigenvalues.len(),
            });
        }
        if k > dim {
            return Err(SnapError::RankOutOfRange { k, max: dim });
        }
        if centroid_mean.iter().chain(basis.iter()).chain(&eigenvalues).any(|v| !v.is_finite()) {
            return Err(SnapError::validation("subspace", "non-finite parameter"));
        }
        if eigenvalues.windows(2).any(|w| w[0] < w[1]) || eigenvalues.iter().any(|&l| l < -1e-10) {
            return Err(SnapError::validation(
                "subspace",
                "eigenvalues must be non-negative and sorted descending",
            ));
        }
        let gram = basis.transpose() * &basis;
        let deviation = (gram - DMatrix::identity(k, k)).amax();
        if deviation > ORTHONORMALITY_TOLERANCE {
            return Err(SnapError::validation(
                "subspace",
                format!("basis is not orthonormal (max deviation {deviation:e})"),
            ));
        }
        Ok(SpeakerSubspace {
            centroid_mean,
            basis,
            eigenvalues,
        })
    }

    /// The empty (k = 0) subspace; nulling with it is the identity.
    pub fn identity(dim: usize) -> Self {
        SpeakerSubspace {
            centroid_mean: DVector::zeros(dim),
            basis: DMatrix::zeros(dim, 0),
            eigenvalues: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.centroid_mean.len()
    }

    pub fn k(&self) -> usize {
        self.basis.ncols()
    }

    pub fn centroid_mean(&self) -> &DVector<f64> {
        &self.centroid_mean
    }

    /// `dim x k`, orthonormal columns, leading direction first.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }
}

/// Fit a rank-`k` speaker subspace to the centroids.
///
/// The basis holds the top-`k` eigenvectors of the centroid covariance
/// `Σ = C̄ᵀC̄ / (|S| - 1)`. With `A` the scaled, centered centroids as columns
/// (`A Aᵀ = Σ`), the smaller of the two symmetric problems is solved: `Σ`
/// itself when `dim < |S|`, otherwise the `|S| x |S|` Gram matrix `AᵀA`,
/// whose eigenvectors `v` map to `u = A v / √λ`. Each column's
/// largest-magnitude entry is made positive.
pub fn fit_speaker_subspace(table: &CentroidTable, k: usize) -> Result<SpeakerSubspace> {
    let n = table.n_speakers();
    let dim = table.dim();
    if n == 0 || dim == 0 {
        return Err(SnapError::Empty("centroid table is empty".into()));
    }
    let max_k = dim.min(n - 1);
    if k > max_k {
        return Err(SnapError::RankOutOfRange { k, max: max_k });
    }

    let mean: DVector<f64> = table.centroids.row_mean().transpose();
    if k == 0 {
        return Ok(SpeakerSubspace {
            centroid_mean: mean,
            basis: DMatrix::zeros(dim, 0),
            eigenvalues: Vec::new(),
        });
    }

    // dim x n, columns are centered centroids scaled so that A A^T = Σ
    let scale = 1.0 / ((n - 1) as f64).sqrt();
    let mut a = table.centroids.transpose();
    for mut col in a.column_iter_mut() {
        col -= &mean;
        col *= scale;
    }

    let via_gram = n <= dim;
    let eig = if via_gram {
        a.tr_mul(&a).symmetric_eigen()
    } else {
        (&a * a.transpose()).symmetric_eigen()
    };
    let values = &eig.eigenvalues;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));

    // Eigenvalues of a Gram matrix carry absolute error of order eps * λ_max,
    // so the exact zeros (there is always at least one) land near that level.
    let lambda_max = values[order[0]].max(0.0);
    let tol = lambda_max * dim.max(n) as f64 * f64::EPSILON;
    let rank = values.iter().filter(|&&v| v > tol).count();
    if rank < k {
        return Err(SnapError::RankDeficient {
            requested: k,
            achievable: rank,
        });
    }

    let mut basis = DMatrix::zeros(dim, k);
    let mut eigenvalues = Vec::with_capacity(k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        let lambda = values[idx];
        let v = eig.eigenvectors.column(idx);
        let mut col = if via_gram { &a * v } else { v.clone_owned() };
        col.normalize_mut();
        let pivot = col.iamax();
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        basis.set_column(c, &col);
        eigenvalues.push(lambda);
    }

    Ok(SpeakerSubspace {
        centroid_mean: mean,
        basis,
        eigenvalues,
    })
}

/// Remove the speaker-subspace component: `z - U (U^T z)`.
pub fn null_project(subspace: &SpeakerSubspace, z: &DVector<f64>) -> Result<DVector<f64>> {
    if z.len() != subspace.dim() {
        return Err(SnapError::DimMismatch {
            context: "projection input".into(),
            expected: subspace.dim(),
            found: z.len(),
        });
    }
    if subspace.k() == 0 {
        return Ok(z.clone());
    }
    let coords = subspace.basis.tr_mul(z);
    Ok(z - &subspace.basis * coords)
}

/// Row-wise nulling of an `N x dim` feature matrix.
pub fn null_project_rows(subspace: &SpeakerSubspace, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != subspace.dim() {
        return Err(SnapError::DimMismatch {
            context: "projection input columns".into(),
            expected: subspace.dim(),
            found: x.ncols(),
        });
    }
    if subspace.k() == 0 {
        return Ok(x.clone());
    }
    let coords = x * &subspace.basis;
    Ok(x - coords * subspace.basis.transpose())
}

/// Null every record of a pooled set, labels and order preserved.
pub fn null_project_set(subspace: &SpeakerSubspace, set: &LabeledEmbeddingSet) -> Result<LabeledEmbeddingSet> {
    if set.dim() != subspace.dim() {
        let context = match set.records().first() {
            Some(r) => format!("record {:?}", r.utt_id),
            None => "empty set".into(),
        };
        return Err(SnapError::DimMismatch {
            context,
            expected: subspace.dim(),
            found: set.dim(),
        });
    }
    if !set.is_pooled() {
        return Err(SnapError::validation("set", "projection requires a pooled set"));
    }
    let records = set
        .records()
        .iter()
        .map(|rec| Ok(rec.with_embedding(&null_project(subspace, &rec.embedding())?)))
        .collect::<Result<Vec<_>>>()?;
    LabeledEmbeddingSet::new(set.dim(), true, records)
}

/// Largest principal angle (radians) between the column spans of two
/// orthonormal bases of equal rank. The sine comes from the top eigenvalue of
/// `RᵀR` with `R = A - B Bᵀ A`, so tiny angles keep full precision.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "bases must have the same shape");
    if a.ncols() == 0 {
        return 0.0;
    }
    let residual = a - b * b.tr_mul(a);
    let top = residual
        .tr_mul(&residual)
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0_f64, |m, &v| m.max(v));
    top.sqrt().min(1.0).asin()
}
