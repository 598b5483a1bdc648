//! Logistic-regression head trained by gradient descent on binary
//! cross-entropy.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SnapError};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Weight vector and bias of `σ(wᵀz + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub weights: DVector<f64>,
    pub bias: f64,
}

impl LinearClassifier {
    /// All-zero parameters.
    pub fn zeros(dim: usize) -> Self {
        LinearClassifier {
            weights: DVector::zeros(dim),
            bias: 0.0,
        }
    }

    pub fn new(weights: DVector<f64>, bias: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(SnapError::validation("classifier", "weight vector is empty"));
        }
        if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(SnapError::validation("classifier", "non-finite parameter"));
        }
        Ok(LinearClassifier { weights, bias })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// `dim + 1`.
    pub fn parameter_count(&self) -> usize {
        self.weights.len() + 1
    }

    fn logits(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let mut t = x * &self.weights;
        t.add_scalar_mut(self.bias);
        t
    }
}

/// Mini-batch size for [`train`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchSize {
    Full,
    Size(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2_penalty: f64,
    pub batch_size: BatchSize,
    /// Drives mini-batch shuffling; unused for full-batch descent.
    pub seed: u64,
    /// Stop after this many epochs without a new best validation BCE.
    pub early_stop_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 500,
            l2_penalty: 1e-4,
            batch_size: BatchSize::Full,
            seed: 42,
            early_stop_patience: Some(20),
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SnapError::InvalidParameter(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(SnapError::InvalidParameter("epochs must be positive".into()));
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(SnapError::InvalidParameter(format!(
                "l2 penalty {} must be non-negative",
                self.l2_penalty
            )));
        }
        if self.batch_size == BatchSize::Size(0) {
            return Err(SnapError::InvalidParameter("batch size must be positive".into()));
        }
        if self.early_stop_patience == Some(0) {
            return Err(SnapError::InvalidParameter("patience must be positive".into()));
        }
        Ok(())
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn check_inputs(clf: &LinearClassifier, x: &DMatrix<f64>, y: &[u8]) -> Result<()> {
    if x.nrows() == 0 {
        return Err(SnapError::Empty("no samples".into()));
    }
    if x.ncols() != clf.dim() {
        return Err(SnapError::DimMismatch {
            context: "feature columns".into(),
            expected: clf.dim(),
            found: x.ncols(),
        });
    }
    if y.len() != x.nrows() {
        return Err(SnapError::DimMismatch {
            context: "label count".into(),
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if let Some(&bad) = y.iter().find(|&&v| v > 1) {
        return Err(SnapError::InvalidLabel(bad));
    }
    Ok(())
}

/// Mean binary cross-entropy plus `l2_penalty * |w|² / 2`.
pub fn bce_loss(clf: &LinearClassifier, x: &DMatrix<f64>, y: &[u8], l2_penalty: f64) -> Result<f64> {
    check_inputs(clf, x, y)?;
    let logits = clf.logits(x);
    let hi = 1.0 - PROB_CLAMP;
    let total: f64 = logits
        .iter()
        .zip(y)
        .map(|(&t, &label)| {
            // 1 - σ(t) = σ(-t), evaluated directly to keep precision near 1
            let p = if label == 1 { sigmoid(t) } else { sigmoid(-t) };
            -p.clamp(PROB_CLAMP, hi).ln()
        })
        .sum();
    Ok(total / y.len() as f64 + 0.5 * l2_penalty * clf.weights.norm_squared())
}

/// Gradient of [`bce_loss`] with respect to `(w, b)`.
pub fn bce_gradient(
    clf: &LinearClassifier,
    x: &DMatrix<f64>,
    y: &[u8],
    l2_penalty: f64,
) -> Result<(DVector<f64>, f64)> {
    check_inputs(clf, x, y)?;
    let n = y.len() as f64;
    let mut residual = clf.logits(x);
    for (r, &label) in residual.iter_mut().zip(y) {
        *r = sigmoid(*r) - f64::from(label);
    }
    let mut grad_w = x.tr_mul(&residual) / n;
    grad_w.axpy(l2_penalty, &clf.weights, 1.0);
    Ok((grad_w, residual.sum() / n))
}

/// Per-epoch losses recorded by [`train`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    /// Penalized training objective after each epoch's updates.
    pub train_loss: Vec<f64>,
    /// Unpenalized validation BCE after each epoch, when validation data is given.
    pub validation_loss: Vec<f64>,
    /// Epoch (0-based) whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Gradient descent from zero parameters.
///
/// With validation data and a patience, training stops once the validation
/// BCE has not improved for `patience` epochs and the best parameters seen
/// are returned.
pub fn train(
    x: &DMatrix<f64>,
    y: &[u8],
    cfg: &TrainConfig,
    validation: Option<(&DMatrix<f64>, &[u8])>,
) -> Result<(LinearClassifier, TrainTrace)> {
    cfg.validate()?;
    let mut clf = LinearClassifier::zeros(x.ncols());
    check_inputs(&clf, x, y)?;
    if let Some((vx, vy)) = validation {
        check_inputs(&clf, vx, vy)?;
    }
    let positives = y.iter().filter(|&&v| v == 1).count();
    if positives == 0 || positives == y.len() {
        return Err(SnapError::Degenerate(
            "training data must contain both classes".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..y.len()).collect();
    let mut trace = TrainTrace::default();
    let mut best: Option<(f64, LinearClassifier)> = None;
    let mut since_best = 0;

    for epoch in 0..cfg.epochs {
        match cfg.batch_size {
            BatchSize::Size(b) if b < y.len() => {
                order.shuffle(&mut rng);
                for chunk in order.chunks(b) {
                    let bx = x.select_rows(chunk);
                    let by: Vec<u8> = chunk.iter().map(|&i| y[i]).collect();
                    let (gw, gb) = bce_gradient(&clf, &bx, &by, cfg.l2_penalty)?;
                    clf.weights.axpy(-cfg.learning_rate, &gw, 1.0);
                    clf.bias -= cfg.learning_rate * gb;
                }
            }
            _ => {
                let (gw, gb) = bce_gradient(&clf, x, y, cfg.l2_penalty)?;
                clf.weights.axpy(-cfg.learning_rate, &gw, 1.0);
                clf.bias -= cfg.learning_rate * gb;
            }
        }

        let loss = bce_loss(&clf, x, y, cfg.l2_penalty)?;
        if !loss.is_finite() || !clf.bias.is_finite() || clf.weights.iter().any(|w| !w.is_finite()) {
            return Err(SnapError::Divergence { epoch });
        }
        trace.train_loss.push(loss);
        trace.best_epoch = epoch;

        if let Some((vx, vy)) = validation {
            let vloss = bce_loss(&clf, vx, vy, 0.0)?;
            if !vloss.is_finite() {
                return Err(SnapError::Divergence { epoch });
            }
            trace.validation_loss.push(vloss);
            if let Some(patience) = cfg.early_stop_patience {
                match &best {
                    Some((b, _)) if vloss >= *b => {
                        since_best += 1;
                        if since_best >= patience {
                            trace.stopped_early = true;
                            break;
                        }
                    }
                    _ => {
                        best = Some((vloss, clf.clone()));
                        since_best = 0;
                    }
                }
            }
        }
    }

    if let Some((_, best_clf)) = best {
        trace.best_epoch = trace.train_loss.len() - 1 - since_best;
        clf = best_clf;
    }
    Ok((clf, trace))
}

/// `σ(wᵀz + b)`.
pub fn predict(clf: &LinearClassifier, z: &DVector<f64>) -> Result<f64> {
    if z.len() != clf.dim() {
        return Err(SnapError::DimMismatch {
            context: "prediction input".into(),
            expected: clf.dim(),
            found: z.len(),
        });
    }
    Ok(sigmoid(clf.weights.dot(z) + clf.bias))
}

/// Row-wise [`predict`].
pub fn predict_rows(clf: &LinearClassifier, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x.ncols() != clf.dim() {
        return Err(SnapError::DimMismatch {
            context: "prediction input columns".into(),
            expected: clf.dim(),
            found: x.ncols(),
        });
    }
    Ok(clf.logits(x).iter().map(|&t| sigmoid(t)).collect())
}
