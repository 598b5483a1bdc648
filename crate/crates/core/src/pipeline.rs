//! End-to-end fit and score on prepared (pooled, unit-norm) sets.

use crate::classifier::{predict_rows, train, LinearClassifier, TrainConfig, TrainTrace};
use crate::error::Result;
use crate::metrics::{ScoredRecord, ScoredSet};
use crate::store::LabeledEmbeddingSet;
use crate::subspace::{fit_speaker_subspace, null_project_rows, speaker_centroids, SpeakerSubspace};

#[derive(Debug, Clone)]
pub struct FittedPipeline {
    pub subspace: SpeakerSubspace,
    pub classifier: LinearClassifier,
    pub trace: TrainTrace,
}

/// Fit the speaker subspace on `train`'s centroids, null both sets and train
/// the classifier on the residuals (early-stopping on `validation` if given).
pub fn fit_pipeline(
    train_set: &LabeledEmbeddingSet,
    k: usize,
    cfg: &TrainConfig,
    validation: Option<&LabeledEmbeddingSet>,
) -> Result<FittedPipeline> {
    let subspace = fit_speaker_subspace(&speaker_centroids(train_set)?, k)?;
    let (classifier, trace) = fit_classifier(&subspace, train_set, cfg, validation)?;
    Ok(FittedPipeline {
        subspace,
        classifier,
        trace,
    })
}

/// Train the classifier on residuals under a given subspace.
pub fn fit_classifier(
    subspace: &SpeakerSubspace,
    train_set: &LabeledEmbeddingSet,
    cfg: &TrainConfig,
    validation: Option<&LabeledEmbeddingSet>,
) -> Result<(LinearClassifier, TrainTrace)> {
    let x = null_project_rows(subspace, &train_set.embedding_matrix()?)?;
    let y = train_set.labels();
    match validation {
        Some(v) => {
            let vx = null_project_rows(subspace, &v.embedding_matrix()?)?;
            let vy = v.labels();
            train(&x, &y, cfg, Some((&vx, &vy)))
        }
        None => train(&x, &y, cfg, None),
    }
}

/// Null, then score every record of a prepared set.
pub fn score_set(
    subspace: &SpeakerSubspace,
    classifier: &LinearClassifier,
    set: &LabeledEmbeddingSet,
) -> Result<ScoredSet> {
    let x = null_project_rows(subspace, &set.embedding_matrix()?)?;
    let scores = predict_rows(classifier, &x)?;
    ScoredSet::new(
        set.records()
            .iter()
            .zip(scores)
            .map(|(r, score)| ScoredRecord {
                utt_id: r.utt_id.clone(),
                label: r.label,
                score,
            })
            .collect(),
    )
}
