//! Desk-scale experiments on synthetic data: silhouettes and EER on held-out
//! speakers, and EER as the number of training speakers grows.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classifier::TrainConfig;
use crate::error::{Result, SnapError};
use crate::metrics::{compute_eer, entanglement_report};
use crate::pipeline::{fit_classifier, score_set};
use crate::store::LabeledEmbeddingSet;
use crate::subspace::{fit_speaker_subspace, speaker_centroids, SpeakerSubspace};
use crate::synth::{generate, SynthConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntanglementExperiment {
    pub k: usize,
    pub n_train_speakers: usize,
    pub n_test_speakers: usize,
    pub baseline_speaker_silhouette: f64,
    pub snap_speaker_silhouette: f64,
    pub baseline_class_silhouette: f64,
    pub snap_class_silhouette: f64,
    pub baseline_eer: f64,
    pub snap_eer: f64,
}

impl EntanglementExperiment {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "k = {}, train speakers = {}, held-out speakers = {}",
            self.k, self.n_train_speakers, self.n_test_speakers
        );
        let _ = writeln!(out, "                      baseline      nulled");
        let _ = writeln!(
            out,
            "speaker silhouette  {:>10.4}  {:>10.4}",
            self.baseline_speaker_silhouette, self.snap_speaker_silhouette
        );
        let _ = writeln!(
            out,
            "class silhouette    {:>10.4}  {:>10.4}",
            self.baseline_class_silhouette, self.snap_class_silhouette
        );
        let _ = writeln!(
            out,
            "EER (%)             {:>10.2}  {:>10.2}",
            100.0 * self.baseline_eer,
            100.0 * self.snap_eer
        );
        out
    }
}

fn speaker_index(id: &str) -> usize {
    id.trim_start_matches("spk").parse().expect("synthetic speaker id")
}

fn eer_under(
    subspace: &SpeakerSubspace,
    train_set: &LabeledEmbeddingSet,
    test_set: &LabeledEmbeddingSet,
    cfg: &TrainConfig,
) -> Result<f64> {
    let (clf, _) = fit_classifier(subspace, train_set, cfg, None)?;
    Ok(compute_eer(&score_set(subspace, &clf, test_set)?)?.eer)
}

/// Generate data, fit on the first half of the speakers and report
/// silhouettes and EER on the second half.
pub fn run_entanglement_experiment(
    synth: &SynthConfig,
    k: usize,
    train_cfg: &TrainConfig,
) -> Result<EntanglementExperiment> {
    if synth.n_speakers < 4 {
        return Err(SnapError::InvalidParameter(format!(
            "need at least 4 speakers (2 training, 2 held out), have {}",
            synth.n_speakers
        )));
    }
    let (set, _) = generate(synth)?;
    let n_train = synth.n_speakers.div_ceil(2);
    let train_set = set.filter_speakers(|s| speaker_index(s) < n_train);
    let test_set = set.filter_speakers(|s| speaker_index(s) >= n_train);

    let subspace = fit_speaker_subspace(&speaker_centroids(&train_set)?, k)?;
    let identity = SpeakerSubspace::identity(set.dim());
    let report = entanglement_report(&test_set, Some(&subspace))?;
    let nulled = report.nulled.expect("subspace supplied");

    Ok(EntanglementExperiment {
        k,
        n_train_speakers: n_train,
        n_test_speakers: synth.n_speakers - n_train,
        baseline_speaker_silhouette: report.baseline.speaker.mean,
        snap_speaker_silhouette: nulled.speaker.mean,
        baseline_class_silhouette: report.baseline.class.mean,
        snap_class_silhouette: nulled.class.mean,
        baseline_eer: eer_under(&identity, &train_set, &test_set, train_cfg)?,
        snap_eer: eer_under(&subspace, &train_set, &test_set, train_cfg)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_train_speakers: usize,
    /// `min(k, n_train_speakers - 1, dim)`.
    pub effective_k: usize,
    pub baseline_eer: f64,
    pub snap_eer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub k: usize,
    pub n_test_speakers: usize,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# k = {}, held-out speakers = {}", self.k, self.n_test_speakers);
        let _ = writeln!(out, "# speakers  k_eff  baseline_eer_pct  snap_eer_pct");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:>10}  {:>5}  {:>16.4}  {:>12.4}",
                r.n_train_speakers,
                r.effective_k,
                100.0 * r.baseline_eer,
                100.0 * r.snap_eer
            );
        }
        out
    }
}

/// Train on the first `c` speakers for each `c` in `speaker_counts` and
/// evaluate on the speakers beyond the largest count. The subspace rank is
/// capped at what `c` speakers support.
pub fn run_speaker_sweep(
    synth: &SynthConfig,
    speaker_counts: &[usize],
    k: usize,
    train_cfg: &TrainConfig,
) -> Result<SweepTable> {
    let max_count = *speaker_counts
        .iter()
        .max()
        .ok_or_else(|| SnapError::Empty("no speaker counts given".into()))?;
    if speaker_counts.contains(&0) {
        return Err(SnapError::InvalidParameter("speaker counts must be positive".into()));
    }
    if max_count >= synth.n_speakers {
        return Err(SnapError::InvalidParameter(format!(
            "insufficient speakers: largest count {max_count} leaves no held-out speakers out of {}",
            synth.n_speakers
        )));
    }
    let (set, _) = generate(synth)?;
    let test_set = set.filter_speakers(|s| speaker_index(s) >= max_count);
    let identity = SpeakerSubspace::identity(set.dim());

    let mut rows = Vec::with_capacity(speaker_counts.len());
    for &count in speaker_counts {
        let train_set = set.filter_speakers(|s| speaker_index(s) < count);
        let effective_k = k.min(count - 1).min(set.dim());
        let subspace = fit_speaker_subspace(&speaker_centroids(&train_set)?, effective_k)?;
        rows.push(SweepRow {
            n_train_speakers: count,
            effective_k,
            baseline_eer: eer_under(&identity, &train_set, &test_set, train_cfg)?,
            snap_eer: eer_under(&subspace, &train_set, &test_set, train_cfg)?,
        });
    }
    Ok(SweepTable {
        k,
        n_test_speakers: synth.n_speakers - max_count,
        rows,
    })
}
