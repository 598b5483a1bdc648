//! Detection metrics (EER, threshold metrics) and cosine-distance silhouette
//! analysis.
//!
//! Spoof (label 1) is the positive class and higher scores are more
//! spoof-like.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SnapError};
use crate::store::{Label, LabeledEmbeddingSet};
use crate::subspace::{null_project_rows, SpeakerSubspace};

/// Default decision threshold for accuracy / precision / recall / F1.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRecord {
    pub utt_id: String,
    pub label: Label,
    pub score: f64,
}

/// Per-record detection scores.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoredSet {
    records: Vec<ScoredRecord>,
}

impl ScoredSet {
    pub fn new(records: Vec<ScoredRecord>) -> Result<Self> {
        if let Some(bad) = records.iter().find(|r| !r.score.is_finite()) {
            return Err(SnapError::validation(
                format!("score for {:?}", bad.utt_id),
                "non-finite score",
            ));
        }
        Ok(ScoredSet { records })
    }

    /// Build from parallel slices with generated ids `0, 1, ...`.
    pub fn from_slices(scores: &[f64], labels: &[u8]) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(SnapError::DimMismatch {
                context: "scores vs labels".into(),
                expected: scores.len(),
                found: labels.len(),
            });
        }
        let records = scores
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (&score, &label))| {
                Ok(ScoredRecord {
                    utt_id: i.to_string(),
                    label: Label::from_u8(label)?,
                    score,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(records)
    }

    pub fn records(&self) -> &[ScoredRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.score).collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label.as_u8()).collect()
    }

    fn class_counts(&self) -> (usize, usize) {
        let pos = self.records.iter().filter(|r| r.label == Label::Spoof).count();
        (pos, self.records.len() - pos)
    }
}

/// Equal error rate and the threshold at which it occurs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerPoint {
    pub eer: f64,
    pub threshold: f64,
}

/// EER by a threshold sweep over midpoints between consecutive distinct
/// scores plus the two infinite sentinels.
///
/// At threshold `t`, FAR is the fraction of bona fide records scored `>= t`
/// and FRR the fraction of spoofs scored `< t`. The crossing is linearly
/// interpolated between the two bracketing sweep points. When reporting the
/// threshold, the lower sentinel is replaced by the smallest score and the
/// upper one by the next float above the largest score; both classify every
/// record exactly as the sentinel would.
pub fn compute_eer(scored: &ScoredSet) -> Result<EerPoint> {
    let (n_pos, n_neg) = scored.class_counts();
    if n_pos == 0 || n_neg == 0 {
        return Err(SnapError::Degenerate(
            "EER needs at least one record of each class".into(),
        ));
    }
    let mut sorted: Vec<(f64, bool)> = scored
        .records
        .iter()
        .map(|r| (r.score, r.label == Label::Spoof))
        .collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Sweep point j sits just above the j-th distinct score group (j = 0 is -inf).
    // Track cumulative counts of records at or below the current group.
    let mut thresholds = vec![sorted[0].0];
    let mut far = vec![1.0];
    let mut frr = vec![0.0];
    let (mut pos_below, mut neg_below) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let value = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == value {
            if sorted[i].1 {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
            i += 1;
        }
        let t = if i < sorted.len() {
            0.5 * (value + sorted[i].0)
        } else {
            value.next_up()
        };
        thresholds.push(t);
        far.push((n_neg - neg_below) as f64 / n_neg as f64);
        frr.push(pos_below as f64 / n_pos as f64);
    }

    let j = (0..far.len())
        .find(|&j| far[j] - frr[j] <= 0.0)
        .expect("FAR - FRR is negative at the upper sentinel");
    let d1 = far[j] - frr[j];
    if d1 == 0.0 {
        return Ok(EerPoint {
            eer: far[j],
            threshold: thresholds[j],
        });
    }
    let d0 = far[j - 1] - frr[j - 1];
    let alpha = d0 / (d0 - d1);
    Ok(EerPoint {
        eer: far[j - 1] + alpha * (far[j] - far[j - 1]),
        threshold: thresholds[j - 1] + alpha * (thresholds[j] - thresholds[j - 1]),
    })
}

/// Threshold-dependent metrics; predicted spoof iff `score >= threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub threshold: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
    pub accuracy: f64,
    /// 0 when nothing is predicted positive (`precision_degenerate` set).
    pub precision: f64,
    /// 0 when there are no positives (`recall_degenerate` set).
    pub recall: f64,
    pub f1: f64,
    pub precision_degenerate: bool,
    pub recall_degenerate: bool,
}

pub fn confusion_metrics(scored: &ScoredSet, threshold: f64) -> Result<ConfusionMetrics> {
    if scored.is_empty() {
        return Err(SnapError::Empty("no scored records".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for r in &scored.records {
        match (r.label == Label::Spoof, r.score >= threshold) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(ConfusionMetrics {
        threshold,
        true_positives: tp,
        false_positives: fp,
        true_negatives: tn,
        false_negatives: fn_,
        accuracy: ratio(tp + tn, scored.len()),
        precision,
        recall,
        f1,
        precision_degenerate: tp + fp == 0,
        recall_degenerate: tp + fn_ == 0,
    })
}

/// EER plus fixed-threshold metrics for one scored set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub eer: f64,
    pub eer_threshold: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    #[serde(flatten)]
    pub at_threshold: ConfusionMetrics,
}

pub fn evaluate(scored: &ScoredSet, threshold: f64) -> Result<EvalReport> {
    let eer = compute_eer(scored)?;
    let (n_pos, n_neg) = scored.class_counts();
    Ok(EvalReport {
        eer: eer.eer,
        eer_threshold: eer.threshold,
        n_pos,
        n_neg,
        at_threshold: confusion_metrics(scored, threshold)?,
    })
}

impl EvalReport {
    /// Human-readable table.
    pub fn to_text(&self) -> String {
        let m = &self.at_threshold;
        let mut out = String::new();
        let _ = writeln!(out, "metric          value");
        let _ = writeln!(out, "EER (%)         {:.2}", 100.0 * self.eer);
        let _ = writeln!(out, "EER threshold   {:.6}", self.eer_threshold);
        let _ = writeln!(out, "threshold       {}", m.threshold);
        let _ = writeln!(out, "accuracy        {:.3}", m.accuracy);
        let flag = |d: bool| if d { " (degenerate)" } else { "" };
        let _ = writeln!(out, "precision       {:.3}{}", m.precision, flag(m.precision_degenerate));
        let _ = writeln!(out, "recall          {:.3}{}", m.recall, flag(m.recall_degenerate));
        let _ = writeln!(out, "F1              {:.3}", m.f1);
        let _ = writeln!(out, "spoof / bonafide {} / {}", self.n_pos, self.n_neg);
        out
    }
}

// --- score tables ------------------------------------------------------------

const SCORE_HEADER: &str = "utt_id\tlabel\tscore";

/// Tab-separated `utt_id label score` table with a header line.
pub fn format_score_table(scored: &ScoredSet) -> String {
    let mut out = String::with_capacity(32 * scored.len());
    out.push_str(SCORE_HEADER);
    out.push('\n');
    for r in &scored.records {
        let _ = writeln!(out, "{}\t{}\t{:.16e}", r.utt_id, r.label, r.score);
    }
    out
}

pub fn parse_score_table(text: &str) -> Result<ScoredSet> {
    let mut records = Vec::new();
    let mut offset = 0;
    for (n, line) in text.split_inclusive('\n').enumerate() {
        let line_offset = offset;
        offset += line.len();
        let line = line.trim_end_matches(['\n', '\r']);
        if line.is_empty() || (n == 0 && line == SCORE_HEADER) {
            continue;
        }
        let err = |message: String| SnapError::Parse {
            offset: line_offset,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let label = fields[1]
            .parse::<u8>()
            .map_err(|_| err(format!("bad label {:?}", fields[1])))
            .and_then(|v| Label::from_u8(v).map_err(|e| err(e.to_string())))?;
        let score = fields[2]
            .parse::<f64>()
            .ok()
            .filter(|s| s.is_finite())
            .ok_or_else(|| err(format!("bad score {:?}", fields[2])))?;
        records.push(ScoredRecord {
            utt_id: fields[0].to_string(),
            label,
            score,
        });
    }
    ScoredSet::new(records)
}

// --- silhouette ------------------------------------------------------------

/// Per-sample silhouette coefficients and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Silhouette {
    pub coefficients: Vec<f64>,
    pub mean: f64,
}

/// Cosine distance `1 - x·y / (|x| |y|)`.
fn cosine_distance_matrix(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut unit = x.clone();
    for (i, mut row) in unit.row_iter_mut().enumerate() {
        let norm = row.norm();
        if norm.is_nan() || norm <= 0.0 {
            return Err(SnapError::Degenerate(format!(
                "sample {i} is a zero vector; cosine distance undefined"
            )));
        }
        row /= norm;
    }
    let mut d = &unit * unit.transpose();
    d.apply(|v| *v = 1.0 - *v);
    Ok(d)
}

/// Silhouette coefficients under cosine distance.
///
/// `a(i)` is the mean distance to the other members of `i`'s cluster and
/// `b(i)` the smallest mean distance to another cluster;
/// `s(i) = (b - a) / max(a, b)`. Members of singleton clusters get 0.
pub fn silhouette_cosine<L: Eq + std::hash::Hash>(x: &DMatrix<f64>, clusters: &[L]) -> Result<Silhouette> {
    let n = x.nrows();
    if clusters.len() != n {
        return Err(SnapError::DimMismatch {
            context: "cluster labels".into(),
            expected: n,
            found: clusters.len(),
        });
    }
    if n < 2 {
        return Err(SnapError::Empty("silhouette needs at least two samples".into()));
    }
    let mut ids: HashMap<&L, usize> = HashMap::new();
    let assign: Vec<usize> = clusters
        .iter()
        .map(|c| {
            let next = ids.len();
            *ids.entry(c).or_insert(next)
        })
        .collect();
    let n_clusters = ids.len();
    if n_clusters < 2 {
        return Err(SnapError::Degenerate(
            "silhouette is undefined for a single cluster".into(),
        ));
    }
    let mut sizes = vec![0usize; n_clusters];
    for &c in &assign {
        sizes[c] += 1;
    }

    let d = cosine_distance_matrix(x)?;
    let mut coefficients = Vec::with_capacity(n);
    let mut sums = vec![0.0; n_clusters];
    for i in 0..n {
        let own = assign[i];
        if sizes[own] == 1 {
            coefficients.push(0.0);
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if j != i {
                sums[assign[j]] += d[(i, j)];
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..n_clusters)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        coefficients.push(if denom > 0.0 { (b - a) / denom } else { 0.0 });
    }
    let mean = coefficients.iter().sum::<f64>() / n as f64;
    Ok(Silhouette { coefficients, mean })
}

/// Silhouettes of one feature space clustered by speaker and by class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilhouettePair {
    pub speaker: Silhouette,
    pub class: Silhouette,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntanglementReport {
    pub baseline: SilhouettePair,
    /// Present when a subspace was supplied.
    pub nulled: Option<SilhouettePair>,
}

fn silhouette_pair(x: &DMatrix<f64>, set: &LabeledEmbeddingSet) -> Result<SilhouettePair> {
    let speakers: Vec<&str> = set.records().iter().map(|r| r.speaker_id.as_str()).collect();
    let classes: Vec<Label> = set.records().iter().map(|r| r.label).collect();
    Ok(SilhouettePair {
        speaker: silhouette_cosine(x, &speakers)?,
        class: silhouette_cosine(x, &classes)?,
    })
}

/// Speaker and class silhouettes of a prepared set, before and (optionally)
/// after nulling.
pub fn entanglement_report(
    set: &LabeledEmbeddingSet,
    subspace: Option<&SpeakerSubspace>,
) -> Result<EntanglementReport> {
    if set.speakers().len() < 2 {
        return Err(SnapError::Degenerate("need at least two speakers".into()));
    }
    let x = set.embedding_matrix()?;
    let baseline = silhouette_pair(&x, set)?;
    let nulled = match subspace {
        Some(s) => Some(silhouette_pair(&null_project_rows(s, &x)?, set)?),
        None => None,
    };
    Ok(EntanglementReport { baseline, nulled })
}
