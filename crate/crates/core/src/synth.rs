//! Synthetic embeddings with planted speaker, artifact and context subspaces.
//!
//! Each utterance is
//!
//! ```text
//! h = base + speaker_scale * B_S c_spk + [spoof] artifact_scale * B_A m
//!          + context_scale * B_C c_utt + noise_scale * e
//! z = h / |h|
//! ```
//!
//! where `B_S`, `B_A`, `B_C` have mutually orthonormal columns, `c_spk` is
//! fixed per speaker, `m` is a fixed unit mixture of artifact directions
//! shared by all spoofs, and `c_utt`, `e` are fresh standard normal draws.
//!
//! `clone_drift_scale` (default 0) optionally adds a per-speaker offset
//! `clone_drift_scale * B_S d_spk` to that speaker's spoofs only, modelling a
//! cloning system that misses the target voice slightly differently for each
//! speaker. With the default of 0 the artifact is speaker-independent.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SnapError};
use crate::features::l2_normalize;
use crate::store::{Label, LabeledEmbeddingSet, UtteranceRecord};

/// Attack tag given to every synthetic spoof.
pub const SYNTH_ATTACK_ID: &str = "synth";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub dim: usize,
    pub n_speakers: usize,
    pub utts_per_speaker_per_class: usize,
    pub speaker_rank: usize,
    pub artifact_rank: usize,
    pub context_rank: usize,
    pub speaker_scale: f64,
    pub artifact_scale: f64,
    pub context_scale: f64,
    pub noise_scale: f64,
    pub clone_drift_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dim: 64,
            n_speakers: 20,
            utts_per_speaker_per_class: 25,
            speaker_rank: 5,
            artifact_rank: 3,
            context_rank: 10,
            speaker_scale: 1.0,
            artifact_scale: 0.25,
            context_scale: 0.5,
            noise_scale: 0.1,
            clone_drift_scale: 0.0,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.n_speakers == 0 || self.utts_per_speaker_per_class == 0 {
            return Err(SnapError::Config(
                "dim, n_speakers and utts_per_speaker_per_class must be at least 1".into(),
            ));
        }
        let total = self.speaker_rank + self.artifact_rank + self.context_rank;
        if total > self.dim {
            return Err(SnapError::Config(format!(
                "speaker_rank + artifact_rank + context_rank = {total} exceeds dim = {}",
                self.dim
            )));
        }
        for (name, v) in [
            ("speaker_scale", self.speaker_scale),
            ("artifact_scale", self.artifact_scale),
            ("context_scale", self.context_scale),
            ("noise_scale", self.noise_scale),
            ("clone_drift_scale", self.clone_drift_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SnapError::Config(format!("{name} = {v} must be a non-negative number")));
            }
        }
        Ok(())
    }

    /// Parse a TOML document; unknown keys are rejected by name.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SynthConfig = toml::from_str(text).map_err(|e| SnapError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The planted structure behind a generated set. Bases are stored as lists
/// of column vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub speaker_basis: Vec<Vec<f64>>,
    pub artifact_basis: Vec<Vec<f64>>,
    pub context_basis: Vec<Vec<f64>>,
    pub base: Vec<f64>,
    /// Unit vector in artifact coordinates; spoofs are shifted by
    /// `artifact_scale * B_A * artifact_mixture`.
    pub artifact_mixture: Vec<f64>,
    /// One coefficient vector per speaker, in speaker order.
    pub speaker_coefficients: Vec<Vec<f64>>,
    /// Per-speaker spoof offsets in speaker coordinates, before
    /// `clone_drift_scale`.
    pub clone_drifts: Vec<Vec<f64>>,
}

fn columns_to_matrix(dim: usize, cols: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(dim, cols.len(), |i, j| cols[j][i])
}

impl GroundTruth {
    pub fn dim(&self) -> usize {
        self.base.len()
    }

    pub fn speaker_basis_matrix(&self) -> DMatrix<f64> {
        columns_to_matrix(self.dim(), &self.speaker_basis)
    }

    pub fn artifact_basis_matrix(&self) -> DMatrix<f64> {
        columns_to_matrix(self.dim(), &self.artifact_basis)
    }

    pub fn context_basis_matrix(&self) -> DMatrix<f64> {
        columns_to_matrix(self.dim(), &self.context_basis)
    }
}

fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn speaker_name(i: usize) -> String {
    format!("spk{i:03}")
}

/// Draw a labeled set from `cfg`. Deterministic per `cfg.seed`.
pub fn generate(cfg: &SynthConfig) -> Result<(LabeledEmbeddingSet, GroundTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = cfg.dim;
    let (rs, ra, rc) = (cfg.speaker_rank, cfg.artifact_rank, cfg.context_rank);
    let total = rs + ra + rc;

    let q = if total > 0 {
        let gaussian = DMatrix::from_fn(dim, total, |_, _| rng.sample::<f64, _>(StandardNormal));
        gaussian.qr().q()
    } else {
        DMatrix::zeros(dim, 0)
    };
    let b_s = q.columns(0, rs).clone_owned();
    let b_a = q.columns(rs, ra).clone_owned();
    let b_c = q.columns(rs + ra, rc).clone_owned();

    let base = l2_normalize(&normal_vector(&mut rng, dim))?;
    let mixture = if ra > 0 {
        l2_normalize(&normal_vector(&mut rng, ra))?
    } else {
        DVector::zeros(0)
    };
    let spoof_shift = &b_a * &mixture * cfg.artifact_scale;

    let mut records = Vec::with_capacity(cfg.n_speakers * cfg.utts_per_speaker_per_class * 2);
    let mut coefficients = Vec::with_capacity(cfg.n_speakers);
    let mut drifts = Vec::with_capacity(cfg.n_speakers);
    for s in 0..cfg.n_speakers {
        let coef = normal_vector(&mut rng, rs);
        let speaker_part = &b_s * &coef * cfg.speaker_scale;
        let drift_coef = normal_vector(&mut rng, rs);
        let drift = &b_s * &drift_coef * cfg.clone_drift_scale;
        coefficients.push(coef.as_slice().to_vec());
        drifts.push(drift_coef.as_slice().to_vec());
        let spk = speaker_name(s);
        for label in [Label::BonaFide, Label::Spoof] {
            for u in 0..cfg.utts_per_speaker_per_class {
                let ctx = normal_vector(&mut rng, rc);
                let noise = normal_vector(&mut rng, dim);
                let mut h = &base + &speaker_part + &b_c * ctx * cfg.context_scale + noise * cfg.noise_scale;
                if label == Label::Spoof {
                    h += &spoof_shift;
                    h += &drift;
                }
                let z = l2_normalize(&h)?;
                let (tag, attack) = match label {
                    Label::BonaFide => ("bona", ""),
                    Label::Spoof => ("spoof", SYNTH_ATTACK_ID),
                };
                records.push(UtteranceRecord::pooled(
                    format!("{spk}-{tag}-{u:03}"),
                    spk.clone(),
                    label,
                    attack,
                    z.as_slice(),
                ));
            }
        }
    }

    let to_cols = |m: &DMatrix<f64>| m.column_iter().map(|c| c.iter().copied().collect()).collect();
    let truth = GroundTruth {
        speaker_basis: to_cols(&b_s),
        artifact_basis: to_cols(&b_a),
        context_basis: to_cols(&b_c),
        base: base.as_slice().to_vec(),
        artifact_mixture: mixture.as_slice().to_vec(),
        speaker_coefficients: coefficients,
        clone_drifts: drifts,
    };
    Ok((LabeledEmbeddingSet::new(dim, true, records)?, truth))
}
