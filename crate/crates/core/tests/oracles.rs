//! Per-operation examples checked against independent oracles.

mod common;

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use snap_core::classifier::{
    bce_gradient, bce_loss, predict, sigmoid, train, BatchSize, LinearClassifier, TrainConfig,
};
use snap_core::features::{concat_layers, l2_normalize, pool_mean, prepare_set};
use snap_core::metrics::{compute_eer, confusion_metrics, entanglement_report, silhouette_cosine, ScoredSet};
use snap_core::store::{decode_container, encode_container, stratified_split};
use snap_core::subspace::{
    fit_speaker_subspace, max_principal_angle, null_project, null_project_set, speaker_centroids, CentroidTable,
};
use snap_core::synth::generate;
use snap_core::{Label, LabeledEmbeddingSet, SnapError, SynthConfig, UtteranceRecord};

use common::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn frame_record(utt: &str, spk: &str, label: Label, attack: &str, frames: DMatrix<f64>) -> UtteranceRecord {
    UtteranceRecord {
        utt_id: utt.into(),
        speaker_id: spk.into(),
        label,
        attack_id: attack.into(),
        frames,
    }
}

#[test]
fn truncation_mid_record_names_that_record() {
    let mut r = rng(10);
    let dim = 3;
    let records: Vec<UtteranceRecord> = (0..4)
        .map(|i| {
            let frames = gaussian_matrix(&mut r, i + 1, dim);
            frame_record(&format!("u{i}"), "spk", Label::BonaFide, "", frames)
        })
        .collect();
    let set = LabeledEmbeddingSet::new(dim, false, records.clone()).unwrap();
    let bytes = encode_container(&set).unwrap();

    // Byte length of each record: three u16-prefixed strings, label byte,
    // u32 frame count, then T x D f32 values.
    let record_len = |rec: &UtteranceRecord| {
        2 + rec.utt_id.len() + 2 + rec.speaker_id.len() + 1 + 2 + rec.attack_id.len() + 4 + 4 * rec.n_frames() * dim
    };
    let start_of_2 = 24 + record_len(&records[0]) + record_len(&records[1]);
    assert_eq!(
        bytes.len(),
        24 + records.iter().map(record_len).sum::<usize>()
    );
    let cut = start_of_2 + record_len(&records[2]) / 2;
    match decode_container(&bytes[..cut]) {
        Err(SnapError::Truncated { record, .. }) => assert_eq!(record, 2),
        other => panic!("expected truncation in record 2, got {other:?}"),
    }
}

fn stratum_set(spec: &[(Label, &str, usize)]) -> LabeledEmbeddingSet {
    let mut records = Vec::new();
    for (label, attack, n) in spec {
        for i in 0..*n {
            let id = format!("{label}-{attack}-{i}");
            records.push(UtteranceRecord::pooled(id, format!("s{}", i % 3), *label, *attack, &[i as f64, 1.0]));
        }
    }
    LabeledEmbeddingSet::new(2, true, records).unwrap()
}

#[test]
fn ten_per_stratum_splits_eight_two() {
    let set = stratum_set(&[(Label::BonaFide, "", 10), (Label::Spoof, "A01", 10), (Label::Spoof, "A02", 10)]);
    let (train, val) = stratified_split(&set, 0.8, 3).unwrap();
    let count = |s: &LabeledEmbeddingSet, label: Label, attack: &str| {
        s.records().iter().filter(|r| r.label == label && r.attack_id == attack).count()
    };
    for (label, attack) in [(Label::BonaFide, ""), (Label::Spoof, "A01"), (Label::Spoof, "A02")] {
        assert_eq!(count(&train, label, attack), 8);
        assert_eq!(count(&val, label, attack), 2);
    }
}

#[test]
fn mixed_strata_partition_by_grouping_oracle() {
    let set = stratum_set(&[
        (Label::BonaFide, "", 37),
        (Label::Spoof, "A01", 23),
        (Label::Spoof, "A02", 29),
        (Label::Spoof, "A03", 11),
    ]);
    assert_eq!(set.len(), 100);
    let (train, val) = stratified_split(&set, 0.8, 11).unwrap();

    let ids = |s: &LabeledEmbeddingSet| s.records().iter().map(|r| r.utt_id.clone()).collect::<Vec<_>>();
    let mut union = ids(&train);
    union.extend(ids(&val));
    union.sort();
    let mut all = ids(&set);
    all.sort();
    assert_eq!(union, all);
    let train_ids: std::collections::HashSet<_> = ids(&train).into_iter().collect();
    assert!(ids(&val).iter().all(|v| !train_ids.contains(v)));

    let mut groups: HashMap<(u8, String), (usize, usize)> = HashMap::new();
    for r in set.records() {
        let e = groups.entry((r.label.as_u8(), r.attack_id.clone())).or_default();
        e.0 += 1;
        if train_ids.contains(&r.utt_id) {
            e.1 += 1;
        }
    }
    for ((label, attack), (total, in_train)) in groups {
        let target = 0.8 * total as f64;
        assert!(
            (in_train as f64 - target).abs() <= 1.0,
            "stratum ({label}, {attack}): {in_train} of {total}"
        );
    }
}

#[test]
fn concat_places_columns_by_index() {
    let mut r = rng(11);
    let low = gaussian_matrix(&mut r, 3, 5);
    let high = gaussian_matrix(&mut r, 3, 5);
    let h = concat_layers(&low, &high).unwrap();
    assert_eq!(h.shape(), (3, 10));
    for t in 0..3 {
        for j in 0..5 {
            assert_eq!(h[(t, j)].to_bits(), low[(t, j)].to_bits());
            assert_eq!(h[(t, 5 + j)].to_bits(), high[(t, j)].to_bits());
        }
    }
}

#[test]
fn pool_mean_matches_column_sums() {
    let mut r = rng(12);
    let frames = gaussian_matrix(&mut r, 7, 4);
    let pooled = pool_mean(&frames).unwrap();
    for j in 0..4 {
        let mut sum = 0.0;
        for t in 0..7 {
            sum += frames[(t, j)];
        }
        assert!((pooled[j] - sum / 7.0).abs() <= 1e-12);
    }
}

#[test]
fn prepare_set_is_recordwise_pool_then_normalize() {
    let mut r = rng(13);
    let records: Vec<UtteranceRecord> = (0..6)
        .map(|i| {
            let label = if i % 2 == 0 { Label::BonaFide } else { Label::Spoof };
            frame_record(&format!("u{i}"), "s", label, "", gaussian_matrix(&mut r, 2 + i, 5))
        })
        .collect();
    let set = LabeledEmbeddingSet::new(5, false, records.clone()).unwrap();
    let prepared = prepare_set(&set).unwrap();
    assert!(prepared.is_pooled());
    for (got, rec) in prepared.records().iter().zip(&records) {
        let expected = l2_normalize(&pool_mean(&rec.frames).unwrap()).unwrap();
        assert_eq!(got.embedding(), expected);
        assert_eq!(got.utt_id, rec.utt_id);
    }
}

#[test]
fn centroids_match_group_by_average() {
    let mut r = rng(14);
    let mut records = Vec::new();
    for u in 0..4 {
        for s in 0..3 {
            let row = gaussian_vector(&mut r, 6);
            let label = if u % 2 == 0 { Label::BonaFide } else { Label::Spoof };
            records.push(UtteranceRecord::pooled(format!("s{s}-u{u}"), format!("s{s}"), label, "", row.as_slice()));
        }
    }
    let set = LabeledEmbeddingSet::new(6, true, records).unwrap();
    let table = speaker_centroids(&set).unwrap();
    let rows = rows_of(&set.embedding_matrix().unwrap());
    let speakers: Vec<String> = set.records().iter().map(|r| r.speaker_id.clone()).collect();
    let (names, centroids) = group_centroids(&rows, &speakers);
    assert_eq!(table.speakers, names);
    for (i, c) in centroids.iter().enumerate() {
        for (j, v) in c.iter().enumerate() {
            assert!((table.centroids[(i, j)] - v).abs() <= 1e-12);
        }
    }
}

#[test]
fn eight_centroids_in_six_dims_match_jacobi() {
    let mut r = rng(15);
    let table = CentroidTable {
        speakers: (0..8).map(|i| i.to_string()).collect(),
        centroids: gaussian_matrix(&mut r, 8, 6),
    };
    let sub = fit_speaker_subspace(&table, 2).unwrap();
    let (values, vectors) = jacobi_eigen(&centroid_covariance(&rows_of(&table.centroids)));
    for (got, want) in sub.eigenvalues().iter().zip(&values) {
        assert!(((got - want) / want).abs() <= 1e-10, "{got} vs {want}");
    }
    let top = vectors.columns(0, 2).clone_owned();
    assert!(principal_angle(sub.basis(), &top) <= 1e-8);
    assert!(max_principal_angle(sub.basis(), &top) <= 1e-8);
}

#[test]
fn planted_subspace_is_recovered() {
    let mut r = rng(16);
    let dim = 12;
    let k = 3;
    let q = gaussian_matrix(&mut r, dim, k).qr().q();
    let offset = gaussian_vector(&mut r, dim);
    let coefs = gaussian_matrix(&mut r, 9, k);
    let centroids = DMatrix::from_fn(9, dim, |i, j| offset[j] + (0..k).map(|c| coefs[(i, c)] * q[(j, c)]).sum::<f64>());
    let table = CentroidTable {
        speakers: (0..9).map(|i| i.to_string()).collect(),
        centroids,
    };
    let sub = fit_speaker_subspace(&table, k).unwrap();
    assert!(principal_angle(sub.basis(), &q) <= 1e-8);
    assert!(matches!(
        fit_speaker_subspace(&table, k + 1),
        Err(SnapError::RankDeficient { requested: 4, achievable: 3 })
    ));
}

#[test]
fn projection_matches_materialized_matrix() {
    let mut r = rng(17);
    let table = CentroidTable {
        speakers: (0..6).map(|i| i.to_string()).collect(),
        centroids: gaussian_matrix(&mut r, 6, 10),
    };
    let sub = fit_speaker_subspace(&table, 3).unwrap();
    let z = gaussian_vector(&mut r, 10);
    let dense = materialized_nulling(sub.basis()) * &z;
    assert!((null_project(&sub, &z).unwrap() - dense).amax() <= 1e-10);
}

#[test]
fn set_projection_is_recordwise() {
    let (set, _) = generate(&SynthConfig {
        n_speakers: 4,
        utts_per_speaker_per_class: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    let sub = fit_speaker_subspace(&speaker_centroids(&set).unwrap(), 2).unwrap();
    let projected = null_project_set(&sub, &set).unwrap();
    for (got, rec) in projected.records().iter().zip(set.records()) {
        assert_eq!(got.embedding(), null_project(&sub, &rec.embedding()).unwrap());
        assert_eq!((&got.utt_id, got.label), (&rec.utt_id, rec.label));
    }
}

#[test]
fn bce_matches_per_sample_loop() {
    let mut r = rng(18);
    let x = gaussian_matrix(&mut r, 6, 3);
    let y = [0u8, 1, 1, 0, 1, 0];
    let clf = LinearClassifier::new(gaussian_vector(&mut r, 3), 0.3).unwrap();
    let got = bce_loss(&clf, &x, &y, 0.01).unwrap();
    let want = bce_naive(clf.weights.as_slice(), clf.bias, &rows_of(&x), &y, 0.01);
    assert!((got - want).abs() <= 1e-12);
}

#[test]
fn gradient_matches_finite_differences() {
    let mut r = rng(19);
    let x = gaussian_matrix(&mut r, 8, 4);
    let y = [1u8, 0, 0, 1, 1, 0, 1, 0];
    let clf = LinearClassifier::new(gaussian_vector(&mut r, 4), -0.2).unwrap();
    let (gw, gb) = bce_gradient(&clf, &x, &y, 1e-3).unwrap();
    let rows = rows_of(&x);
    let params: Vec<f64> = clf.weights.iter().copied().chain([clf.bias]).collect();
    let fd = central_difference(&params, 1e-5, |p| bce_naive(&p[..4], p[4], &rows, &y, 1e-3));
    let analytic: Vec<f64> = gw.iter().copied().chain([gb]).collect();
    for (a, n) in analytic.iter().zip(&fd) {
        assert!((a - n).abs() / a.abs().max(n.abs()) <= 1e-6, "{a} vs {n}");
    }
}

#[test]
fn small_step_loss_trace_is_non_increasing() {
    let mut r = rng(20);
    let x = gaussian_matrix(&mut r, 30, 5);
    let y: Vec<u8> = (0..30).map(|i| (i % 3 == 0) as u8).collect();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        epochs: 200,
        batch_size: BatchSize::Full,
        early_stop_patience: None,
        ..TrainConfig::default()
    };
    let (clf, trace) = train(&x, &y, &cfg, None).unwrap();
    assert!(trace.train_loss.windows(2).all(|w| w[1] <= w[0]));
    let last = *trace.train_loss.last().unwrap();
    assert!((bce_loss(&clf, &x, &y, cfg.l2_penalty).unwrap() - last).abs() <= 1e-15);
}

#[test]
fn predict_matches_direct_formula() {
    let mut r = rng(21);
    for _ in 0..50 {
        let w = gaussian_vector(&mut r, 7);
        let z = gaussian_vector(&mut r, 7);
        let b: f64 = r.random_range(-3.0..3.0);
        let clf = LinearClassifier::new(w.clone(), b).unwrap();
        let t = w.dot(&z) + b;
        let direct = 1.0 / (1.0 + (-t).exp());
        assert!((predict(&clf, &z).unwrap() - direct).abs() <= 1e-12);
    }
    assert!((sigmoid(0.0) - 0.5).abs() == 0.0);
}

#[test]
fn thousand_score_eer_matches_exhaustive_sweep() {
    let mut r = rng(22);
    let labels: Vec<u8> = (0..1000).map(|_| r.random_range(0..=1)).collect();
    let scores: Vec<f64> = labels
        .iter()
        .map(|&l| r.random_range(0.0..1.0) + 0.3 * f64::from(l))
        .collect();
    let got = compute_eer(&ScoredSet::from_slices(&scores, &labels).unwrap()).unwrap();
    assert!((got.eer - eer_exhaustive(&scores, &labels)).abs() <= 1e-9);
    let (far, frr) = far_frr(&scores, &labels, got.threshold);
    // The interpolated threshold sits between two sweep points, so the step
    // rates there bracket the EER within one record of each class.
    assert!((far - got.eer).abs() <= 1.0 / 400.0 && (frr - got.eer).abs() <= 1.0 / 400.0);
}

#[test]
fn confusion_matches_counting() {
    let mut r = rng(23);
    let labels: Vec<u8> = (0..50).map(|_| r.random_range(0..=1)).collect();
    let scores: Vec<f64> = (0..50).map(|_| r.random_range(0.0..1.0)).collect();
    let m = confusion_metrics(&ScoredSet::from_slices(&scores, &labels).unwrap(), 0.5).unwrap();
    let (tp, fp, tn, fn_) = confusion_counts(&scores, &labels, 0.5);
    assert_eq!((m.true_positives, m.false_positives, m.true_negatives, m.false_negatives), (tp, fp, tn, fn_));
    assert_eq!(m.accuracy, (tp + tn) as f64 / 50.0);
    assert_eq!(m.precision, tp as f64 / (tp + fp) as f64);
    assert_eq!(m.recall, tp as f64 / (tp + fn_) as f64);
}

#[test]
fn twelve_sample_three_cluster_silhouette() {
    let mut r = rng(24);
    let x = gaussian_matrix(&mut r, 12, 4);
    let clusters: Vec<usize> = (0..12).map(|i| i % 3).collect();
    let got = silhouette_cosine(&x, &clusters).unwrap();
    let want = silhouette_double_loop(&rows_of(&x), &clusters);
    for (a, b) in got.coefficients.iter().zip(&want) {
        assert!((a - b).abs() <= 1e-12);
    }
    assert!((got.mean - want.iter().sum::<f64>() / 12.0).abs() <= 1e-12);
}

#[test]
fn dominant_speaker_variance_entanglement_directions() {
    let (set, _) = generate(&SynthConfig::default()).unwrap();
    let sub = fit_speaker_subspace(&speaker_centroids(&set).unwrap(), 5).unwrap();
    let report = entanglement_report(&set, Some(&sub)).unwrap();
    let nulled = report.nulled.unwrap();
    assert!(nulled.speaker.mean < report.baseline.speaker.mean);
    assert!(nulled.class.mean > report.baseline.class.mean);
}

#[test]
fn raw_speaker_silhouette_exceeds_class_silhouette() {
    let (set, _) = generate(&SynthConfig {
        speaker_scale: 2.0,
        artifact_scale: 0.1,
        ..SynthConfig::default()
    })
    .unwrap();
    let x = set.embedding_matrix().unwrap();
    let rows = rows_of(&x);
    let index = |v: &[String]| {
        let mut seen: Vec<String> = Vec::new();
        v.iter()
            .map(|s| match seen.iter().position(|t| t == s) {
                Some(i) => i,
                None => {
                    seen.push(s.clone());
                    seen.len() - 1
                }
            })
            .collect::<Vec<usize>>()
    };
    let speakers = index(&set.records().iter().map(|r| r.speaker_id.clone()).collect::<Vec<_>>());
    let classes: Vec<usize> = set.labels().iter().map(|&l| l as usize).collect();
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let speaker_sil = mean(silhouette_double_loop(&rows, &speakers));
    let class_sil = mean(silhouette_double_loop(&rows, &classes));
    assert!(speaker_sil > class_sil, "{speaker_sil} vs {class_sil}");
}

#[test]
fn fitted_subspace_approaches_true_speaker_basis() {
    let cfg = SynthConfig {
        speaker_scale: 5.0,
        artifact_scale: 0.25,
        context_scale: 0.5,
        noise_scale: 0.1,
        utts_per_speaker_per_class: 20,
        ..SynthConfig::default()
    };
    let (set, truth) = generate(&cfg).unwrap();
    let sub = fit_speaker_subspace(&speaker_centroids(&set).unwrap(), cfg.speaker_rank).unwrap();
    let angle = principal_angle(sub.basis(), &truth.speaker_basis_matrix());
    assert!(angle <= 0.2, "{angle}");
}

#[test]
fn true_basis_nulling_removes_speaker_component() {
    let (set, truth) = generate(&SynthConfig::default()).unwrap();
    let b = truth.speaker_basis_matrix();
    let sub = snap_core::SpeakerSubspace::new(DVector::zeros(b.nrows()), b.clone(), vec![1.0; b.ncols()]).unwrap();
    for rec in set.records().iter().take(100) {
        let z = null_project(&sub, &rec.embedding()).unwrap();
        assert!((b.transpose() * z).norm() <= 1e-9);
    }
}
