//! Reference implementations used only by tests. Each one follows the
//! textbook definition directly and shares no code path with the library.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Cyclic Jacobi eigensolver for a symmetric matrix. Returns eigenvalues in
/// descending order and the matching eigenvectors as columns.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut a = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        let scale: f64 = (0..n).map(|i| a[(i, i)] * a[(i, i)]).sum::<f64>() + off;
        if off <= 1e-34 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (values, vectors)
}

/// Mean embedding per speaker by an explicit group-by, in first-appearance
/// order. `rows[i]` belongs to `speakers[i]`.
pub fn group_centroids(rows: &[Vec<f64>], speakers: &[String]) -> (Vec<String>, Vec<Vec<f64>>) {
    let dim = rows[0].len();
    let mut names: Vec<String> = Vec::new();
    let mut sums: Vec<Vec<f64>> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for (row, spk) in rows.iter().zip(speakers) {
        let idx = match names.iter().position(|n| n == spk) {
            Some(i) => i,
            None => {
                names.push(spk.clone());
                sums.push(vec![0.0; dim]);
                counts.push(0);
                names.len() - 1
            }
        };
        for (s, v) in sums[idx].iter_mut().zip(row) {
            *s += v;
        }
        counts[idx] += 1;
    }
    let centroids = sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| s.into_iter().map(|v| v / c as f64).collect())
        .collect();
    (names, centroids)
}

/// Sample covariance of centroid rows, by explicit loops.
pub fn centroid_covariance(centroids: &[Vec<f64>]) -> DMatrix<f64> {
    let s = centroids.len();
    let d = centroids[0].len();
    let mut mean = vec![0.0; d];
    for c in centroids {
        for j in 0..d {
            mean[j] += c[j] / s as f64;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for c in centroids {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (c[i] - mean[i]) * (c[j] - mean[j]);
            }
        }
    }
    cov / (s as f64 - 1.0)
}

/// Largest principal angle between the column spans of two orthonormal
/// bases, from the top eigenvalue of `RᵀR` with `R = (I - B Bᵀ) A`.
pub fn principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let residual = (DMatrix::<f64>::identity(n, n) - b * b.transpose()) * a;
    let (values, _) = jacobi_eigen(&(residual.transpose() * &residual));
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    top.sqrt().min(1.0).asin()
}

/// `I - U Uᵀ` as a dense matrix.
pub fn materialized_nulling(u: &DMatrix<f64>) -> DMatrix<f64> {
    let n = u.nrows();
    DMatrix::<f64>::identity(n, n) - u * u.transpose()
}

/// Lower triangle of `I - U Uᵀ`, written into a reusable `D x D` buffer.
/// Multiply with [`symmetric_times`].
pub fn materialized_nulling_lower(p: &mut DMatrix<f64>, u: &DMatrix<f64>) {
    p.fill_with_identity();
    for col in u.column_iter() {
        p.syger(-1.0, &col, &col, 1.0);
    }
}

/// `P z` for a symmetric `P` stored in its lower triangle.
pub fn symmetric_times(p: &DMatrix<f64>, z: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(z.len());
    out.sygemv(1.0, p, z, 0.0);
    out
}

/// FAR and FRR at one threshold, by counting.
pub fn far_frr(scores: &[f64], labels: &[u8], t: f64) -> (f64, f64) {
    let neg = labels.iter().filter(|&&l| l == 0).count() as f64;
    let pos = labels.len() as f64 - neg;
    let fa = scores.iter().zip(labels).filter(|(&s, &l)| l == 0 && s >= t).count() as f64;
    let fr = scores.iter().zip(labels).filter(|(&s, &l)| l == 1 && s < t).count() as f64;
    (fa / neg, fr / pos)
}

/// EER by evaluating FAR/FRR at every candidate threshold from scratch:
/// `-inf`, each midpoint between consecutive distinct scores, `+inf`.
/// The first point where FRR catches up with FAR is interpolated against
/// its predecessor.
pub fn eer_exhaustive(scores: &[f64], labels: &[u8]) -> f64 {
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut thresholds = vec![f64::NEG_INFINITY];
    for w in distinct.windows(2) {
        thresholds.push(0.5 * (w[0] + w[1]));
    }
    thresholds.push(f64::INFINITY);
    let points: Vec<(f64, f64)> = thresholds.iter().map(|&t| far_frr(scores, labels, t)).collect();
    for j in 0..points.len() {
        let (far, frr) = points[j];
        if far <= frr {
            if far == frr {
                return far;
            }
            let (far0, frr0) = points[j - 1];
            let d0 = far0 - frr0;
            let d1 = far - frr;
            let alpha = d0 / (d0 - d1);
            return far0 + alpha * (far - far0);
        }
    }
    unreachable!("FAR is 0 and FRR is 1 at +inf")
}

/// Cosine silhouette straight from the definition, one pair at a time.
pub fn silhouette_double_loop(rows: &[Vec<f64>], clusters: &[usize]) -> Vec<f64> {
    let dist = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        1.0 - dot / (na * nb)
    };
    let n = rows.len();
    let mut labels: Vec<usize> = clusters.to_vec();
    labels.sort_unstable();
    labels.dedup();
    (0..n)
        .map(|i| {
            let own = clusters[i];
            let own_size = clusters.iter().filter(|&&c| c == own).count();
            if own_size == 1 {
                return 0.0;
            }
            let mut a = 0.0;
            for j in 0..n {
                if j != i && clusters[j] == own {
                    a += dist(&rows[i], &rows[j]);
                }
            }
            a /= (own_size - 1) as f64;
            let mut b = f64::INFINITY;
            for &c in labels.iter().filter(|&&c| c != own) {
                let mut total = 0.0;
                let mut count = 0;
                for j in 0..n {
                    if clusters[j] == c {
                        total += dist(&rows[i], &rows[j]);
                        count += 1;
                    }
                }
                b = b.min(total / count as f64);
            }
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect()
}

/// Mean BCE (+ `l2/2 |w|²`) by a plain loop over samples.
pub fn bce_naive(w: &[f64], b: f64, rows: &[Vec<f64>], y: &[u8], l2: f64) -> f64 {
    let mut total = 0.0;
    for (row, &label) in rows.iter().zip(y) {
        let t: f64 = row.iter().zip(w).map(|(x, wi)| x * wi).sum::<f64>() + b;
        let p = 1.0 / (1.0 + (-t).exp());
        let p = p.clamp(1e-12, 1.0 - 1e-12);
        total -= if label == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    total / y.len() as f64 + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
}

/// Central finite differences of `f` at `params`.
pub fn central_difference(params: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..params.len())
        .map(|i| {
            let mut up = params.to_vec();
            let mut down = params.to_vec();
            up[i] += h;
            down[i] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

/// (tp, fp, tn, fn) by counting, predicted spoof iff score >= threshold.
pub fn confusion_counts(scores: &[f64], labels: &[u8], threshold: f64) -> (usize, usize, usize, usize) {
    let mut c = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (l, s >= threshold) {
            (1, true) => c.0 += 1,
            (0, true) => c.1 += 1,
            (0, false) => c.2 += 1,
            _ => c.3 += 1,
        }
    }
    c
}
