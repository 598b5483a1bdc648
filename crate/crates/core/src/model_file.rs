//! Text model file holding a fitted speaker subspace and classifier.
//!
//! ```text
//! snap-model
//! format_version 1
//! dim <D>
//! k <K>
//! default_k 5
//! centroid_mean <D reals>
//! eigenvalues <K reals>
//! basis_row <i> <K reals>        (D lines, only when K > 0)
//! weights <D reals>
//! bias <real>
//! meta <key> <value>             (zero or more, sorted by key)
//! crc32 <8 hex digits>
//! ```
//!
//! Reals use 17 significant digits, which round-trip every `f64` exactly.
//! The checksum covers every byte before the `crc32` line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::classifier::LinearClassifier;
use crate::error::{Result, SnapError};
use crate::subspace::{SpeakerSubspace, DEFAULT_K};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const HEADER: &str = "snap-model";

/// Everything needed at inference time.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub subspace: SpeakerSubspace,
    pub classifier: LinearClassifier,
    pub metadata: BTreeMap<String, String>,
}

fn push_reals<'a>(out: &mut String, key: &str, values: impl IntoIterator<Item = &'a f64>) {
    out.push_str(key);
    for v in values {
        let _ = write!(out, " {v:.16e}");
    }
    out.push('\n');
}

pub fn encode_model(model: &Model) -> Result<String> {
    let sub = &model.subspace;
    let clf = &model.classifier;
    if clf.dim() != sub.dim() {
        return Err(SnapError::DimMismatch {
            context: "classifier vs subspace".into(),
            expected: sub.dim(),
            found: clf.dim(),
        });
    }
    let mut out = String::new();
    let _ = writeln!(out, "{HEADER}");
    let _ = writeln!(out, "format_version {MODEL_FORMAT_VERSION}");
    let _ = writeln!(out, "dim {}", sub.dim());
    let _ = writeln!(out, "k {}", sub.k());
    let _ = writeln!(out, "default_k {DEFAULT_K}");
    push_reals(&mut out, "centroid_mean", sub.centroid_mean().iter());
    push_reals(&mut out, "eigenvalues", sub.eigenvalues());
    if sub.k() > 0 {
        for (i, row) in sub.basis().row_iter().enumerate() {
            push_reals(&mut out, &format!("basis_row {i}"), row.iter());
        }
    }
    push_reals(&mut out, "weights", clf.weights.iter());
    push_reals(&mut out, "bias", [clf.bias].iter());
    for (key, value) in &model.metadata {
        if key.is_empty() || key.chars().any(char::is_whitespace) || value.contains('\n') {
            return Err(SnapError::ModelFormat(format!("metadata entry {key:?} not representable")));
        }
        let _ = writeln!(out, "meta {key} {value}");
    }
    let crc = crc32fast::hash(out.as_bytes());
    let _ = writeln!(out, "crc32 {crc:08x}");
    Ok(out)
}

struct Lines<'a> {
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next_keyed(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (n, line) = self
            .iter
            .next()
            .ok_or_else(|| SnapError::ModelFormat(format!("missing {key:?} line")))?;
        let mut fields = line.split(' ');
        match fields.next() {
            Some(k) if k == key => Ok((n + 1, fields.collect())),
            _ => Err(SnapError::ModelFormat(format!("line {}: expected {key:?}", n + 1))),
        }
    }
}

fn parse_int(line: usize, s: Option<&&str>) -> Result<usize> {
    s.and_then(|s| s.parse().ok())
        .ok_or_else(|| SnapError::ModelFormat(format!("line {line}: expected an integer")))
}

fn parse_reals(line: usize, fields: &[&str], expected: usize) -> Result<Vec<f64>> {
    if fields.len() != expected {
        return Err(SnapError::ModelFormat(format!(
            "line {line}: expected {expected} values, found {}",
            fields.len()
        )));
    }
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| SnapError::ModelFormat(format!("line {line}: bad real {f:?}")))
        })
        .collect()
}

pub fn decode_model(text: &str) -> Result<Model> {
    let trailer_start = text
        .trim_end_matches('\n')
        .rfind('\n')
        .map(|i| i + 1)
        .ok_or_else(|| SnapError::ModelFormat("file too short".into()))?;
    let (payload, trailer) = text.split_at(trailer_start);
    let stored = trailer
        .trim_end()
        .strip_prefix("crc32 ")
        .and_then(|h| u32::from_str_radix(h, 16).ok())
        .ok_or_else(|| SnapError::ModelFormat("missing or malformed crc32 trailer".into()))?;
    let computed = crc32fast::hash(payload.as_bytes());
    if stored != computed {
        return Err(SnapError::Checksum { stored, computed });
    }

    let mut lines = Lines {
        iter: payload.lines().enumerate(),
    };
    match lines.iter.next() {
        Some((_, HEADER)) => {}
        _ => return Err(SnapError::ModelFormat(format!("missing {HEADER:?} header"))),
    }
    let (n, f) = lines.next_keyed("format_version")?;
    let version = parse_int(n, f.first())?;
    if version != MODEL_FORMAT_VERSION as usize {
        return Err(SnapError::ModelFormat(format!(
            "unsupported format_version {version} (expected {MODEL_FORMAT_VERSION})"
        )));
    }
    let (n, f) = lines.next_keyed("dim")?;
    let dim = parse_int(n, f.first())?;
    let (n, f) = lines.next_keyed("k")?;
    let k = parse_int(n, f.first())?;
    if k > dim {
        return Err(SnapError::ModelFormat(format!("k = {k} exceeds dim = {dim}")));
    }
    let (n, f) = lines.next_keyed("default_k")?;
    parse_int(n, f.first())?;
    let (n, f) = lines.next_keyed("centroid_mean")?;
    let mean = parse_reals(n, &f, dim)?;
    let (n, f) = lines.next_keyed("eigenvalues")?;
    let eigenvalues = parse_reals(n, &f, k)?;
    let mut basis = DMatrix::zeros(dim, k);
    if k > 0 {
        for i in 0..dim {
            let (n, f) = lines.next_keyed("basis_row")?;
            if parse_int(n, f.first())? != i {
                return Err(SnapError::ModelFormat(format!("line {n}: expected basis_row {i}")));
            }
            let row = parse_reals(n, &f[1..], k)?;
            for (j, v) in row.into_iter().enumerate() {
                basis[(i, j)] = v;
            }
        }
    }
    let (n, f) = lines.next_keyed("weights")?;
    let weights = parse_reals(n, &f, dim)?;
    let (n, f) = lines.next_keyed("bias")?;
    let bias = parse_reals(n, &f, 1)?[0];

    let mut metadata = BTreeMap::new();
    for (n, line) in lines.iter {
        let rest = line
            .strip_prefix("meta ")
            .ok_or_else(|| SnapError::ModelFormat(format!("line {}: unexpected content", n + 1)))?;
        let (key, value) = rest.split_once(' ').unwrap_or((rest, ""));
        metadata.insert(key.to_string(), value.to_string());
    }

    Ok(Model {
        subspace: SpeakerSubspace::new(DVector::from_vec(mean), basis, eigenvalues)?,
        classifier: LinearClassifier::new(DVector::from_vec(weights), bias)?,
        metadata,
    })
}

pub fn save_model(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    std::fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let text = std::fs::read_to_string(path)?;
    decode_model(&text)
}
