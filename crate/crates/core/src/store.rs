//! Labeled embedding sets and the SNAPEMB1 container.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! header   "SNAPEMB1" | u32 version=1 | u32 record count | u32 dim | u32 flags (bit0 = pooled)
//! record   u16 len + utt_id | u16 len + speaker_id | u8 label | u16 len + attack_id
//!          | u32 frame count T | T*dim f32, row-major
//! ```
//!
//! Values are held as `f64` in memory and stored as `f32` on disk, so a set
//! survives a write/read cycle bit-exactly when its values are representable
//! in single precision (which is always the case for anything read from disk).

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SnapError};

pub const MAGIC: &[u8; 8] = b"SNAPEMB1";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;
const FLAG_POOLED: u32 = 1;

/// Binary class of an utterance. Spoof is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    BonaFide,
    Spoof,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::BonaFide => 0,
            Label::Spoof => 1,
        }
    }

    pub fn from_u8(value: u8) -> Result<Self> {
        match value {
            0 => Ok(Label::BonaFide),
            1 => Ok(Label::Spoof),
            other => Err(SnapError::InvalidLabel(other)),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

/// One utterance: identifiers plus either a per-frame feature matrix or a
/// pooled `1 x dim` vector.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub utt_id: String,
    pub speaker_id: String,
    pub label: Label,
    /// Empty for bona fide / not applicable.
    pub attack_id: String,
    /// `T x dim`, one row per frame.
    pub frames: DMatrix<f64>,
}

impl UtteranceRecord {
    pub fn pooled(
        utt_id: impl Into<String>,
        speaker_id: impl Into<String>,
        label: Label,
        attack_id: impl Into<String>,
        embedding: &[f64],
    ) -> Self {
        UtteranceRecord {
            utt_id: utt_id.into(),
            speaker_id: speaker_id.into(),
            label,
            attack_id: attack_id.into(),
            frames: DMatrix::from_row_slice(1, embedding.len(), embedding),
        }
    }

    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    /// First frame as a vector; for pooled records this is the embedding.
    pub fn embedding(&self) -> DVector<f64> {
        self.frames.row(0).transpose()
    }

    /// Same identifiers, new pooled embedding.
    pub fn with_embedding(&self, embedding: &DVector<f64>) -> Self {
        UtteranceRecord {
            utt_id: self.utt_id.clone(),
            speaker_id: self.speaker_id.clone(),
            label: self.label,
            attack_id: self.attack_id.clone(),
            frames: DMatrix::from_row_slice(1, embedding.len(), embedding.as_slice()),
        }
    }
}

/// An ordered, validated collection of utterance records sharing one feature
/// dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbeddingSet {
    dim: usize,
    pooled: bool,
    records: Vec<UtteranceRecord>,
}

impl LabeledEmbeddingSet {
    pub fn new(dim: usize, pooled: bool, records: Vec<UtteranceRecord>) -> Result<Self> {
        if dim == 0 {
            return Err(SnapError::validation("set", "dimension must be at least 1"));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            let ctx = || format!("record {i} ({:?})", rec.utt_id);
            if rec.frames.ncols() != dim {
                return Err(SnapError::validation(
                    ctx(),
                    format!("width {} differs from set dimension {dim}", rec.frames.ncols()),
                ));
            }
            if rec.frames.nrows() == 0 {
                return Err(SnapError::validation(ctx(), "record has no frames"));
            }
            if pooled && rec.frames.nrows() != 1 {
                return Err(SnapError::validation(
                    ctx(),
                    format!("pooled set but record has {} frames", rec.frames.nrows()),
                ));
            }
            if rec.frames.iter().any(|v| !v.is_finite()) {
                return Err(SnapError::validation(ctx(), "non-finite value"));
            }
            if !seen.insert(rec.utt_id.as_str()) {
                return Err(SnapError::validation(ctx(), "duplicate utt_id"));
            }
        }
        Ok(LabeledEmbeddingSet {
            dim,
            pooled,
            records,
        })
    }

    pub fn empty(dim: usize, pooled: bool) -> Result<Self> {
        Self::new(dim, pooled, Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_pooled(&self) -> bool {
        self.pooled
    }

    pub fn records(&self) -> &[UtteranceRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<UtteranceRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label.as_u8()).collect()
    }

    /// Unique speaker ids in first-appearance order.
    pub fn speakers(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.speaker_id.as_str()))
            .map(|r| r.speaker_id.clone())
            .collect()
    }

    /// `N x dim` matrix of pooled embeddings, one row per record.
    pub fn embedding_matrix(&self) -> Result<DMatrix<f64>> {
        if !self.pooled {
            return Err(SnapError::validation(
                "set",
                "embedding matrix requires a pooled set",
            ));
        }
        let mut out = DMatrix::zeros(self.records.len(), self.dim);
        for (i, rec) in self.records.iter().enumerate() {
            out.row_mut(i).copy_from(&rec.frames.row(0));
        }
        Ok(out)
    }

    /// Records whose speaker passes `keep`, order preserved.
    pub fn filter_speakers(&self, mut keep: impl FnMut(&str) -> bool) -> Self {
        LabeledEmbeddingSet {
            dim: self.dim,
            pooled: self.pooled,
            records: self
                .records
                .iter()
                .filter(|r| keep(&r.speaker_id))
                .cloned()
                .collect(),
        }
    }
}

// --- binary container ------------------------------------------------------

fn put_str(buf: &mut Vec<u8>, s: &str, ctx: &dyn Fn() -> String) -> Result<()> {
    let len = u16::try_from(s.len())
        .map_err(|_| SnapError::validation(ctx(), format!("string of {} bytes exceeds u16 length", s.len())))?;
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

/// Serialize `set` as SNAPEMB1 bytes.
pub fn encode_container(set: &LabeledEmbeddingSet) -> Result<Vec<u8>> {
    let n = u32::try_from(set.len())
        .map_err(|_| SnapError::validation("set", "too many records for a u32 count"))?;
    let dim = u32::try_from(set.dim)
        .map_err(|_| SnapError::validation("set", "dimension exceeds u32"))?;
    let mut buf = Vec::with_capacity(HEADER_LEN + set.len() * (32 + 4 * set.dim));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(&dim.to_le_bytes());
    let flags = if set.pooled { FLAG_POOLED } else { 0 };
    buf.extend_from_slice(&flags.to_le_bytes());

    for (i, rec) in set.records.iter().enumerate() {
        let ctx = || format!("record {i} ({:?})", rec.utt_id);
        put_str(&mut buf, &rec.utt_id, &ctx)?;
        put_str(&mut buf, &rec.speaker_id, &ctx)?;
        buf.push(rec.label.as_u8());
        put_str(&mut buf, &rec.attack_id, &ctx)?;
        let t = u32::try_from(rec.n_frames())
            .map_err(|_| SnapError::validation(ctx(), "frame count exceeds u32"))?;
        buf.extend_from_slice(&t.to_le_bytes());
        for row in 0..rec.frames.nrows() {
            for col in 0..rec.frames.ncols() {
                let v = rec.frames[(row, col)] as f32;
                if !v.is_finite() {
                    return Err(SnapError::validation(
                        ctx(),
                        format!("value at frame {row}, column {col} overflows f32"),
                    ));
                }
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(buf)
}

/// Write `set` to `sink`, returning the number of bytes written.
pub fn write_container<W: Write>(set: &LabeledEmbeddingSet, mut sink: W) -> Result<u64> {
    let bytes = encode_container(set)?;
    sink.write_all(&bytes)?;
    sink.flush()?;
    Ok(bytes.len() as u64)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    record: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(SnapError::Truncated {
                record: self.record,
                offset: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        let start = self.pos;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| SnapError::Parse {
            offset: start,
            message: "invalid UTF-8 in identifier".into(),
        })
    }
}

/// Parse SNAPEMB1 bytes. Trailing bytes after the last record are rejected.
pub fn decode_container(bytes: &[u8]) -> Result<LabeledEmbeddingSet> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(SnapError::BadMagic {
            found: bytes[..bytes.len().min(MAGIC.len())].to_vec(),
        });
    }
    let mut cur = Cursor {
        bytes,
        pos: MAGIC.len(),
        record: 0,
    };
    let header_err = |_| SnapError::Parse {
        offset: bytes.len(),
        message: "truncated header".into(),
    };
    let version = cur.u32().map_err(header_err)?;
    if version != FORMAT_VERSION {
        return Err(SnapError::UnsupportedVersion(version));
    }
    let n = cur.u32().map_err(header_err)? as usize;
    let dim = cur.u32().map_err(header_err)? as usize;
    let flags = cur.u32().map_err(header_err)?;
    if flags & !FLAG_POOLED != 0 {
        return Err(SnapError::Parse {
            offset: 20,
            message: format!("unknown flag bits {flags:#x}"),
        });
    }
    if dim == 0 {
        return Err(SnapError::Parse {
            offset: 16,
            message: "dimension must be at least 1".into(),
        });
    }
    let pooled = flags & FLAG_POOLED != 0;

    let mut records = Vec::with_capacity(n.min(1 << 20));
    for i in 0..n {
        cur.record = i;
        let utt_id = cur.string()?;
        let speaker_id = cur.string()?;
        let label_offset = cur.pos;
        let label = Label::from_u8(cur.u8()?).map_err(|e| SnapError::Parse {
            offset: label_offset,
            message: e.to_string(),
        })?;
        let attack_id = cur.string()?;
        let t = cur.u32()? as usize;
        let count = t.checked_mul(dim).ok_or_else(|| SnapError::Parse {
            offset: cur.pos - 4,
            message: "frame count overflow".into(),
        })?;
        let byte_len = count.checked_mul(4).ok_or_else(|| SnapError::Parse {
            offset: cur.pos - 4,
            message: "frame count overflow".into(),
        })?;
        let start = cur.pos;
        let raw = cur.take(byte_len)?;
        let mut values = Vec::with_capacity(count);
        for (j, chunk) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(SnapError::Parse {
                    offset: start + 4 * j,
                    message: format!("non-finite float in record {i}"),
                });
            }
            values.push(f64::from(v));
        }
        records.push(UtteranceRecord {
            utt_id,
            speaker_id,
            label,
            attack_id,
            frames: DMatrix::from_row_slice(t, dim, &values),
        });
    }
    if cur.pos != bytes.len() {
        return Err(SnapError::Parse {
            offset: cur.pos,
            message: format!("{} trailing bytes after last record", bytes.len() - cur.pos),
        });
    }
    LabeledEmbeddingSet::new(dim, pooled, records)
}

/// Read a complete SNAPEMB1 stream.
pub fn read_container<R: Read>(mut source: R) -> Result<LabeledEmbeddingSet> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    decode_container(&bytes)
}

// --- text table ------------------------------------------------------------

/// Parse the whitespace-separated text form of a pooled set:
/// `utt_id speaker_id label attack_id v1 .. vD` per line. An attack_id of `-`
/// stands for the empty string; `#` starts a comment line.
pub fn parse_text_table(text: &str) -> Result<LabeledEmbeddingSet> {
    let mut dim = None;
    let mut records = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let line_offset = offset;
        offset += line.len();
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |message: String| SnapError::Parse {
            offset: line_offset,
            message,
        };
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() < 5 {
            return Err(err(format!("expected at least 5 fields, found {}", fields.len())));
        }
        let label = fields[2]
            .parse::<u8>()
            .map_err(|_| err(format!("bad label {:?}", fields[2])))
            .and_then(|v| Label::from_u8(v).map_err(|e| err(e.to_string())))?;
        let values = fields[4..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("bad value {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(err(format!("expected {d} values, found {}", values.len())))
            }
            _ => {}
        }
        let attack = if fields[3] == "-" { "" } else { fields[3] };
        records.push(UtteranceRecord::pooled(fields[0], fields[1], label, attack, &values));
    }
    let dim = dim.ok_or_else(|| SnapError::Empty("text table has no records".into()))?;
    LabeledEmbeddingSet::new(dim, true, records)
}

/// Text form of a pooled set; inverse of [`parse_text_table`].
pub fn format_text_table(set: &LabeledEmbeddingSet) -> Result<String> {
    if !set.is_pooled() {
        return Err(SnapError::validation("set", "text tables hold pooled sets only"));
    }
    let mut out = String::new();
    for rec in set.records() {
        for id in [&rec.utt_id, &rec.speaker_id, &rec.attack_id] {
            if id.chars().any(char::is_whitespace) || id == "-" {
                return Err(SnapError::validation(
                    format!("record {:?}", rec.utt_id),
                    "identifier not representable in a text table",
                ));
            }
        }
        let attack = if rec.attack_id.is_empty() { "-" } else { &rec.attack_id };
        out.push_str(&format!("{} {} {} {}", rec.utt_id, rec.speaker_id, rec.label, attack));
        for v in rec.frames.row(0).iter() {
            out.push_str(&format!(" {v:.16e}"));
        }
        out.push('\n');
    }
    Ok(out)
}

// --- splitting -------------------------------------------------------------

/// Split into (train, validation) per (label, attack_id) stratum. Each stratum
/// of size `n` contributes `round(n * train_fraction)` records to the training
/// side, chosen by a seeded shuffle. Both outputs keep input order.
pub fn stratified_split(
    set: &LabeledEmbeddingSet,
    train_fraction: f64,
    seed: u64,
) -> Result<(LabeledEmbeddingSet, LabeledEmbeddingSet)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(SnapError::InvalidParameter(format!(
            "train fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    if set.is_empty() {
        return Err(SnapError::Empty("cannot split an empty set".into()));
    }

    let mut strata: Vec<Vec<usize>> = Vec::new();
    let mut index: HashMap<(Label, &str), usize> = HashMap::new();
    for (i, rec) in set.records.iter().enumerate() {
        let slot = *index
            .entry((rec.label, rec.attack_id.as_str()))
            .or_insert_with(|| {
                strata.push(Vec::new());
                strata.len() - 1
            });
        strata[slot].push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; set.len()];
    for members in &mut strata {
        let n_train = ((members.len() as f64) * train_fraction).round() as usize;
        members.shuffle(&mut rng);
        for &i in members.iter().take(n_train.min(members.len())) {
            in_train[i] = true;
        }
    }

    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (rec, &t) in set.records.iter().zip(&in_train) {
        if t {
            train.push(rec.clone());
        } else {
            val.push(rec.clone());
        }
    }
    Ok((
        LabeledEmbeddingSet {
            dim: set.dim,
            pooled: set.pooled,
            records: train,
        },
        LabeledEmbeddingSet {
            dim: set.dim,
            pooled: set.pooled,
            records: val,
        },
    ))
}
