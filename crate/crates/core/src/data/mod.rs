//! Datasets: labeled examples, subject-disjoint splitting, the on-disk
//! container format and batch assembly.

mod digits;
mod idx;
mod synth_ecg;

pub use digits::{
    colorize_digits, synth_digit_glyphs, ColorizeConfig, COLOR_INPUT_DIM, COLOR_NAMES, IMG_PIXELS,
    IMG_SIDE,
};
pub use idx::{read_idx_images, read_idx_labels};
pub use synth_ecg::{synth_ecg_dataset, synth_ecg_generate, SynthEcgConfig};

use crate::model::Batch;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },
    #[error("wrong magic in {path}: expected {expected:#010x}, got {got:#010x}")]
    WrongMagic {
        path: String,
        expected: u32,
        got: u32,
    },
    #[error("truncated file {path}: needed {needed} more bytes, had {had}")]
    Truncated {
        path: String,
        needed: usize,
        had: usize,
    },
    #[error("dimension overflow in {path}")]
    DimensionOverflow { path: String },
    #[error("split fractions must sum to 1, got {0}")]
    BadFractions(f64),
    #[error("need at least {needed} subjects for the requested split, got {got}")]
    TooFewSubjects { needed: usize, got: usize },
}

/// One labeled input: signal or image, task label, subject, and the binary
/// artifact/color annotations used by the analyses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub x: Vec<f64>,
    pub task_label: usize,
    pub subject_id: u32,
    pub artifact_flag: bool,
    /// 0 = white, 1 = red, 2 = green, 3 = blue; absent for signal data.
    pub color_id: Option<u8>,
}

/// Train/validation/test lists with pairwise-disjoint subject ids
/// (under subject mode).
#[derive(Debug, Clone, Default)]
pub struct SplitSet {
    pub train: Vec<LabeledExample>,
    pub validation: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
}

impl SplitSet {
    pub fn subjects_disjoint(&self) -> bool {
        let s: Vec<BTreeSet<u32>> = [&self.train, &self.validation, &self.test]
            .iter()
            .map(|split| split.iter().map(|e| e.subject_id).collect())
            .collect();
        s[0].is_disjoint(&s[1]) && s[0].is_disjoint(&s[2]) && s[1].is_disjoint(&s[2])
    }

    pub fn total_len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }
}

/// How to partition: whole subjects (default) or plain examples — the latter
/// is for datasets without subject structure, e.g. colored digits, where
/// each example carries a unique synthetic subject id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    BySubject,
    ByExample,
}

/// Shuffle subjects (or examples) with the seed and partition them so every
/// example of a subject lands in exactly one split. Fraction allocation uses
/// largest remainders, so (0.6, 0.2, 0.2) over 10 subjects gives 6/2/2.
pub fn split_by_subject(
    examples: Vec<LabeledExample>,
    fractions: [f64; 3],
    seed: u64,
    mode: SplitMode,
) -> Result<SplitSet, DataError> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(DataError::BadFractions(total));
    }
    let mut units: Vec<u64> = match mode {
        SplitMode::BySubject => {
            let set: BTreeSet<u32> = examples.iter().map(|e| e.subject_id).collect();
            set.into_iter().map(u64::from).collect()
        }
        SplitMode::ByExample => (0..examples.len() as u64).collect(),
    };
    let needed = fractions.iter().filter(|f| **f > 0.0).count();
    if units.len() < needed {
        return Err(DataError::TooFewSubjects {
            needed,
            got: units.len(),
        });
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    units.shuffle(&mut rng);

    let counts = largest_remainder(units.len(), &fractions);
    let train_set: BTreeSet<u64> = units[..counts[0]].iter().copied().collect();
    let val_set: BTreeSet<u64> = units[counts[0]..counts[0] + counts[1]].iter().copied().collect();

    let mut split = SplitSet::default();
    for (i, e) in examples.into_iter().enumerate() {
        let unit = match mode {
            SplitMode::BySubject => u64::from(e.subject_id),
            SplitMode::ByExample => i as u64,
        };
        if train_set.contains(&unit) {
            split.train.push(e);
        } else if val_set.contains(&unit) {
            split.validation.push(e);
        } else {
            split.test.push(e);
        }
    }
    Ok(split)
}

fn largest_remainder(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let raw: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in &order {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    [counts[0], counts[1], counts[2]]
}

// ── Batch assembly ──────────────────────────────────────────────────────

pub fn batch_from(examples: &[LabeledExample], idx: &[usize]) -> Batch {
    assert!(!idx.is_empty());
    let dim = examples[idx[0]].x.len();
    let mut data = Vec::with_capacity(idx.len() * dim);
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        data.extend_from_slice(&examples[i].x);
        labels.push(examples[i].task_label);
    }
    Batch {
        x: Tensor::from_vec(vec![idx.len(), dim], data).expect("consistent widths"),
        labels,
    }
}

pub fn full_batch(examples: &[LabeledExample]) -> Batch {
    let idx: Vec<usize> = (0..examples.len()).collect();
    batch_from(examples, &idx)
}

// ── Container file format ───────────────────────────────────────────────

const DATASET_MAGIC: &[u8; 8] = b"IBPDSET1";

/// Dataset header: a structured-text (JSON) echo of the generating config
/// plus the geometry the analyses need.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub kind: String,
    pub input_dim: usize,
    pub task_classes: usize,
    pub subject_count: usize,
    /// Index set of the artifact positions, empty when not applicable.
    pub artifact_region: Vec<usize>,
    /// Generating configuration, echoed verbatim.
    pub config: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub examples: Vec<LabeledExample>,
}

/// Write the container: magic, JSON header, then fixed-width records with
/// little-endian f64 payloads. Byte-identical for identical inputs.
pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<(), DataError> {
    let io_err = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    let header = serde_json::to_vec(&ds.meta).expect("meta serializes");
    f.write_all(DATASET_MAGIC).map_err(io_err)?;
    f.write_all(&(header.len() as u32).to_le_bytes()).map_err(io_err)?;
    f.write_all(&header).map_err(io_err)?;
    f.write_all(&(ds.examples.len() as u32).to_le_bytes()).map_err(io_err)?;
    for e in &ds.examples {
        if e.x.len() != ds.meta.input_dim {
            return Err(DataError::Format {
                path: path.display().to_string(),
                detail: format!(
                    "example width {} does not match input_dim {}",
                    e.x.len(),
                    ds.meta.input_dim
                ),
            });
        }
        f.write_all(&(e.task_label as u32).to_le_bytes()).map_err(io_err)?;
        f.write_all(&e.subject_id.to_le_bytes()).map_err(io_err)?;
        f.write_all(&[u8::from(e.artifact_flag)]).map_err(io_err)?;
        let color: i16 = e.color_id.map_or(-1, i16::from);
        f.write_all(&color.to_le_bytes()).map_err(io_err)?;
        for v in &e.x {
            f.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    f.flush().map_err(io_err)
}

pub fn read_dataset(path: &Path) -> Result<Dataset, DataError> {
    let p = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|source| DataError::Io {
        path: p.clone(),
        source,
    })?;
    let mut cur = Cursor::new(&bytes, &p);
    let magic = cur.take(8)?;
    if magic != DATASET_MAGIC {
        return Err(DataError::Format {
            path: p.clone(),
            detail: format!("bad magic {magic:?}"),
        });
    }
    let header_len = cur.u32_le()? as usize;
    let header = cur.take(header_len)?;
    let meta: DatasetMeta = serde_json::from_slice(header).map_err(|e| DataError::Format {
        path: p.clone(),
        detail: format!("header json: {e}"),
    })?;
    let count = cur.u32_le()? as usize;
    let mut examples = Vec::with_capacity(count);
    for _ in 0..count {
        let task_label = cur.u32_le()? as usize;
        let subject_id = cur.u32_le()?;
        let artifact_flag = cur.take(1)?[0] != 0;
        let color = i16::from_le_bytes(cur.take(2)?.try_into().expect("2 bytes"));
        let color_id = if color < 0 { None } else { Some(color as u8) };
        let mut x = Vec::with_capacity(meta.input_dim);
        for _ in 0..meta.input_dim {
            x.push(f64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes")));
        }
        examples.push(LabeledExample {
            x,
            task_label,
            subject_id,
            artifact_flag,
            color_id,
        });
    }
    Ok(Dataset { meta, examples })
}

/// Byte cursor shared by the binary readers in this module.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8], path: &'a str) -> Self {
        Self { bytes, pos: 0, path }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        if self.pos + n > self.bytes.len() {
            return Err(DataError::Truncated {
                path: self.path.to_string(),
                needed: self.pos + n - self.bytes.len(),
                had: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32_le(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u32_be(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
