//! Windowing into (history, future) pairs, CSV persistence, and
//! per-coordinate standardization.
//!
//! CSV layout, one row per frame:
//!
//! ```text
//! # pose-windows v1 split=train seed=42 t_h=10 t_p=25 joints=8 dims=3
//! seq_id,frame_idx,j0_x,j0_y,j0_z,...
//! 0,0,0.3512,...
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! `load(save(x)) == x` bit-exactly.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::array::Array;
use crate::synth::PoseSequence;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("stride must be >= 1")]
    ZeroStride,
    #[error("window lengths must be >= 1, got t_h={t_h}, t_p={t_p}")]
    EmptyWindow { t_h: usize, t_p: usize },
    #[error("{path}:{line}: expected {expected} columns, got {actual}")]
    ColumnCount {
        path: String,
        line: usize,
        expected: usize,
        actual: usize,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("sample {sample} has {rows} rows, expected {expected}")]
    IncompleteSample {
        sample: usize,
        rows: usize,
        expected: usize,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset is empty")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// One training pair: contiguous, non-overlapping history and future blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// `[t_h, J*D]`
    pub history: Array<f64>,
    /// `[t_p, J*D]`
    pub future: Array<f64>,
}

/// All windows of one split, plus the provenance needed to reproduce them.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub samples: Vec<WindowSample>,
    pub split: Split,
    pub seed: u64,
    pub t_h: usize,
    pub t_p: usize,
    pub joints: usize,
    pub dims: usize,
    /// Source sequences too short to yield a single window.
    pub skipped_sequences: usize,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn coord_cols(&self) -> usize {
        self.joints * self.dims
    }

    /// FNV-1a over the sample payload; used to assert that paired ablation
    /// arms consume bit-identical data.
    pub fn content_hash(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut eat = |v: f64| {
            for byte in v.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for s in &self.samples {
            s.history.iter().for_each(|&v| eat(v));
            s.future.iter().for_each(|&v| eat(v));
        }
        h
    }
}

/// Cut every sequence into `(history, future)` windows at the given stride.
/// Sequences shorter than `t_h + t_p` are skipped and counted.
pub fn window(
    sequences: &[PoseSequence],
    t_h: usize,
    t_p: usize,
    stride: usize,
    split: Split,
    seed: u64,
) -> Result<WindowedDataset, DatasetError> {
    if stride == 0 {
        return Err(DatasetError::ZeroStride);
    }
    if t_h == 0 || t_p == 0 {
        return Err(DatasetError::EmptyWindow { t_h, t_p });
    }
    let mut samples = Vec::new();
    let mut skipped = 0usize;
    let (mut joints, mut dims) = (0usize, 0usize);
    for seq in sequences {
        let t = seq.num_frames();
        (joints, dims) = (seq.joints(), seq.dims());
        let need = t_h + t_p;
        if t < need {
            skipped += 1;
            continue;
        }
        let cols = joints * dims;
        let count = (t - need) / stride + 1;
        for w in 0..count {
            let start = w * stride;
            let hist = seq.frames.data()[start * cols..(start + t_h) * cols].to_vec();
            let fut = seq.frames.data()[(start + t_h) * cols..(start + need) * cols].to_vec();
            samples.push(WindowSample {
                history: Array::from_raw(vec![t_h, cols], hist),
                future: Array::from_raw(vec![t_p, cols], fut),
            });
        }
    }
    Ok(WindowedDataset {
        samples,
        split,
        seed,
        t_h,
        t_p,
        joints,
        dims,
        skipped_sequences: skipped,
    })
}

/// Partition sequences into train/val/test by index (disjoint at the
/// source-sequence level) and window each part.
pub fn split_and_window(
    sequences: &[PoseSequence],
    fractions: [f64; 3],
    t_h: usize,
    t_p: usize,
    stride: usize,
    seed: u64,
) -> Result<[WindowedDataset; 3], DatasetError> {
    let n = sequences.len();
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = (fractions[1] * n as f64).round() as usize;
    let n_train = n_train.min(n);
    let n_val = n_val.min(n - n_train);
    let train = window(&sequences[..n_train], t_h, t_p, stride, Split::Train, seed)?;
    let val = window(
        &sequences[n_train..n_train + n_val],
        t_h,
        t_p,
        stride,
        Split::Val,
        seed,
    )?;
    let test = window(
        &sequences[n_train + n_val..],
        t_h,
        t_p,
        stride,
        Split::Test,
        seed,
    )?;
    Ok([train, val, test])
}

/// Generate, split, and window in one step from a generation config.
pub fn generate_splits(
    config: &crate::synth::GenerationConfig,
) -> Result<[WindowedDataset; 3], GenerateError> {
    let sequences = crate::synth::generate_sequences(config)?;
    let splits = split_and_window(
        &sequences,
        config.split_fractions,
        config.t_h,
        config.t_p,
        config.stride,
        config.seed,
    )?;
    Ok(splits)
}

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error(transparent)]
    Synth(#[from] crate::synth::SynthError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

pub fn save_csv(dataset: &WindowedDataset, path: &Path) -> Result<(), DatasetError> {
    let wrap = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::create(path).map_err(wrap)?;
    let mut w = std::io::BufWriter::new(file);
    let mut run = || -> std::io::Result<()> {
        writeln!(
            w,
            "# pose-windows v1 split={} seed={} t_h={} t_p={} joints={} dims={}",
            dataset.split.as_str(),
            dataset.seed,
            dataset.t_h,
            dataset.t_p,
            dataset.joints,
            dataset.dims
        )?;
        let mut header = String::from("seq_id,frame_idx");
        let axis = ["x", "y", "z"];
        for j in 0..dataset.joints {
            for d in 0..dataset.dims {
                let label = axis
                    .get(d)
                    .map_or_else(|| format!("c{d}"), |s| s.to_string());
                let _ = write!(header, ",j{j}_{label}");
            }
        }
        writeln!(w, "{header}")?;
        let cols = dataset.coord_cols();
        let mut line = String::new();
        for (id, sample) in dataset.samples.iter().enumerate() {
            for frame in 0..dataset.t_h + dataset.t_p {
                line.clear();
                let _ = write!(line, "{id},{frame}");
                let block = if frame < dataset.t_h {
                    &sample.history.data()[frame * cols..(frame + 1) * cols]
                } else {
                    let f = frame - dataset.t_h;
                    &sample.future.data()[f * cols..(f + 1) * cols]
                };
                for v in block {
                    let _ = write!(line, ",{v}");
                }
                writeln!(w, "{line}")?;
            }
        }
        w.flush()
    };
    run().map_err(wrap)
}

pub fn load_csv(path: &Path) -> Result<WindowedDataset, DatasetError> {
    let path_str = path.display().to_string();
    let wrap = |source| DatasetError::Io {
        path: path_str.clone(),
        source,
    };
    let file = std::fs::File::open(path).map_err(wrap)?;
    let reader = BufReader::new(file);

    let mut split = Split::Train;
    let mut seed = 0u64;
    let (mut t_h, mut t_p) = (0usize, 0usize);
    let (mut joints, mut dims) = (0usize, 0usize);
    let mut have_meta = false;
    let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    let mut expected_cols: Option<usize> = None;

    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(wrap)?;
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(meta) = trimmed.strip_prefix('#') {
            for token in meta.split_whitespace() {
                if let Some((key, value)) = token.split_once('=') {
                    let parse_usize = |v: &str| {
                        v.parse::<usize>().map_err(|e| DatasetError::Parse {
                            path: path_str.clone(),
                            line: line_no,
                            message: format!("bad {key}: {e}"),
                        })
                    };
                    match key {
                        "split" => {
                            split = Split::parse(value).ok_or_else(|| DatasetError::Parse {
                                path: path_str.clone(),
                                line: line_no,
                                message: format!("unknown split {value:?}"),
                            })?
                        }
                        "seed" => {
                            seed = value.parse().map_err(|e| DatasetError::Parse {
                                path: path_str.clone(),
                                line: line_no,
                                message: format!("bad seed: {e}"),
                            })?
                        }
                        "t_h" => t_h = parse_usize(value)?,
                        "t_p" => t_p = parse_usize(value)?,
                        "joints" => joints = parse_usize(value)?,
                        "dims" => dims = parse_usize(value)?,
                        _ => {}
                    }
                }
            }
            have_meta = true;
            continue;
        }
        if trimmed.starts_with("seq_id") {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if let Some(expected) = expected_cols {
            if fields.len() != expected {
                return Err(DatasetError::ColumnCount {
                    path: path_str.clone(),
                    line: line_no,
                    expected,
                    actual: fields.len(),
                });
            }
        } else {
            if have_meta && fields.len() != 2 + joints * dims {
                return Err(DatasetError::ColumnCount {
                    path: path_str.clone(),
                    line: line_no,
                    expected: 2 + joints * dims,
                    actual: fields.len(),
                });
            }
            expected_cols = Some(fields.len());
        }
        let mut parse_field = |i: usize| -> Result<f64, DatasetError> {
            fields[i].parse::<f64>().map_err(|e| DatasetError::Parse {
                path: path_str.clone(),
                line: line_no,
                message: format!("column {}: {e}", i + 1),
            })
        };
        let seq_id = fields[0]
            .parse::<usize>()
            .map_err(|e| DatasetError::Parse {
                path: path_str.clone(),
                line: line_no,
                message: format!("seq_id: {e}"),
            })?;
        let frame_idx = fields[1]
            .parse::<usize>()
            .map_err(|e| DatasetError::Parse {
                path: path_str.clone(),
                line: line_no,
                message: format!("frame_idx: {e}"),
            })?;
        let coords: Vec<f64> = (2..fields.len())
            .map(&mut parse_field)
            .collect::<Result<_, _>>()?;
        rows.push((seq_id, frame_idx, coords));
    }

    // A file without rows is a valid empty dataset.
    if rows.is_empty() {
        return Ok(WindowedDataset {
            samples: Vec::new(),
            split,
            seed,
            t_h,
            t_p,
            joints,
            dims,
            skipped_sequences: 0,
        });
    }

    if !have_meta {
        return Err(DatasetError::Parse {
            path: path_str.clone(),
            line: 1,
            message: "missing '# pose-windows v1 ...' metadata line".into(),
        });
    }

    let frames_per_sample = t_h + t_p;
    let cols = joints * dims;
    let num_samples = rows.iter().map(|r| r.0).max().unwrap() + 1;
    let mut buffers: Vec<Vec<f64>> = vec![Vec::new(); num_samples];
    let mut counts = vec![0usize; num_samples];
    for (seq_id, frame_idx, coords) in rows {
        if buffers[seq_id].is_empty() {
            buffers[seq_id] = vec![0.0; frames_per_sample * cols];
        }
        if frame_idx < frames_per_sample {
            buffers[seq_id][frame_idx * cols..(frame_idx + 1) * cols].copy_from_slice(&coords);
            counts[seq_id] += 1;
        }
    }
    let mut samples = Vec::with_capacity(num_samples);
    for (sample, (buffer, count)) in buffers.into_iter().zip(counts).enumerate() {
        if count != frames_per_sample {
            return Err(DatasetError::IncompleteSample {
                sample,
                rows: count,
                expected: frames_per_sample,
            });
        }
        let (hist, fut) = buffer.split_at(t_h * cols);
        samples.push(WindowSample {
            history: Array::from_raw(vec![t_h, cols], hist.to_vec()),
            future: Array::from_raw(vec![t_p, cols], fut.to_vec()),
        });
    }
    Ok(WindowedDataset {
        samples,
        split,
        seed,
        t_h,
        t_p,
        joints,
        dims,
        skipped_sequences: 0,
    })
}

/// Per-coordinate mean/std computed on the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Stats over all frames (history and future) of the given split.
    pub fn fit(train: &WindowedDataset) -> Result<Self, DatasetError> {
        if train.is_empty() {
            return Err(DatasetError::Empty);
        }
        let cols = train.coord_cols();
        let mut mean = vec![0.0f64; cols];
        let mut count = 0usize;
        let mut visit_sums = |a: &Array<f64>| {
            for row in a.data().chunks(cols) {
                for (m, &v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            count += a.shape()[0];
        };
        for s in &train.samples {
            visit_sums(&s.history);
            visit_sums(&s.future);
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);

        let mut var = vec![0.0f64; cols];
        let mut visit_vars = |a: &Array<f64>| {
            for row in a.data().chunks(cols) {
                for ((v, &m), &x) in var.iter_mut().zip(&mean).zip(row) {
                    let d = x - m;
                    *v += d * d;
                }
            }
        };
        for s in &train.samples {
            visit_vars(&s.history);
            visit_vars(&s.future);
        }
        let std = var
            .into_iter()
            .map(|v| (v / count as f64).sqrt().max(1e-8))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn standardize(&self, frames: &Array<f64>) -> Array<f64> {
        self.map(frames, |v, m, s| (v - m) / s)
    }

    pub fn destandardize(&self, frames: &Array<f64>) -> Array<f64> {
        self.map(frames, |v, m, s| v * s + m)
    }

    fn map(&self, frames: &Array<f64>, f: impl Fn(f64, f64, f64) -> f64) -> Array<f64> {
        let cols = self.mean.len();
        let data = frames
            .data()
            .chunks(cols)
            .flat_map(|row| {
                row.iter()
                    .zip(&self.mean)
                    .zip(&self.std)
                    .map(|((&v, &m), &s)| f(v, m, s))
            })
            .collect();
        Array::from_raw(frames.shape().to_vec(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_sequences, GenerationConfig};
    use proptest::prelude::*;

    fn sequences(n: usize, t: usize) -> Vec<PoseSequence> {
        let config = GenerationConfig {
            num_sequences: n,
            frames_per_sequence: t,
            joints: 3,
            ..GenerationConfig::default()
        };
        generate_sequences(&config).unwrap()
    }

    #[test]
    fn window_count_formula() {
        let seqs = sequences(1, 100);
        let ds = window(&seqs, 10, 25, 1, Split::Train, 1).unwrap();
        assert_eq!(ds.len(), 66);

        let exact = sequences(1, 35);
        assert_eq!(window(&exact, 10, 25, 1, Split::Train, 1).unwrap().len(), 1);

        let short = sequences(1, 34);
        let ds = window(&short, 10, 25, 1, Split::Train, 1).unwrap();
        assert_eq!(ds.len(), 0);
        assert_eq!(ds.skipped_sequences, 1);
    }

    #[test]
    fn windows_are_contiguous_and_non_overlapping() {
        let seqs = sequences(1, 40);
        let ds = window(&seqs, 3, 2, 4, Split::Train, 1).unwrap();
        let cols = ds.coord_cols();
        for (w, s) in ds.samples.iter().enumerate() {
            let start = w * 4;
            assert_eq!(
                s.history.data(),
                &seqs[0].frames.data()[start * cols..(start + 3) * cols]
            );
            assert_eq!(
                s.future.data(),
                &seqs[0].frames.data()[(start + 3) * cols..(start + 5) * cols]
            );
        }
    }

    #[test]
    fn csv_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.csv");
        let seqs = sequences(3, 40);
        let ds = window(&seqs, 10, 25, 3, Split::Val, 99).unwrap();
        save_csv(&ds, &path).unwrap();
        let loaded = load_csv(&path).unwrap();
        assert_eq!(ds.samples, loaded.samples);
        assert_eq!(loaded.split, Split::Val);
        assert_eq!(loaded.seed, 99);
        assert_eq!(loaded.t_h, 10);
        assert_eq!(loaded.t_p, 25);
    }

    #[test]
    fn truncated_row_errors_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "# pose-windows v1 split=train seed=1 t_h=1 t_p=1 joints=1 dims=3\n\
             seq_id,frame_idx,j0_x,j0_y,j0_z\n\
             0,0,1.0,2.0,3.0\n\
             0,1,1.0,2.0\n",
        )
        .unwrap();
        match load_csv(&path) {
            Err(DatasetError::ColumnCount {
                line,
                expected,
                actual,
                ..
            }) => {
                assert_eq!(line, 4);
                assert_eq!(expected, 5);
                assert_eq!(actual, 4);
            }
            other => panic!("expected column-count error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_field_errors_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "# pose-windows v1 split=train seed=1 t_h=1 t_p=1 joints=1 dims=3\n\
             seq_id,frame_idx,j0_x,j0_y,j0_z\n\
             0,0,1.0,oops,3.0\n",
        )
        .unwrap();
        match load_csv(&path) {
            Err(DatasetError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_loads_as_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, "").unwrap();
        let ds = load_csv(&path).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn split_disjoint_at_sequence_level() {
        let seqs = sequences(10, 40);
        let [train, val, test] = split_and_window(&seqs, [0.7, 0.15, 0.15], 10, 25, 1, 1).unwrap();
        // 7/2/1 sequences, 6 windows each.
        assert_eq!(train.len(), 7 * 6);
        assert_eq!(val.len(), 2 * 6);
        assert_eq!(test.len(), 6);
        // First window of each split comes from a different source sequence.
        assert_ne!(train.samples[0], val.samples[0]);
        assert_ne!(val.samples[0], test.samples[0]);
    }

    #[test]
    fn standardize_roundtrip_is_identity() {
        let seqs = sequences(4, 40);
        let ds = window(&seqs, 10, 25, 1, Split::Train, 1).unwrap();
        let stats = NormStats::fit(&ds).unwrap();
        for s in &ds.samples {
            let z = stats.standardize(&s.history);
            let back = stats.destandardize(&z);
            for (&a, &b) in back.iter().zip(s.history.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_channel_does_not_divide_by_zero() {
        let seqs = sequences(2, 40);
        let mut ds = window(&seqs, 5, 5, 1, Split::Train, 1).unwrap();
        // Force channel 0 constant.
        for s in &mut ds.samples {
            let cols = 9;
            let mut h = s.history.clone();
            for f in 0..5 {
                h.data_mut()[f * cols] = 7.0;
            }
            s.history = h;
            let mut fut = s.future.clone();
            for f in 0..5 {
                fut.data_mut()[f * cols] = 7.0;
            }
            s.future = fut;
        }
        let stats = NormStats::fit(&ds).unwrap();
        assert!(stats.std[0] >= 1e-8);
        let z = stats.standardize(&ds.samples[0].history);
        assert!(z.all_finite());
    }

    proptest! {
        #[test]
        fn window_count_matches_formula(
            t in 1usize..120,
            t_h in 1usize..12,
            t_p in 1usize..25,
            stride in 1usize..6,
        ) {
            let seqs = sequences(1, t);
            let ds = window(&seqs, t_h, t_p, stride, Split::Train, 1).unwrap();
            let need = t_h + t_p;
            if t < need {
                prop_assert_eq!(ds.len(), 0);
                prop_assert_eq!(ds.skipped_sequences, 1);
            } else {
                prop_assert_eq!(ds.len(), (t - need) / stride + 1);
            }
        }
    }
}
