//! Relative-index compressed-sparse-column encoding.
//!
//! Rows are interleaved round-robin over the PEs of one channel (row `r`
//! belongs to PE `r % n_pe`). Within each PE and column, nonzeros are stored
//! as 16-bit words: the 12-bit two's-complement weight payload in bits
//! [15:4] and a 4-bit relative row index in bits [3:0]. The index counts
//! skipped local rows since the previous word; a gap of 16 or more is split
//! with zero-weight padding words carrying index 15 (each consumes 16 local
//! rows: 15 skipped plus its own position). Column pointers mark the first
//! word of every column within a PE's stream.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compress::{PePartition, PruneMask};
use crate::container::{
    read_blob, read_json, write_blob, write_json, BlobReader, BlobWriter, TensorRecord,
};
use crate::error::{Error, Result};
use crate::model::{LayerConfig, LstmParams, MATVEC_TENSORS};
use crate::quantize::{quantize_tensor, FixedFormat, QuantizationPlan, QuantizedTensor};

/// Maximum value of the 4-bit relative index.
pub const MAX_INDEX: u32 = 15;
/// Local rows consumed by one padding word.
const PAD_SPAN: usize = MAX_INDEX as usize + 1;
/// Weight payload bounds: values with |q| >= 2^11 cannot be stored.
const PAYLOAD_LIMIT: i32 = 1 << 11;

#[inline]
pub fn pack_word(weight: i32, index: u32) -> u16 {
    debug_assert!(weight.abs() < PAYLOAD_LIMIT);
    debug_assert!(index <= MAX_INDEX);
    (((weight as u16) & 0x0fff) << 4) | (index as u16 & 0x000f)
}

#[inline]
pub fn unpack_word(word: u16) -> (i32, u32) {
    let index = (word & 0x000f) as u32;
    let mut weight = ((word >> 4) & 0x0fff) as i32;
    if weight & 0x0800 != 0 {
        weight -= 1 << 12;
    }
    (weight, index)
}

/// One PE's slice of the encoded matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeStream {
    /// `cols + 1` offsets into `words`; `col_ptr[j]..col_ptr[j+1]` is column j.
    pub col_ptr: Vec<u32>,
    pub words: Vec<u16>,
}

impl PeStream {
    pub fn column(&self, j: usize) -> &[u16] {
        &self.words[self.col_ptr[j] as usize..self.col_ptr[j + 1] as usize]
    }
}

/// The full per-PE encoded form of one matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedSparseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub n_pe: usize,
    pub weight_format: FixedFormat,
    pub pe_streams: Vec<PeStream>,
}

impl EncodedSparseMatrix {
    pub fn total_words(&self) -> u64 {
        self.pe_streams.iter().map(|s| s.words.len() as u64).sum()
    }

    /// Words that carry real (mask-kept) entries; the complement is padding.
    pub fn useful_words(&self) -> u64 {
        self.total_words() - self.padding_words()
    }

    pub fn padding_words(&self) -> u64 {
        // Padding words are exactly the index-15 words with zero payload that
        // the encoder inserted; real zero-valued entries never carry index 15
        // ambiguity because the encoder tracks them separately in PadStats.
        // For robustness we recount against nnz recorded at encode time via
        // PadStats where available; this helper recounts structurally.
        self.pe_streams
            .iter()
            .map(|s| {
                s.words
                    .iter()
                    .filter(|&&w| {
                        let (q, idx) = unpack_word(w);
                        q == 0 && idx == MAX_INDEX
                    })
                    .count() as u64
            })
            .sum()
    }

    /// Per-PE word counts including padding.
    pub fn words_per_pe(&self) -> Vec<u64> {
        self.pe_streams.iter().map(|s| s.words.len() as u64).collect()
    }

    /// Word count of PE `pe`, column `j` (one MAC cycle per word).
    #[inline]
    pub fn column_words(&self, pe: usize, j: usize) -> u32 {
        let s = &self.pe_streams[pe];
        s.col_ptr[j + 1] - s.col_ptr[j]
    }
}

/// Padding bookkeeping from one encode pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PadStats {
    pub real_nnz: u64,
    pub padding_words: u64,
    /// padding_words / real_nnz.
    pub overhead: f64,
    /// padding_words / (rows*cols): the extra stored-weight density the
    /// padding adds on top of the pruned density.
    pub dense_fraction: f64,
}

impl PadStats {
    fn new(real_nnz: u64, padding_words: u64, dense_entries: u64) -> Self {
        Self {
            real_nnz,
            padding_words,
            overhead: if real_nnz == 0 {
                0.0
            } else {
                padding_words as f64 / real_nnz as f64
            },
            dense_fraction: padding_words as f64 / dense_entries as f64,
        }
    }
}

/// Encodes a quantized tensor under a mask into per-PE relative-index
/// column streams. Every mask-kept entry is emitted (even when its quantized
/// value is zero) so per-PE word counts reflect the mask's balance exactly.
pub fn encode_csc(
    q: &QuantizedTensor,
    mask: &PruneMask,
    n_pe: usize,
) -> Result<(EncodedSparseMatrix, PadStats)> {
    if q.rows != mask.rows || q.cols != mask.cols {
        return Err(Error::Shape(format!(
            "mask is {}x{} but tensor is {}x{}",
            mask.rows, mask.cols, q.rows, q.cols
        )));
    }
    let part = PePartition::new(n_pe)?;
    part.validate_for(q.rows)?;

    let mut pe_streams = Vec::with_capacity(n_pe);
    let mut real_nnz = 0u64;
    let mut padding_words = 0u64;
    for pe in 0..n_pe {
        let local_rows: Vec<usize> = (pe..q.rows).step_by(n_pe).collect();
        let mut words: Vec<u16> = Vec::new();
        let mut col_ptr: Vec<u32> = Vec::with_capacity(q.cols + 1);
        col_ptr.push(0);
        for j in 0..q.cols {
            let mut cursor = 0usize;
            for (local, &r) in local_rows.iter().enumerate() {
                if !mask.is_kept(r, j) {
                    continue;
                }
                let value = q.integers[r * q.cols + j];
                if value.abs() >= PAYLOAD_LIMIT {
                    return Err(Error::Overflow(format!(
                        "weight {value} at ({r}, {j}) exceeds the 12-bit payload"
                    )));
                }
                let mut gap = local - cursor;
                while gap > MAX_INDEX as usize {
                    words.push(pack_word(0, MAX_INDEX));
                    padding_words += 1;
                    cursor += PAD_SPAN;
                    gap = local - cursor;
                }
                words.push(pack_word(value, gap as u32));
                real_nnz += 1;
                cursor = local + 1;
            }
            col_ptr.push(words.len() as u32);
        }
        pe_streams.push(PeStream { col_ptr, words });
    }

    let encoded = EncodedSparseMatrix {
        rows: q.rows,
        cols: q.cols,
        n_pe,
        weight_format: q.format,
        pe_streams,
    };
    let stats = PadStats::new(real_nnz, padding_words, (q.rows * q.cols) as u64);
    Ok((encoded, stats))
}

/// Reconstructs the dense integer tensor. Padding words land on skipped rows
/// and contribute nothing.
pub fn decode_csc(e: &EncodedSparseMatrix) -> Result<QuantizedTensor> {
    if e.pe_streams.len() != e.n_pe {
        return Err(Error::Corrupt(format!(
            "expected {} PE streams, found {}",
            e.n_pe,
            e.pe_streams.len()
        )));
    }
    let mut integers = vec![0i32; e.rows * e.cols];
    for (pe, stream) in e.pe_streams.iter().enumerate() {
        if stream.col_ptr.len() != e.cols + 1 {
            return Err(Error::Corrupt(format!(
                "PE {pe}: col_ptr has {} entries, expected {}",
                stream.col_ptr.len(),
                e.cols + 1
            )));
        }
        if *stream.col_ptr.last().unwrap() as usize != stream.words.len() {
            return Err(Error::Corrupt(format!(
                "PE {pe}: col_ptr end {} does not match word count {}",
                stream.col_ptr.last().unwrap(),
                stream.words.len()
            )));
        }
        let local_count = PePartition { n_pe: e.n_pe }.local_rows(pe, e.rows);
        for j in 0..e.cols {
            let (start, end) = (stream.col_ptr[j], stream.col_ptr[j + 1]);
            if end < start || end as usize > stream.words.len() {
                return Err(Error::Corrupt(format!(
                    "PE {pe}: col_ptr is not monotone within bounds at column {j}"
                )));
            }
            let mut cursor = 0usize;
            for &word in &stream.words[start as usize..end as usize] {
                let (weight, index) = unpack_word(word);
                let local = cursor + index as usize;
                if local >= local_count {
                    return Err(Error::Corrupt(format!(
                        "PE {pe} column {j}: accumulated row {local} exceeds {local_count} local rows"
                    )));
                }
                let r = pe + local * e.n_pe;
                integers[r * e.cols + j] = weight;
                cursor = local + 1;
            }
        }
    }
    Ok(QuantizedTensor {
        rows: e.rows,
        cols: e.cols,
        integers,
        format: e.weight_format,
    })
}

/// Stream size in bytes: two bytes per word, padding included. Column
/// pointers are accounted separately (their footprint is small).
pub fn compressed_size_bytes(e: &EncodedSparseMatrix) -> u64 {
    2 * e.total_words()
}

pub fn pointer_size_bytes(e: &EncodedSparseMatrix) -> u64 {
    e.pe_streams
        .iter()
        .map(|s| 4 * s.col_ptr.len() as u64)
        .sum()
}

/// Fig.-5-style textual dump of the first `max_cols` columns.
pub fn dump_streams(name: &str, e: &EncodedSparseMatrix, max_cols: usize) -> String {
    let mut out = format!(
        "matrix {name}: {}x{} over {} PEs, {} words ({} padding)\n",
        e.rows,
        e.cols,
        e.n_pe,
        e.total_words(),
        e.padding_words()
    );
    for j in 0..e.cols.min(max_cols) {
        out.push_str(&format!("column {j}:\n"));
        for pe in 0..e.n_pe {
            let words = e.pe_streams[pe].column(j);
            if words.is_empty() {
                continue;
            }
            out.push_str(&format!("  pe{pe}:"));
            for &w in words {
                let (weight, index) = unpack_word(w);
                if weight == 0 && index == MAX_INDEX {
                    out.push_str(" [pad]");
                } else {
                    out.push_str(&format!(" (w={weight}, idx={index})"));
                }
            }
            out.push('\n');
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Encoded-model container
// ---------------------------------------------------------------------------

/// One layer's encoded matrices keyed by canonical tensor name.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedLayer {
    pub config: LayerConfig,
    pub plan: QuantizationPlan,
    pub matrices: BTreeMap<String, EncodedSparseMatrix>,
    pub pad_stats: BTreeMap<String, PadStats>,
}

impl EncodedLayer {
    pub fn total_words(&self) -> u64 {
        self.matrices.values().map(|m| m.total_words()).sum()
    }

    pub fn real_nnz(&self) -> u64 {
        self.pad_stats.values().map(|s| s.real_nnz).sum()
    }

    pub fn dense_entries(&self) -> u64 {
        self.matrices
            .values()
            .map(|m| (m.rows * m.cols) as u64)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedModel {
    pub layers: Vec<EncodedLayer>,
}

/// Quantizes every matrix-product tensor under `plan` and encodes it with
/// its mask from `masks`.
pub fn encode_layer(
    params: &LstmParams,
    plan: &QuantizationPlan,
    masks: &BTreeMap<String, PruneMask>,
    n_pe: usize,
) -> Result<EncodedLayer> {
    let mut matrices = BTreeMap::new();
    let mut pad_stats = BTreeMap::new();
    for name in MATVEC_TENSORS {
        let Some(m) = params.matvec_tensor(name) else {
            continue;
        };
        let mask = masks
            .get(name)
            .ok_or_else(|| Error::Container(format!("mask set has no entry for {name}")))?;
        let q = quantize_tensor(m, plan.tensor_format(name)?);
        let (e, stats) = encode_csc(&q, mask, n_pe)?;
        matrices.insert(name.to_string(), e);
        pad_stats.insert(name.to_string(), stats);
    }
    Ok(EncodedLayer {
        config: params.config,
        plan: plan.clone(),
        matrices,
        pad_stats,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncodedMatrixMeta {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub n_pe: usize,
    pub weight_format: FixedFormat,
    pub pad: PadStats,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncodedManifest {
    pub format: String,
    pub version: u32,
    pub blob: String,
    pub layers: Vec<LayerConfig>,
    pub plans: Vec<QuantizationPlan>,
    pub matrices: Vec<Vec<EncodedMatrixMeta>>,
    pub tensors: Vec<TensorRecord>,
}

pub const ENCODED_FORMAT: &str = "lstm-encoded";

pub fn save_encoded(model: &EncodedModel, path: &Path) -> Result<()> {
    let mut writer = BlobWriter::new();
    let mut metas = Vec::new();
    for (k, layer) in model.layers.iter().enumerate() {
        let mut layer_meta = Vec::new();
        for (name, m) in &layer.matrices {
            let full = format!("layer{k}.{name}");
            let words: Vec<u16> = m
                .pe_streams
                .iter()
                .flat_map(|s| s.words.iter().copied())
                .collect();
            let col_ptrs: Vec<u32> = m
                .pe_streams
                .iter()
                .flat_map(|s| s.col_ptr.iter().copied())
                .collect();
            let counts: Vec<u32> = m.pe_streams.iter().map(|s| s.words.len() as u32).collect();
            writer.push_u16(&format!("{full}.words"), vec![words.len()], &words);
            writer.push_u32(&format!("{full}.col_ptr"), vec![col_ptrs.len()], &col_ptrs);
            writer.push_u32(&format!("{full}.pe_words"), vec![counts.len()], &counts);
            layer_meta.push(EncodedMatrixMeta {
                name: name.clone(),
                rows: m.rows,
                cols: m.cols,
                n_pe: m.n_pe,
                weight_format: m.weight_format,
                pad: layer.pad_stats[name],
            });
        }
        metas.push(layer_meta);
    }
    let (blob, tensors) = writer.finish();
    let blob_path = write_blob(path, &blob)?;
    let manifest = EncodedManifest {
        format: ENCODED_FORMAT.to_string(),
        version: 1,
        blob: blob_path
            .file_name()
            .unwrap()
            .to_string_lossy()
            .into_owned(),
        layers: model.layers.iter().map(|l| l.config).collect(),
        plans: model.layers.iter().map(|l| l.plan.clone()).collect(),
        matrices: metas,
        tensors,
    };
    write_json(path, &manifest)
}

pub fn load_encoded(path: &Path) -> Result<EncodedModel> {
    let manifest: EncodedManifest = read_json(path)?;
    if manifest.format != ENCODED_FORMAT {
        return Err(Error::Container(format!(
            "expected format {ENCODED_FORMAT}, got {}",
            manifest.format
        )));
    }
    if manifest.matrices.len() != manifest.layers.len()
        || manifest.plans.len() != manifest.layers.len()
    {
        return Err(Error::Container(
            "manifest layer, plan and matrix tables disagree".into(),
        ));
    }
    let blob = read_blob(path, &manifest.blob)?;
    let reader = BlobReader::new(&blob, path);
    let find = |name: &str| -> Result<&TensorRecord> {
        manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Container(format!("manifest is missing blob entry {name}")))
    };

    let mut layers = Vec::new();
    for (k, ((cfg, plan), metas)) in manifest
        .layers
        .iter()
        .zip(&manifest.plans)
        .zip(&manifest.matrices)
        .enumerate()
    {
        let mut matrices = BTreeMap::new();
        let mut pad_stats = BTreeMap::new();
        for meta in metas {
            let full = format!("layer{k}.{}", meta.name);
            let words = reader.read_u16(find(&format!("{full}.words"))?)?;
            let col_ptrs = reader.read_u32(find(&format!("{full}.col_ptr"))?)?;
            let counts = reader.read_u32(find(&format!("{full}.pe_words"))?)?;
            if counts.len() != meta.n_pe || col_ptrs.len() != meta.n_pe * (meta.cols + 1) {
                return Err(Error::Corrupt(format!(
                    "{full}: stream table sizes disagree with n_pe {}",
                    meta.n_pe
                )));
            }
            let mut pe_streams = Vec::with_capacity(meta.n_pe);
            let mut word_off = 0usize;
            for (pe, &count) in counts.iter().enumerate() {
                let count = count as usize;
                if word_off + count > words.len() {
                    return Err(Error::Corrupt(format!(
                        "{full}: PE {pe} words run past the stream"
                    )));
                }
                let ptr_off = pe * (meta.cols + 1);
                pe_streams.push(PeStream {
                    col_ptr: col_ptrs[ptr_off..ptr_off + meta.cols + 1].to_vec(),
                    words: words[word_off..word_off + count].to_vec(),
                });
                word_off += count;
            }
            let m = EncodedSparseMatrix {
                rows: meta.rows,
                cols: meta.cols,
                n_pe: meta.n_pe,
                weight_format: meta.weight_format,
                pe_streams,
            };
            // Decode validates col_ptr monotonicity and index bounds.
            decode_csc(&m)?;
            matrices.insert(meta.name.clone(), m);
            pad_stats.insert(meta.name.clone(), meta.pad);
        }
        layers.push(EncodedLayer {
            config: *cfg,
            plan: plan.clone(),
            matrices,
            pad_stats,
        });
    }
    Ok(EncodedModel { layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::{self, QuotaMode};
    use crate::quantize::{derive_plan, quantize_tensor, FixedFormat};
    use crate::synth;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn tensor_from(values: Vec<i32>, rows: usize, cols: usize) -> QuantizedTensor {
        QuantizedTensor {
            rows,
            cols,
            integers: values,
            format: FixedFormat::new(12, 4).unwrap(),
        }
    }

    fn full_mask(rows: usize, cols: usize) -> PruneMask {
        PruneMask {
            rows,
            cols,
            kept: vec![true; rows * cols],
            target_density: 1.0,
        }
    }

    #[test]
    fn word_pack_round_trip() {
        for (w, i) in [(0, 0), (2047, 15), (-2048 + 1, 3), (-1, 15), (513, 7)] {
            assert_eq!(unpack_word(pack_word(w, i)), (w, i));
        }
    }

    #[test]
    fn dense_column_has_zero_indices() {
        let q = tensor_from((1..=12).collect(), 4, 3);
        let (e, stats) = encode_csc(&q, &full_mask(4, 3), 1).unwrap();
        assert_eq!(stats.padding_words, 0);
        assert_eq!(stats.real_nnz, 12);
        for j in 0..3 {
            for &w in e.pe_streams[0].column(j) {
                assert_eq!(unpack_word(w).1, 0);
            }
        }
    }

    #[test]
    fn long_gap_splits_with_padding() {
        // Single nonzero at local row 20 of a one-PE column.
        let mut values = vec![0i32; 32];
        values[20] = -7;
        let mut kept = vec![false; 32];
        kept[20] = true;
        let q = tensor_from(values, 32, 1);
        let mask = PruneMask {
            rows: 32,
            cols: 1,
            kept,
            target_density: 1.0 / 32.0,
        };
        let (e, stats) = encode_csc(&q, &mask, 1).unwrap();
        let words = e.pe_streams[0].column(0);
        assert_eq!(words.len(), 2);
        assert_eq!(unpack_word(words[0]), (0, 15)); // padding consumes rows 0..=15
        assert_eq!(unpack_word(words[1]), (-7, 4)); // 16 + 4 = local row 20
        assert_eq!(stats.padding_words, 1);
        assert_eq!(stats.real_nnz, 1);

        let decoded = decode_csc(&e).unwrap();
        assert_eq!(decoded.integers[20], -7);
        assert_eq!(decoded.integers.iter().filter(|&&v| v != 0).count(), 1);
    }

    #[test]
    fn gap_of_exactly_sixteen_uses_one_pad() {
        let mut kept = vec![false; 34];
        kept[16] = true;
        kept[33] = true;
        let mut values = vec![0i32; 34];
        values[16] = 5;
        values[33] = 6;
        let q = tensor_from(values, 34, 1);
        let mask = PruneMask {
            rows: 34,
            cols: 1,
            kept,
            target_density: 0.05,
        };
        let (e, stats) = encode_csc(&q, &mask, 1).unwrap();
        let words: Vec<(i32, u32)> = e.pe_streams[0]
            .column(0)
            .iter()
            .map(|&w| unpack_word(w))
            .collect();
        assert_eq!(words, vec![(0, 15), (5, 0), (0, 15), (6, 0)]);
        assert_eq!(stats.padding_words, 2);
        assert_eq!(decode_csc(&e).unwrap().integers, q.integers);
    }

    #[test]
    fn round_trip_random_masked_tensors() {
        let mut rng = StdRng::seed_from_u64(404);
        for _ in 0..60 {
            let rows = rng.gen_range(1..=96);
            let cols = rng.gen_range(1..=40);
            let n_pe = rng.gen_range(1..=rows.min(8));
            let density = rng.gen_range(0.02..1.0);
            let values: Vec<i32> = (0..rows * cols).map(|_| rng.gen_range(-2047..=2047)).collect();
            let kept: Vec<bool> = (0..rows * cols).map(|_| rng.gen_bool(density)).collect();
            let q = tensor_from(values.clone(), rows, cols);
            let mask = PruneMask {
                rows,
                cols,
                kept: kept.clone(),
                target_density: density,
            };
            let (e, _) = encode_csc(&q, &mask, n_pe).unwrap();
            let decoded = decode_csc(&e).unwrap();
            for idx in 0..rows * cols {
                let expected = if kept[idx] { values[idx] } else { 0 };
                assert_eq!(decoded.integers[idx], expected);
            }
        }
    }

    #[test]
    fn empty_matrix_has_flat_pointers() {
        let q = tensor_from(vec![3; 20], 5, 4);
        let mask = PruneMask {
            rows: 5,
            cols: 4,
            kept: vec![false; 20],
            target_density: 0.01,
        };
        let (e, stats) = encode_csc(&q, &mask, 2).unwrap();
        assert_eq!(stats.real_nnz, 0);
        assert_eq!(stats.overhead, 0.0);
        for s in &e.pe_streams {
            assert!(s.words.is_empty());
            assert!(s.col_ptr.iter().all(|&p| p == 0));
        }
        assert!(decode_csc(&e).unwrap().integers.iter().all(|&v| v == 0));
    }

    #[test]
    fn corrupt_pointer_is_rejected() {
        let q = tensor_from((0..24).collect(), 6, 4);
        let (mut e, _) = encode_csc(&q, &full_mask(6, 4), 2).unwrap();
        e.pe_streams[0].col_ptr[2] = e.pe_streams[0].col_ptr[1] + 100;
        assert!(matches!(decode_csc(&e), Err(Error::Corrupt(_))));

        let (mut e2, _) = encode_csc(&q, &full_mask(6, 4), 2).unwrap();
        // Index accumulation past the local row count.
        e2.pe_streams[1].words[0] = pack_word(9, 15);
        assert!(matches!(decode_csc(&e2), Err(Error::Corrupt(_))));
    }

    #[test]
    fn payload_overflow_is_rejected() {
        let q = tensor_from(vec![2048, 0, 0, 0], 2, 2);
        assert!(matches!(
            encode_csc(&q, &full_mask(2, 2), 1),
            Err(Error::Overflow(_))
        ));
        let q = tensor_from(vec![-2048, 0, 0, 0], 2, 2);
        assert!(matches!(
            encode_csc(&q, &full_mask(2, 2), 1),
            Err(Error::Overflow(_))
        ));
    }

    #[test]
    fn n_pe_larger_than_rows_is_rejected() {
        let q = tensor_from(vec![1; 6], 2, 3);
        assert!(matches!(
            encode_csc(&q, &full_mask(2, 3), 3),
            Err(Error::InvalidArg(_))
        ));
    }

    #[test]
    fn encoding_is_canonical() {
        let mut rng = StdRng::seed_from_u64(7);
        let values: Vec<i32> = (0..64 * 16).map(|_| rng.gen_range(-100..100)).collect();
        let kept: Vec<bool> = (0..64 * 16).map(|_| rng.gen_bool(0.2)).collect();
        let q = tensor_from(values, 64, 16);
        let mask = PruneMask {
            rows: 64,
            cols: 16,
            kept,
            target_density: 0.2,
        };
        let (a, _) = encode_csc(&q, &mask, 4).unwrap();
        let (b, _) = encode_csc(&q, &mask, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn size_accounting() {
        let q = tensor_from(vec![1; 8], 4, 2);
        let (e, _) = encode_csc(&q, &full_mask(4, 2), 2).unwrap();
        assert_eq!(e.total_words(), 8);
        assert_eq!(compressed_size_bytes(&e), 16);
        let empty_mask = PruneMask {
            rows: 4,
            cols: 2,
            kept: vec![false; 8],
            target_density: 0.01,
        };
        let (e0, _) = encode_csc(&q, &empty_mask, 2).unwrap();
        assert_eq!(compressed_size_bytes(&e0), 0);
    }

    /// A per-PE balanced 512x1024 mask at 10% density hits the reference
    /// word count exactly: 32 PEs x 1638 words, no padding possible with
    /// only 16 local rows.
    #[test]
    fn projection_matrix_needs_no_padding() {
        let params = synth::random_params(31, synth::benchmark_config());
        let w_ym = params.w_ym.as_ref().unwrap();
        let part = PePartition::new(32).unwrap();
        let mask = compress::prune_load_balanced(w_ym, 0.1, part).unwrap();
        let plan = derive_plan(&params, 12).unwrap();
        let q = quantize_tensor(w_ym, plan.tensor_format("W_ym").unwrap());
        let (e, stats) = encode_csc(&q, &mask, 32).unwrap();
        assert_eq!(stats.padding_words, 0);
        assert_eq!(e.total_words(), 32 * 1638);
        assert_eq!(compressed_size_bytes(&e), 104_832);
    }

    #[test]
    fn balanced_masks_differ_only_by_padding() {
        let params = synth::random_params(12, synth::benchmark_config());
        let part = PePartition::new(32).unwrap();
        let mask = compress::prune_load_balanced(&params.w_ix, 0.1, part).unwrap();
        let plan = derive_plan(&params, 12).unwrap();
        let q = quantize_tensor(&params.w_ix, plan.tensor_format("W_ix").unwrap());
        let (e, _) = encode_csc(&q, &mask, 32).unwrap();
        // Count real words per PE: all equal by the quota construction.
        let real_per_pe: Vec<u64> = e
            .pe_streams
            .iter()
            .map(|s| {
                s.words
                    .iter()
                    .filter(|&&w| {
                        let (q, idx) = unpack_word(w);
                        !(q == 0 && idx == MAX_INDEX)
                    })
                    .count() as u64
            })
            .collect();
        assert!(real_per_pe.iter().all(|&n| n == real_per_pe[0]));
    }

    #[test]
    fn padding_density_fraction_is_near_one_percent() {
        // The stored density of a 10% balanced mask grows by about one
        // percentage point after gap padding, while the relative overhead
        // against real nonzeros is an order of magnitude larger.
        let params = synth::random_params(9, synth::benchmark_config());
        let part = PePartition::new(32).unwrap();
        let plan = derive_plan(&params, 12).unwrap();
        let mask = compress::prune_load_balanced(&params.w_ir, 0.1, part).unwrap();
        let q = quantize_tensor(&params.w_ir, plan.tensor_format("W_ir").unwrap());
        let (_, stats) = encode_csc(&q, &mask, 32).unwrap();
        assert!(
            stats.dense_fraction > 0.001 && stats.dense_fraction < 0.03,
            "dense fraction {}",
            stats.dense_fraction
        );
        assert!(stats.overhead > 0.01, "overhead {}", stats.overhead);
    }

    #[test]
    fn per_column_quota_reduces_padding_variance() {
        let params = synth::random_params(14, synth::benchmark_config());
        let part = PePartition::new(32).unwrap();
        let plan = derive_plan(&params, 12).unwrap();
        let mask =
            compress::prune_balanced(&params.w_ix, 0.1, part, QuotaMode::PerPeColumn).unwrap();
        let q = quantize_tensor(&params.w_ix, plan.tensor_format("W_ix").unwrap());
        let (e, _) = encode_csc(&q, &mask, 32).unwrap();
        // Every (PE, column) slice holds the same real-word quota.
        let quota = (0.1f64 * 32.0).round() as u32;
        for pe in 0..32 {
            for j in 0..e.cols {
                let real = e.pe_streams[pe]
                    .column(j)
                    .iter()
                    .filter(|&&w| {
                        let (q, idx) = unpack_word(w);
                        !(q == 0 && idx == MAX_INDEX)
                    })
                    .count() as u32;
                assert_eq!(real, quota);
            }
        }
    }

    #[test]
    fn dump_format_is_stable() {
        let q = tensor_from(vec![3, 0, -4, 0, 0, 9], 3, 2);
        let mask = PruneMask {
            rows: 3,
            cols: 2,
            kept: vec![true, false, true, false, false, true],
            target_density: 0.5,
        };
        let (e, _) = encode_csc(&q, &mask, 1).unwrap();
        let text = dump_streams("demo", &e, 8);
        assert!(text.contains("matrix demo: 3x2 over 1 PEs"));
        // Column 0 holds rows 0 and 1 back to back, column 1 skips to row 2.
        assert!(text.contains("(w=3, idx=0) (w=-4, idx=0)"));
        assert!(text.contains("(w=9, idx=2)"));
    }

    #[test]
    fn encoded_model_round_trip() {
        let cfg = crate::model::LayerConfig {
            input_dim: 6,
            hidden_dim: 8,
            proj_dim: 4,
            has_peephole: true,
            has_projection: true,
        };
        let params = synth::random_params(77, cfg);
        let plan = derive_plan(&params, 12).unwrap();
        let part = PePartition::new(4).unwrap();
        let mut matrices = BTreeMap::new();
        let mut pad_stats = BTreeMap::new();
        for name in crate::model::MATVEC_TENSORS {
            let m = params.matvec_tensor(name).unwrap();
            let mask = compress::prune_load_balanced(m, 0.5, part).unwrap();
            let q = quantize_tensor(m, plan.tensor_format(name).unwrap());
            let (e, stats) = encode_csc(&q, &mask, 4).unwrap();
            matrices.insert(name.to_string(), e);
            pad_stats.insert(name.to_string(), stats);
        }
        let model = EncodedModel {
            layers: vec![EncodedLayer {
                config: cfg,
                plan,
                matrices,
                pad_stats,
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("encoded.json");
        save_encoded(&model, &path).unwrap();
        let loaded = load_encoded(&path).unwrap();
        assert_eq!(model, loaded);
    }
}
