//! Pruning: magnitude selection plus load-balanced variants that give every
//! processing element (or row, or PE-column slice) the same nonzero quota so
//! the PEs of one channel finish together.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{
    read_blob, read_json, write_blob, write_json, BlobReader, BlobWriter, TensorRecord,
};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Row-interleaved assignment of matrix rows to processing elements:
/// row `r` belongs to PE `r % n_pe`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PePartition {
    pub n_pe: usize,
}

impl PePartition {
    pub fn new(n_pe: usize) -> Result<Self> {
        if n_pe == 0 {
            return Err(Error::InvalidArg("n_pe must be >= 1".into()));
        }
        Ok(Self { n_pe })
    }

    pub fn validate_for(&self, rows: usize) -> Result<()> {
        if self.n_pe > rows {
            return Err(Error::InvalidArg(format!(
                "n_pe {} exceeds row count {rows}",
                self.n_pe
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn pe_of_row(&self, r: usize) -> usize {
        r % self.n_pe
    }

    /// Number of rows owned by `pe` out of `rows` total.
    pub fn local_rows(&self, pe: usize, rows: usize) -> usize {
        if pe < rows % self.n_pe {
            rows / self.n_pe + 1
        } else {
            rows / self.n_pe
        }
    }
}

/// Which submatrix granularity receives an equal nonzero quota.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuotaMode {
    /// One quota per PE row-slice (default).
    PerPe,
    /// One quota per matrix row.
    PerRow,
    /// One quota per PE per column; also equalizes per-column work, which is
    /// what keeps PEs in lockstep even without FIFO slack.
    PerPeColumn,
}

/// Boolean keep/drop decision per entry, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneMask {
    pub rows: usize,
    pub cols: usize,
    pub kept: Vec<bool>,
    pub target_density: f64,
}

impl PruneMask {
    pub fn nnz(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }

    pub fn density(&self) -> f64 {
        self.nnz() as f64 / (self.rows * self.cols) as f64
    }

    #[inline]
    pub fn is_kept(&self, r: usize, c: usize) -> bool {
        self.kept[r * self.cols + c]
    }

    pub fn validate_shape(&self, m: &DenseMatrix) -> Result<()> {
        if self.rows != m.rows() || self.cols != m.cols() {
            return Err(Error::Shape(format!(
                "mask is {}x{} but matrix is {}x{}",
                self.rows,
                self.cols,
                m.rows(),
                m.cols()
            )));
        }
        Ok(())
    }
}

fn check_density(density: f64) -> Result<()> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidArg(format!(
            "density must be in (0, 1], got {density}"
        )));
    }
    Ok(())
}

/// Quota for a submatrix of `size` entries: round-half-up of density*size.
fn quota(density: f64, size: usize) -> usize {
    (density * size as f64).round() as usize
}

/// Marks the `k` largest-magnitude entries of the given flat indices in
/// `kept`. Ties break by flat (row-major) index, lower kept first, so masks
/// for nested densities nest.
fn keep_top_k(values: &[f64], indices: &mut [usize], k: usize, kept: &mut [bool]) {
    let k = k.min(indices.len());
    if k == 0 {
        return;
    }
    let cmp = |a: &usize, b: &usize| {
        values[*b]
            .abs()
            .partial_cmp(&values[*a].abs())
            .expect("matrix values are finite")
            .then(a.cmp(b))
    };
    if k < indices.len() {
        indices.select_nth_unstable_by(k - 1, cmp);
    }
    for &idx in indices[..k].iter() {
        kept[idx] = true;
    }
}

/// Keeps exactly `round(density * rows * cols)` entries of largest absolute
/// value across the whole matrix.
pub fn prune_magnitude(m: &DenseMatrix, density: f64) -> Result<PruneMask> {
    check_density(density)?;
    let total = m.rows() * m.cols();
    let k = quota(density, total);
    let mut kept = vec![false; total];
    let mut indices: Vec<usize> = (0..total).collect();
    keep_top_k(m.values(), &mut indices, k, &mut kept);
    Ok(PruneMask {
        rows: m.rows(),
        cols: m.cols(),
        kept,
        target_density: density,
    })
}

/// Keeps an equal quota of largest-magnitude entries inside every submatrix
/// selected by `mode`. With `PerPe`, all PEs of a channel end up with
/// identical total work; totals can deviate from the global target by fewer
/// than one entry per submatrix due to rounding.
pub fn prune_balanced(
    m: &DenseMatrix,
    density: f64,
    part: PePartition,
    mode: QuotaMode,
) -> Result<PruneMask> {
    check_density(density)?;
    part.validate_for(m.rows())?;
    let (rows, cols) = (m.rows(), m.cols());
    let mut kept = vec![false; rows * cols];
    match mode {
        QuotaMode::PerPe => {
            for pe in 0..part.n_pe {
                let mut indices: Vec<usize> = (pe..rows)
                    .step_by(part.n_pe)
                    .flat_map(|r| (0..cols).map(move |c| r * cols + c))
                    .collect();
                let k = quota(density, indices.len());
                keep_top_k(m.values(), &mut indices, k, &mut kept);
            }
        }
        QuotaMode::PerRow => {
            for r in 0..rows {
                let mut indices: Vec<usize> = (0..cols).map(|c| r * cols + c).collect();
                let k = quota(density, cols);
                keep_top_k(m.values(), &mut indices, k, &mut kept);
            }
        }
        QuotaMode::PerPeColumn => {
            for pe in 0..part.n_pe {
                let local: Vec<usize> = (pe..rows).step_by(part.n_pe).collect();
                let k = quota(density, local.len());
                for c in 0..cols {
                    let mut indices: Vec<usize> = local.iter().map(|&r| r * cols + c).collect();
                    keep_top_k(m.values(), &mut indices, k, &mut kept);
                }
            }
        }
    }
    Ok(PruneMask {
        rows,
        cols,
        kept,
        target_density: density,
    })
}

/// Per-PE quota over the PE's whole row slice (the default mode).
pub fn prune_load_balanced(m: &DenseMatrix, density: f64, part: PePartition) -> Result<PruneMask> {
    prune_balanced(m, density, part, QuotaMode::PerPe)
}

/// Zeroes dropped entries; kept entries pass through bitwise.
pub fn apply_mask(m: &DenseMatrix, mask: &PruneMask) -> Result<DenseMatrix> {
    mask.validate_shape(m)?;
    let values: Vec<f64> = m
        .values()
        .iter()
        .zip(&mask.kept)
        .map(|(&v, &keep)| if keep { v } else { 0.0 })
        .collect();
    DenseMatrix::new(m.rows(), m.cols(), values)
}

/// Per-PE nonzero counts and the max/mean imbalance ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadStats {
    pub per_pe_nnz: Vec<usize>,
    /// max(per_pe_nnz) / mean(per_pe_nnz); 1.0 means perfectly balanced.
    pub imbalance: f64,
}

pub fn load_stats(mask: &PruneMask, part: PePartition) -> Result<LoadStats> {
    part.validate_for(mask.rows)?;
    let mut per_pe_nnz = vec![0usize; part.n_pe];
    for r in 0..mask.rows {
        let pe = part.pe_of_row(r);
        for c in 0..mask.cols {
            if mask.is_kept(r, c) {
                per_pe_nnz[pe] += 1;
            }
        }
    }
    let total: usize = per_pe_nnz.iter().sum();
    let max = per_pe_nnz.iter().copied().max().unwrap_or(0);
    let mean = total as f64 / part.n_pe as f64;
    let imbalance = if total == 0 { 1.0 } else { max as f64 / mean };
    Ok(LoadStats {
        per_pe_nnz,
        imbalance,
    })
}

/// Mask file manifest. `iteration` counts prune/retrain rounds when the mask
/// is re-imported from an external trainer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskManifest {
    pub format: String,
    pub version: u32,
    pub blob: String,
    pub density: f64,
    pub n_pe: usize,
    pub quota_mode: Option<QuotaMode>,
    pub iteration: u32,
    pub tensors: Vec<TensorRecord>,
}

pub const MASK_FORMAT: &str = "prune-mask";

/// A named set of masks (one per prunable tensor of a model).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub masks: Vec<(String, PruneMask)>,
}

impl MaskSet {
    pub fn get(&self, name: &str) -> Option<&PruneMask> {
        self.masks.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }
}

pub fn save_masks(
    set: &MaskSet,
    density: f64,
    n_pe: usize,
    quota_mode: Option<QuotaMode>,
    iteration: u32,
    path: &Path,
) -> Result<()> {
    let mut writer = BlobWriter::new();
    for (name, mask) in &set.masks {
        writer.push_bits(name, vec![mask.rows, mask.cols], &mask.kept);
    }
    let (blob, tensors) = writer.finish();
    let blob_path = write_blob(path, &blob)?;
    let manifest = MaskManifest {
        format: MASK_FORMAT.to_string(),
        version: 1,
        blob: blob_path
            .file_name()
            .unwrap()
            .to_string_lossy()
            .into_owned(),
        density,
        n_pe,
        quota_mode,
        iteration,
        tensors,
    };
    write_json(path, &manifest)
}

pub fn load_masks(path: &Path) -> Result<(MaskSet, MaskManifest)> {
    let manifest: MaskManifest = read_json(path)?;
    if manifest.format != MASK_FORMAT {
        return Err(Error::Container(format!(
            "expected format {MASK_FORMAT}, got {}",
            manifest.format
        )));
    }
    let blob = read_blob(path, &manifest.blob)?;
    let reader = BlobReader::new(&blob, path);
    let mut masks = Vec::with_capacity(manifest.tensors.len());
    for rec in &manifest.tensors {
        if rec.dims.len() != 2 {
            return Err(Error::Container(format!(
                "mask {} must be two-dimensional, got {:?}",
                rec.name, rec.dims
            )));
        }
        let (rows, cols) = (rec.dims[0], rec.dims[1]);
        let kept = reader.read_bits(rec, rows * cols)?;
        masks.push((
            rec.name.clone(),
            PruneMask {
                rows,
                cols,
                kept,
                target_density: manifest.density,
            },
        ));
    }
    Ok((MaskSet { masks }, manifest))
}
