//! Manifest-plus-blob file container shared by every on-disk artifact.
//!
//! Each artifact is a JSON manifest next to one little-endian binary blob.
//! The manifest lists tensors with `dims`, `dtype`, `offset`, `byte_len` and
//! a per-tensor `sha256`, which keeps the metadata diffable and the bulk data
//! compact.

use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::model::{LayerConfig, LstmModel, LstmParams, Peepholes};

/// One tensor entry in a manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub dims: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
    pub byte_len: u64,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Accumulates tensors into one blob while recording manifest entries.
#[derive(Default)]
pub struct BlobWriter {
    buf: Vec<u8>,
    records: Vec<TensorRecord>,
}

impl BlobWriter {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: &str, dims: Vec<usize>, dtype: &str, bytes: Vec<u8>) {
        let offset = self.buf.len() as u64;
        let sha256 = sha256_hex(&bytes);
        self.records.push(TensorRecord {
            name: name.to_string(),
            dims,
            dtype: dtype.to_string(),
            offset,
            byte_len: bytes.len() as u64,
            sha256,
        });
        self.buf.extend_from_slice(&bytes);
    }

    pub fn push_f64(&mut self, name: &str, dims: Vec<usize>, values: &[f64]) {
        let mut bytes = Vec::with_capacity(values.len() * 8);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.push(name, dims, "f64", bytes);
    }

    pub fn push_i32(&mut self, name: &str, dims: Vec<usize>, values: &[i32]) {
        let mut bytes = Vec::with_capacity(values.len() * 4);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.push(name, dims, "i32", bytes);
    }

    pub fn push_u16(&mut self, name: &str, dims: Vec<usize>, values: &[u16]) {
        let mut bytes = Vec::with_capacity(values.len() * 2);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.push(name, dims, "u16", bytes);
    }

    pub fn push_u32(&mut self, name: &str, dims: Vec<usize>, values: &[u32]) {
        let mut bytes = Vec::with_capacity(values.len() * 4);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.push(name, dims, "u32", bytes);
    }

    /// Bit-packed booleans, LSB-first within each byte.
    pub fn push_bits(&mut self, name: &str, dims: Vec<usize>, values: &[bool]) {
        let mut bytes = vec![0u8; values.len().div_ceil(8)];
        for (idx, &bit) in values.iter().enumerate() {
            if bit {
                bytes[idx / 8] |= 1 << (idx % 8);
            }
        }
        self.push(name, dims, "bitmask", bytes);
    }

    pub fn finish(self) -> (Vec<u8>, Vec<TensorRecord>) {
        (self.buf, self.records)
    }
}

/// Reads tensors back out of a blob, verifying bounds and checksums.
pub struct BlobReader<'a> {
    blob: &'a [u8],
    path: PathBuf,
}

impl<'a> BlobReader<'a> {
    pub fn new(blob: &'a [u8], path: &Path) -> Self {
        Self {
            blob,
            path: path.to_path_buf(),
        }
    }

    fn slice(&self, rec: &TensorRecord) -> Result<&'a [u8]> {
        let start = rec.offset as usize;
        let end = start + rec.byte_len as usize;
        if end > self.blob.len() {
            // A short blob is an I/O-level failure: report exactly where the
            // data ran out.
            return Err(Error::io(
                &self.path,
                std::io::Error::new(
                    std::io::ErrorKind::UnexpectedEof,
                    format!(
                        "blob truncated: tensor {} needs bytes {start}..{end} but file has {}",
                        rec.name,
                        self.blob.len()
                    ),
                ),
            ));
        }
        let bytes = &self.blob[start..end];
        let digest = sha256_hex(bytes);
        if digest != rec.sha256 {
            return Err(Error::Corrupt(format!(
                "checksum mismatch for tensor {}: manifest {} vs blob {digest}",
                rec.name, rec.sha256
            )));
        }
        Ok(bytes)
    }

    pub fn read_f64(&self, rec: &TensorRecord) -> Result<Vec<f64>> {
        let bytes = self.slice(rec)?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Corrupt(format!(
                "tensor {} byte_len {} is not a multiple of 8",
                rec.name, rec.byte_len
            )));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn read_i32(&self, rec: &TensorRecord) -> Result<Vec<i32>> {
        let bytes = self.slice(rec)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn read_u16(&self, rec: &TensorRecord) -> Result<Vec<u16>> {
        let bytes = self.slice(rec)?;
        Ok(bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn read_u32(&self, rec: &TensorRecord) -> Result<Vec<u32>> {
        let bytes = self.slice(rec)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn read_bits(&self, rec: &TensorRecord, len: usize) -> Result<Vec<bool>> {
        let bytes = self.slice(rec)?;
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::Corrupt(format!(
                "tensor {}: expected {} packed bytes for {len} bits, got {}",
                rec.name,
                len.div_ceil(8),
                bytes.len()
            )));
        }
        Ok((0..len).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
    }
}

/// Derives the blob path for a manifest path: same stem, `.bin` extension.
pub fn blob_path_for(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn write_blob(manifest_path: &Path, blob: &[u8]) -> Result<PathBuf> {
    let path = blob_path_for(manifest_path);
    std::fs::write(&path, blob).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_blob(manifest_path: &Path, declared: &str) -> Result<Vec<u8>> {
    let path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(declared);
    std::fs::read(&path).map_err(|e| Error::io(&path, e))
}

/// Model container manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: String,
    pub version: u32,
    pub blob: String,
    pub layers: Vec<LayerConfig>,
    pub tensors: Vec<TensorRecord>,
}

pub const MODEL_FORMAT: &str = "lstm-model";

fn layer_tensor_name(layer: usize, name: &str) -> String {
    format!("layer{layer}.{name}")
}

/// Writes a float model as `<path>` (manifest) plus `<stem>.bin` (blob).
/// A save/load round trip is bit-identical for every value.
pub fn save_model(model: &LstmModel, path: &Path) -> Result<()> {
    model.validate()?;
    let mut writer = BlobWriter::new();
    for (k, layer) in model.layers.iter().enumerate() {
        let h = layer.config.hidden_dim;
        let mats: [(&str, &DenseMatrix); 8] = [
            ("W_ix", &layer.w_ix),
            ("W_fx", &layer.w_fx),
            ("W_cx", &layer.w_cx),
            ("W_ox", &layer.w_ox),
            ("W_ir", &layer.w_ir),
            ("W_fr", &layer.w_fr),
            ("W_cr", &layer.w_cr),
            ("W_or", &layer.w_or),
        ];
        for (name, m) in mats {
            writer.push_f64(
                &layer_tensor_name(k, name),
                vec![m.rows(), m.cols()],
                m.values(),
            );
        }
        if let Some(w_ym) = &layer.w_ym {
            writer.push_f64(
                &layer_tensor_name(k, "W_ym"),
                vec![w_ym.rows(), w_ym.cols()],
                w_ym.values(),
            );
        }
        if let Some(p) = &layer.peephole {
            writer.push_f64(&layer_tensor_name(k, "W_ic"), vec![h], &p.w_ic);
            writer.push_f64(&layer_tensor_name(k, "W_fc"), vec![h], &p.w_fc);
            writer.push_f64(&layer_tensor_name(k, "W_oc"), vec![h], &p.w_oc);
        }
        writer.push_f64(&layer_tensor_name(k, "b_i"), vec![h], &layer.b_i);
        writer.push_f64(&layer_tensor_name(k, "b_f"), vec![h], &layer.b_f);
        writer.push_f64(&layer_tensor_name(k, "b_c"), vec![h], &layer.b_c);
        writer.push_f64(&layer_tensor_name(k, "b_o"), vec![h], &layer.b_o);
    }
    let (blob, tensors) = writer.finish();
    let blob_path = write_blob(path, &blob)?;
    let manifest = ModelManifest {
        format: MODEL_FORMAT.to_string(),
        version: 1,
        blob: blob_path
            .file_name()
            .unwrap()
            .to_string_lossy()
            .into_owned(),
        layers: model.layers.iter().map(|l| l.config).collect(),
        tensors,
    };
    write_json(path, &manifest)
}

pub fn load_model(path: &Path) -> Result<LstmModel> {
    let manifest: ModelManifest = read_json(path)?;
    if manifest.format != MODEL_FORMAT {
        return Err(Error::Container(format!(
            "expected format {MODEL_FORMAT}, got {}",
            manifest.format
        )));
    }
    let blob = read_blob(path, &manifest.blob)?;
    let reader = BlobReader::new(&blob, path);

    let find = |name: &str| -> Result<&TensorRecord> {
        manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Container(format!("manifest is missing tensor {name}")))
    };
    let read_mat = |name: &str, rows: usize, cols: usize| -> Result<DenseMatrix> {
        let rec = find(name)?;
        if rec.dims != [rows, cols] {
            return Err(Error::Shape(format!(
                "tensor {name}: manifest dims {:?} do not match config {rows}x{cols}",
                rec.dims
            )));
        }
        let values = reader.read_f64(rec)?;
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "tensor {name}: blob holds {} values, manifest declares {rows}x{cols}",
                values.len()
            )));
        }
        DenseMatrix::new(rows, cols, values)
    };
    let read_vec = |name: &str, len: usize| -> Result<Vec<f64>> {
        let rec = find(name)?;
        let values = reader.read_f64(rec)?;
        if values.len() != len {
            return Err(Error::Shape(format!(
                "tensor {name}: expected length {len}, got {}",
                values.len()
            )));
        }
        Ok(values)
    };

    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (k, cfg) in manifest.layers.iter().enumerate() {
        cfg.validate()?;
        let h = cfg.hidden_dim;
        let name = |n: &str| layer_tensor_name(k, n);
        let params = LstmParams {
            config: *cfg,
            w_ix: read_mat(&name("W_ix"), h, cfg.input_dim)?,
            w_fx: read_mat(&name("W_fx"), h, cfg.input_dim)?,
            w_cx: read_mat(&name("W_cx"), h, cfg.input_dim)?,
            w_ox: read_mat(&name("W_ox"), h, cfg.input_dim)?,
            w_ir: read_mat(&name("W_ir"), h, cfg.proj_dim)?,
            w_fr: read_mat(&name("W_fr"), h, cfg.proj_dim)?,
            w_cr: read_mat(&name("W_cr"), h, cfg.proj_dim)?,
            w_or: read_mat(&name("W_or"), h, cfg.proj_dim)?,
            peephole: if cfg.has_peephole {
                Some(Peepholes {
                    w_ic: read_vec(&name("W_ic"), h)?,
                    w_fc: read_vec(&name("W_fc"), h)?,
                    w_oc: read_vec(&name("W_oc"), h)?,
                })
            } else {
                None
            },
            b_i: read_vec(&name("b_i"), h)?,
            b_f: read_vec(&name("b_f"), h)?,
            b_c: read_vec(&name("b_c"), h)?,
            b_o: read_vec(&name("b_o"), h)?,
            w_ym: if cfg.has_projection {
                Some(read_mat(&name("W_ym"), cfg.proj_dim, h)?)
            } else {
                None
            },
        };
        params.validate()?;
        layers.push(params);
    }
    let model = LstmModel { layers };
    model.validate()?;
    Ok(model)
}
