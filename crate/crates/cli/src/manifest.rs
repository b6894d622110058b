//! Pipeline manifest: an append-only record of every stage invocation with a
//! hash chain from each stage's input back to the previous stage's output.

use std::path::Path;

use serde::{Deserialize, Serialize};
use slstm::container::{read_json, sha256_hex, write_json};
use slstm::{Error, Result};

pub const MANIFEST_FORMAT: &str = "pipeline-manifest";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub tool_version: String,
    /// Seconds since the epoch; taken from SOURCE_DATE_EPOCH so reruns with
    /// identical inputs produce identical bytes (0 when unset).
    pub timestamp: u64,
    pub params: String,
    pub input: Option<String>,
    pub input_sha256: Option<String>,
    pub output: String,
    pub output_sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub format: String,
    pub version: u32,
    pub stages: Vec<StageRecord>,
}

impl PipelineManifest {
    fn load_or_new(path: &Path) -> Result<Self> {
        if path.exists() {
            let m: PipelineManifest = read_json(path)?;
            if m.format != MANIFEST_FORMAT {
                return Err(Error::Container(format!(
                    "expected format {MANIFEST_FORMAT}, got {}",
                    m.format
                )));
            }
            Ok(m)
        } else {
            Ok(PipelineManifest {
                format: MANIFEST_FORMAT.to_string(),
                version: 1,
                stages: Vec::new(),
            })
        }
    }
}

fn timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0)
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Appends one stage record, enforcing the hash chain: a stage's input must
/// be byte-identical to the output some earlier stage recorded. A hand-edited
/// or regenerated-under-different-flags input therefore fails, as does
/// running stages out of order.
pub fn record_stage(
    manifest_path: &Path,
    stage: &str,
    params: &str,
    input: Option<&Path>,
    output: &Path,
) -> Result<()> {
    let mut manifest = PipelineManifest::load_or_new(manifest_path)?;
    let input_sha256 = input.map(hash_file).transpose()?;
    if let Some(hash) = &input_sha256 {
        if !manifest.stages.is_empty()
            && !manifest.stages.iter().any(|s| &s.output_sha256 == hash)
        {
            return Err(Error::Corrupt(format!(
                "pipeline chain broken: the input of stage {stage} does not match any output \
                 recorded in {} (stale or out-of-order invocation)",
                manifest_path.display()
            )));
        }
    }
    manifest.stages.push(StageRecord {
        stage: stage.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp: timestamp(),
        params: params.to_string(),
        input: input.map(|p| p.display().to_string()),
        input_sha256,
        output: output.display().to_string(),
        output_sha256: hash_file(output)?,
    });
    write_json(manifest_path, &manifest)
}
