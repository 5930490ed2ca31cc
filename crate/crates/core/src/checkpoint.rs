//! Adapter checkpoints: a self-describing binary container for the three
//! trainable vectors plus the metadata needed to rebuild the adapter.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset 0   8-byte magic "MOFTCKP1"
//! offset 8   u32 manifest length L
//! offset 12  manifest JSON (UTF-8, L bytes)
//! offset 12+L three tensor blobs, back to back: q, α, β as 1×len row
//!            vectors in the same framed format the tensor files use
//! ```
//!
//! The manifest records the dimensions, rank, variant, scaling mode, the
//! SVD mode, the training seed, and the SHA-256 of the pre-trained weight
//! file, so a merge can refuse to pair a checkpoint with the wrong weights.
//! Writing is bitwise deterministic: the same adapter always produces the
//! same file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapter::MoftAdapter;
use crate::cayley::param_len;
use crate::error::{MoftError, Result};
use crate::subspace::{SubspaceDecomposition, SvdMode, Variant};
use crate::tensor_io::{encode, parse, DTYPE_F64};

const MAGIC: &[u8; 8] = b"MOFTCKP1";
const MAX_MANIFEST_LEN: u32 = 1 << 20;

/// Metadata block of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    /// Container version; currently always 1.
    pub format_version: u32,
    /// Input dimension of the adapted weight.
    pub d: u64,
    /// Output dimension of the adapted weight.
    pub n: u64,
    /// Decomposition rank.
    pub rank: u64,
    /// Which split produced the frozen factors.
    pub variant: Variant,
    /// Whether `α`/`β` were trained.
    pub scaling_enabled: bool,
    /// Seed the training run used.
    pub seed: u64,
    /// How the SVD behind the decomposition was computed.
    pub svd: SvdMode,
    /// SHA-256 (lowercase hex) of the pre-trained weight file.
    pub w_pre_sha256: String,
}

/// A manifest together with the trainable vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointData {
    pub manifest: CheckpointManifest,
    pub q: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl CheckpointData {
    /// Captures an adapter's trainable state.
    pub fn from_adapter(
        adapter: &MoftAdapter,
        seed: u64,
        svd: SvdMode,
        w_pre_sha256: String,
    ) -> Self {
        let dec = adapter.decomposition();
        CheckpointData {
            manifest: CheckpointManifest {
                format_version: 1,
                d: dec.d() as u64,
                n: dec.n() as u64,
                rank: dec.rank() as u64,
                variant: dec.variant(),
                scaling_enabled: adapter.scaling_enabled(),
                seed,
                svd,
                w_pre_sha256,
            },
            q: adapter.cayley().q().to_vec(),
            alpha: adapter.alpha().to_vec(),
            beta: adapter.beta().to_vec(),
        }
    }

    /// Reattaches the stored parameters to a freshly computed decomposition.
    ///
    /// # Errors
    ///
    /// `InvalidInput` if the decomposition's shape, rank, or variant
    /// disagrees with the manifest.
    pub fn rebuild(&self, dec: SubspaceDecomposition) -> Result<MoftAdapter> {
        let m = &self.manifest;
        if (dec.d() as u64, dec.n() as u64) != (m.d, m.n) {
            return Err(MoftError::InvalidInput(format!(
                "checkpoint was trained on a {}x{} weight, got {}x{}",
                m.d,
                m.n,
                dec.d(),
                dec.n()
            )));
        }
        if dec.rank() as u64 != m.rank {
            return Err(MoftError::InvalidInput(format!(
                "checkpoint rank {} does not match decomposition rank {}",
                m.rank,
                dec.rank()
            )));
        }
        if dec.variant() != m.variant {
            return Err(MoftError::InvalidInput(format!(
                "checkpoint variant {} does not match decomposition variant {}",
                m.variant,
                dec.variant()
            )));
        }
        MoftAdapter::from_parts(
            dec,
            self.q.clone(),
            self.alpha.clone(),
            self.beta.clone(),
            m.scaling_enabled,
        )
    }

    fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        if m.format_version != 1 {
            return Err(MoftError::InvalidInput(format!(
                "unsupported checkpoint version {}",
                m.format_version
            )));
        }
        if m.rank == 0 || m.d == 0 || m.n == 0 {
            return Err(MoftError::InvalidInput(
                "checkpoint dimensions must be positive".to_string(),
            ));
        }
        let r = m.rank as usize;
        if self.q.len() != param_len(r) {
            return Err(MoftError::ShapeError(format!(
                "rank {r} needs {} rotation parameters, got {}",
                param_len(r),
                self.q.len()
            )));
        }
        if self.alpha.len() != r || self.beta.len() != r {
            return Err(MoftError::ShapeError(format!(
                "scale vectors must have length {r}, got {} and {}",
                self.alpha.len(),
                self.beta.len()
            )));
        }
        Ok(())
    }
}

/// Serializes a checkpoint to bytes.
///
/// # Errors
///
/// `InvalidInput`/`ShapeError` if the data is internally inconsistent.
pub fn checkpoint_bytes(data: &CheckpointData) -> Result<Vec<u8>> {
    data.validate()?;
    let manifest = serde_json::to_vec(&data.manifest)
        .map_err(|e| MoftError::InvalidInput(format!("manifest serialization failed: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest);
    for v in [&data.q, &data.alpha, &data.beta] {
        out.extend_from_slice(&encode(1, v.len() as u64, v, DTYPE_F64));
    }
    Ok(out)
}

/// Writes a checkpoint file.
pub fn write_checkpoint(path: &Path, data: &CheckpointData) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(data)?)?;
    Ok(())
}

/// Parses checkpoint bytes.
///
/// # Errors
///
/// `FormatError` with the byte offset of the first defect.
pub fn parse_checkpoint(bytes: &[u8]) -> Result<CheckpointData> {
    if bytes.len() < MAGIC.len() {
        return Err(MoftError::FormatError {
            offset: bytes.len() as u64,
            reason: "file truncated inside magic".to_string(),
        });
    }
    if &bytes[..8] != MAGIC {
        return Err(MoftError::FormatError {
            offset: 0,
            reason: "bad magic, not a checkpoint file".to_string(),
        });
    }
    if bytes.len() < 12 {
        return Err(MoftError::FormatError {
            offset: bytes.len() as u64,
            reason: "file truncated inside manifest length".to_string(),
        });
    }
    let manifest_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if manifest_len > MAX_MANIFEST_LEN {
        return Err(MoftError::FormatError {
            offset: 8,
            reason: format!("manifest length {manifest_len} exceeds limit {MAX_MANIFEST_LEN}"),
        });
    }
    let manifest_end = 12usize + manifest_len as usize;
    if bytes.len() < manifest_end {
        return Err(MoftError::FormatError {
            offset: bytes.len() as u64,
            reason: "file truncated inside manifest".to_string(),
        });
    }
    let manifest: CheckpointManifest =
        serde_json::from_slice(&bytes[12..manifest_end]).map_err(|e| MoftError::FormatError {
            offset: 12,
            reason: format!("manifest JSON invalid: {e}"),
        })?;
    if manifest.format_version != 1 {
        return Err(MoftError::FormatError {
            offset: 12,
            reason: format!("unsupported checkpoint version {}", manifest.format_version),
        });
    }

    let mut cursor = manifest_end;
    let mut vectors = Vec::with_capacity(3);
    for name in ["q", "alpha", "beta"] {
        let parsed = parse(&bytes[cursor..], cursor as u64, true)?;
        if parsed.rows != 1 {
            return Err(MoftError::FormatError {
                offset: cursor as u64 + 8,
                reason: format!("{name} must be a row vector, got {} rows", parsed.rows),
            });
        }
        vectors.push(parsed.data);
        cursor += parsed.consumed;
    }
    if cursor != bytes.len() {
        return Err(MoftError::FormatError {
            offset: cursor as u64,
            reason: format!("{} trailing bytes after parameters", bytes.len() - cursor),
        });
    }
    let beta = vectors.pop().unwrap();
    let alpha = vectors.pop().unwrap();
    let q = vectors.pop().unwrap();
    let data = CheckpointData {
        manifest,
        q,
        alpha,
        beta,
    };
    data.validate().map_err(|e| MoftError::FormatError {
        offset: 12,
        reason: format!("manifest inconsistent with stored vectors: {e}"),
    })?;
    Ok(data)
}

/// Reads a checkpoint file.
pub fn read_checkpoint(path: &Path) -> Result<CheckpointData> {
    parse_checkpoint(&std::fs::read(path)?)
}
