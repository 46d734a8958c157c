//! Binary field checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic            4 bytes   "ODFN"
//! format version   u32       currently 1
//! variant          u8        0 hybrid | 1 rendering-head | 2 feature-head
//! hidden width     u32
//! position depth   u32
//! direction depth  u32
//! truncation       f64
//! scene bound      f64
//! pos frequencies  u32
//! dir frequencies  u32
//! include raw      u8
//! param count      u64
//! parameters       f32 * param count
//! checksum         u64       FNV-1a 64 over all preceding bytes
//! ```
//!
//! Parameters are quantized to f32 at save time, so saving a loaded
//! checkpoint reproduces the file byte for byte.

use super::write_atomic;
use crate::autodiff::ParamVector;
use crate::field::{ArchitectureVariant, EncodingConfig, FieldConfig, FieldModel};
use crate::{Error, Result};
use std::path::Path;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ODFN";
pub const CHECKPOINT_VERSION: u32 = 1;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn variant_tag(v: ArchitectureVariant) -> u8 {
    match v {
        ArchitectureVariant::HybridDefault => 0,
        ArchitectureVariant::RenderingHead => 1,
        ArchitectureVariant::FeatureHead => 2,
    }
}

fn variant_from_tag(tag: u8) -> Result<ArchitectureVariant> {
    match tag {
        0 => Ok(ArchitectureVariant::HybridDefault),
        1 => Ok(ArchitectureVariant::RenderingHead),
        2 => Ok(ArchitectureVariant::FeatureHead),
        other => Err(Error::CorruptCheckpoint(format!(
            "unknown architecture tag {other}"
        ))),
    }
}

pub fn save_checkpoint(
    params: &ParamVector,
    cfg: &FieldConfig,
    enc: &EncodingConfig,
    path: &Path,
) -> Result<()> {
    let mut bytes = Vec::with_capacity(64 + params.len() * 4);
    bytes.extend_from_slice(&CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.push(variant_tag(cfg.variant));
    bytes.extend_from_slice(&(cfg.hidden_width as u32).to_le_bytes());
    bytes.extend_from_slice(&(cfg.position_mlp_depth as u32).to_le_bytes());
    bytes.extend_from_slice(&(cfg.direction_branch_depth as u32).to_le_bytes());
    bytes.extend_from_slice(&cfg.truncation_distance.to_le_bytes());
    bytes.extend_from_slice(&cfg.scene_bound.to_le_bytes());
    bytes.extend_from_slice(&enc.position_frequencies.to_le_bytes());
    bytes.extend_from_slice(&enc.direction_frequencies.to_le_bytes());
    bytes.push(u8::from(enc.include_raw_input));
    bytes.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for &v in params.values() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let checksum = fnv1a64(&bytes);
    bytes.extend_from_slice(&checksum.to_le_bytes());
    write_atomic(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamVector, FieldConfig, EncodingConfig)> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    if bytes.len() < 4 {
        return Err(Error::NotACheckpoint);
    }
    if bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(Error::NotACheckpoint);
    }
    // The checksum is validated before any field past the version so that
    // truncation and corruption surface as checksum failures.
    let mut r = Reader {
        bytes: &bytes,
        cursor: 4,
    };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    if bytes.len() < 8 + 8 {
        return Err(Error::CorruptCheckpoint("file shorter than a checksum".into()));
    }
    let body_len = bytes.len() - 8;
    let stored = u64::from_le_bytes(bytes[body_len..].try_into().unwrap());
    let computed = fnv1a64(&bytes[..body_len]);
    if stored != computed {
        return Err(Error::CorruptCheckpoint(format!(
            "checksum mismatch (stored {stored:#x}, computed {computed:#x})"
        )));
    }

    let variant = variant_from_tag(r.u8()?)?;
    let hidden_width = r.u32()? as usize;
    let position_mlp_depth = r.u32()? as usize;
    let direction_branch_depth = r.u32()? as usize;
    let truncation_distance = r.f64()?;
    let scene_bound = r.f64()?;
    let position_frequencies = r.u32()?;
    let direction_frequencies = r.u32()?;
    let include_raw_input = r.u8()? != 0;
    let count = r.u64()? as usize;

    let cfg = FieldConfig {
        variant,
        hidden_width,
        position_mlp_depth,
        direction_branch_depth,
        truncation_distance,
        scene_bound,
    };
    let enc = EncodingConfig {
        position_frequencies,
        direction_frequencies,
        include_raw_input,
    };
    let model = FieldModel::new(cfg, enc)
        .map_err(|e| Error::CorruptCheckpoint(format!("invalid configuration: {e}")))?;
    if model.param_count() != count {
        return Err(Error::CorruptCheckpoint(format!(
            "parameter count {count} does not match the configuration ({} expected)",
            model.param_count()
        )));
    }
    if r.remaining() != count * 4 {
        return Err(Error::CorruptCheckpoint(format!(
            "parameter block is {} bytes, expected {}",
            r.remaining(),
            count * 4
        )));
    }
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        values.push(r.f32()? as f64);
    }
    Ok((ParamVector::new(values), cfg, enc))
}

struct Reader<'a> {
    bytes: &'a [u8],
    cursor: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        // The trailing 8 bytes are the checksum, not payload.
        if self.cursor + n + 8 > self.bytes.len() {
            return Err(Error::CorruptCheckpoint("unexpected end of file".into()));
        }
        let s = &self.bytes[self.cursor..self.cursor + n];
        self.cursor += n;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len().saturating_sub(self.cursor + 8)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
