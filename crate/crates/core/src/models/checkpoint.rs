//! Model checkpoints: versioned header, config echo, then little-endian f32
//! parameters. A load reproduces forward outputs bit-exactly because training
//! snaps final parameters to f32 precision.

use std::path::Path;

use crate::error::{PipelineError, Result};

use super::{Model, ModelConfig};

const MAGIC: &[u8; 4] = b"MEAC";
const VERSION: u32 = 1;

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let cfg_json =
        serde_json::to_vec(&model.cfg).map_err(|e| PipelineError::Format(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(cfg_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg_json);
    out.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    for &p in &model.params {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let err = |m: &str| PipelineError::Format(format!("checkpoint: {m}"));
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(err("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(err(&format!("unsupported version {version}")));
    }
    let cfg_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cfg_end = 12usize
        .checked_add(cfg_len)
        .ok_or_else(|| err("config length overflow"))?;
    if bytes.len() < cfg_end + 8 {
        return Err(err("truncated header"));
    }
    let cfg: ModelConfig = serde_json::from_slice(&bytes[12..cfg_end])
        .map_err(|e| PipelineError::Format(format!("checkpoint config: {e}")))?;
    cfg.validate()?;
    let n = u64::from_le_bytes(bytes[cfg_end..cfg_end + 8].try_into().unwrap()) as usize;
    if n != cfg.n_params() {
        return Err(err(&format!(
            "parameter count {n} does not match config ({})",
            cfg.n_params()
        )));
    }
    let body = &bytes[cfg_end + 8..];
    if body.len() != n * 4 {
        return Err(err(&format!("body length {} != {}", body.len(), n * 4)));
    }
    let mut params = Vec::with_capacity(n);
    for chunk in body.chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(err("non-finite parameter"));
        }
        params.push(v as f64);
    }
    Ok(Model { cfg, params })
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
        }
    }
    std::fs::write(path, to_bytes(model)?).map_err(|e| PipelineError::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    from_bytes(&bytes)
}
