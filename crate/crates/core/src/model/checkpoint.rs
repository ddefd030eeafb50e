//! Checkpoint archive.
//!
//! Layout: the format tag and a newline, a little-endian `u64` header length,
//! a JSON header (configs, step, seed and a table of named tensors), then the
//! tensor payload as little-endian `f64`s. Writes go to a temporary file
//! that is renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{init_params, DiscriminatorConfig, GeneratorConfig, ModelParams, Visit};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "chronochroma-ckpt-v1";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    generator: GeneratorConfig,
    discriminator: DiscriminatorConfig,
    step: u64,
    seed: u64,
    tensors: Vec<Entry>,
    extras: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

/// A loaded checkpoint: the model plus any auxiliary named vectors stored
/// alongside it (the trainer keeps optimizer moments there).
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub extras: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn extra(&self, name: &str) -> Option<&[f64]> {
        self.extras.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, extras: &[(String, Vec<f64>)]) -> Result<()> {
    let mut payload: Vec<f64> = Vec::new();
    let mut tensors = Vec::new();
    for (name, shape, values) in params.named_tensors() {
        tensors.push(Entry {
            name,
            shape,
            offset: payload.len(),
            len: values.len(),
        });
        payload.extend_from_slice(&values);
    }
    let mut extra_entries = Vec::new();
    for (name, values) in extras {
        extra_entries.push(Entry {
            name: name.clone(),
            shape: vec![values.len()],
            offset: payload.len(),
            len: values.len(),
        });
        payload.extend_from_slice(values);
    }
    let header = Header {
        format: CHECKPOINT_FORMAT.to_string(),
        generator: *params.generator.config(),
        discriminator: *params.discriminator.config(),
        step: params.step,
        seed: params.seed,
        tensors,
        extras: extra_entries,
    };
    let header = serde_json::to_vec(&header).map_err(|e| bad(path, e.to_string()))?;

    let mut bytes = Vec::with_capacity(CHECKPOINT_FORMAT.len() + 9 + header.len() + payload.len() * 8);
    bytes.extend_from_slice(CHECKPOINT_FORMAT.as_bytes());
    bytes.push(b'\n');
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    for v in &payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }

    let tmp = tmp_path(path);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let magic = CHECKPOINT_FORMAT.len() + 1;
    if bytes.len() < magic + 8 || &bytes[..magic - 1] != CHECKPOINT_FORMAT.as_bytes() || bytes[magic - 1] != b'\n' {
        return Err(bad(path, format!("not a {CHECKPOINT_FORMAT} archive")));
    }
    let header_len = u64::from_le_bytes(bytes[magic..magic + 8].try_into().expect("8 bytes")) as usize;
    let body = magic + 8;
    let header_end = body
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[body..header_end]).map_err(|e| bad(path, e.to_string()))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(bad(path, format!("unsupported format {}", header.format)));
    }
    let raw = &bytes[header_end..];
    if raw.len() % 8 != 0 {
        return Err(bad(path, "payload is not a whole number of f64 values"));
    }
    let payload: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let slice = |e: &Entry| -> Result<Vec<f64>> {
        payload
            .get(e.offset..e.offset + e.len)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| bad(path, format!("tensor {} out of bounds", e.name)))
    };

    let mut params = init_params(header.generator, header.discriminator, header.seed)?;
    params.step = header.step;
    let mut failure: Option<Error> = None;
    let mut seen = 0usize;
    let mut assign = |name: String, dst: &mut Vec<f64>| {
        if failure.is_some() {
            return;
        }
        let Some(entry) = header.tensors.iter().find(|e| e.name == name) else {
            failure = Some(bad(path, format!("missing tensor {name}")));
            return;
        };
        if entry.len != dst.len() {
            failure = Some(bad(
                path,
                format!("tensor {name} has {} values, model expects {}", entry.len, dst.len()),
            ));
            return;
        }
        match slice(entry) {
            Ok(v) if v.iter().all(|x| x.is_finite()) => {
                *dst = v;
                seen += 1;
            }
            Ok(_) => failure = Some(bad(path, format!("tensor {name} holds non-finite values"))),
            Err(e) => failure = Some(e),
        }
    };
    params.generator.visit_mut("generator", &mut assign);
    params.discriminator.visit_mut("discriminator", &mut assign);
    if let Some(e) = failure {
        return Err(e);
    }
    if seen != header.tensors.len() {
        return Err(bad(path, "archive holds tensors the model does not have"));
    }
    let extras = header
        .extras
        .iter()
        .map(|e| Ok((e.name.clone(), slice(e)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Checkpoint { params, extras })
}

/// Short content hash identifying a checkpoint file.
pub fn checkpoint_id(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(hex::encode(&digest[..8]))
}
