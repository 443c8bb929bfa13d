//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "CSADCKPT"
//! version    u32      1
//! header_len u64
//! header     header_len bytes of UTF-8 JSON:
//!            {"seed": u64, "arch": ArchSpec,
//!             "params": [{"name": str, "shape": [usize]}, ...]}
//! payload    for each header param in order: product(shape) x f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_bundle, ArchSpec, ModelBundle};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CSADCKPT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    seed: u64,
    arch: ArchSpec,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn write_checkpoint<W: Write>(bundle: &ModelBundle, mut w: W) -> Result<()> {
    let params = bundle.all_params();
    let header = Header {
        seed: bundle.seed,
        arch: bundle.arch.clone(),
        params: params
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for p in params {
        for v in p.tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModelBundle> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("checkpoint: truncated magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("checkpoint: bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)
        .map_err(|_| Error::Format("checkpoint: truncated version".into()))?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(Error::Format(format!(
            "checkpoint: unsupported version {version}"
        )));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)
        .map_err(|_| Error::Format("checkpoint: truncated header length".into()))?;
    let len = u64::from_le_bytes(b8) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)
        .map_err(|_| Error::Format("checkpoint: truncated header".into()))?;
    let header: Header = serde_json::from_slice(&json)?;

    let mut bundle = build_bundle(&header.arch, header.seed)?;
    let mut params = bundle.all_params_mut();
    if params.len() != header.params.len() {
        return Err(Error::Format(format!(
            "checkpoint lists {} parameters, architecture has {}",
            header.params.len(),
            params.len()
        )));
    }
    for (p, entry) in params.iter_mut().zip(&header.params) {
        if p.name != entry.name || p.tensor.shape() != entry.shape.as_slice() {
            return Err(Error::Format(format!(
                "checkpoint entry {} {:?} does not match {} {:?}",
                entry.name,
                entry.shape,
                p.name,
                p.tensor.shape()
            )));
        }
        for v in p.tensor.data_mut() {
            r.read_exact(&mut b8)
                .map_err(|_| Error::Format(format!("checkpoint: truncated {}", entry.name)))?;
            *v = f64::from_le_bytes(b8);
        }
    }
    Ok(bundle)
}

pub fn save_checkpoint(bundle: &ModelBundle, path: &Path) -> Result<()> {
    write_checkpoint(bundle, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelBundle> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
