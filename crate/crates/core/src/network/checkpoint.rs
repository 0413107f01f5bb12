//! Binary parameter container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, JSON
//! header, `u64` parameter count, then per parameter: `u32` name length,
//! UTF-8 name, `u8` trainable flag, `u32` rank, `u64` dims, `f64` values.
//! Integers and floats are little-endian.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use scd_autograd::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::datamodel::PaletteEntry;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SCDCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model_config: ModelConfig,
    pub epoch: usize,
    /// Evaluation summary at save time, keyed by metric name.
    pub metrics: BTreeMap<String, f64>,
    pub palette: Option<Vec<PaletteEntry>>,
}

#[derive(Clone, Debug)]
pub struct StoredParam {
    pub name: String,
    pub trainable: bool,
    pub value: Tensor,
}

fn ckpt_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn write_checkpoint(path: &Path, header: &CheckpointHeader, store: &ParamStore) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let json = serde_json::to_vec(header)?;
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(MAGIC)?;
    put(&FORMAT_VERSION.to_le_bytes())?;
    put(&(json.len() as u64).to_le_bytes())?;
    put(&json)?;
    put(&(store.len() as u64).to_le_bytes())?;
    for (_, p) in store.iter() {
        put(&(p.name.len() as u32).to_le_bytes())?;
        put(p.name.as_bytes())?;
        put(&[u8::from(p.trainable)])?;
        put(&(p.value.rank() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            put(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(p.value.numel() * 8);
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        put(&buf)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    inner: BufReader<File>,
    path: &'a Path,
}

impl Reader<'_> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| ckpt_err(self.path, format!("truncated file: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.bytes(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.bytes(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn len(&mut self, limit: u64, what: &str) -> Result<usize> {
        let n = self.u64()?;
        if n > limit {
            return Err(ckpt_err(self.path, format!("implausible {what} {n}")));
        }
        Ok(n as usize)
    }
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<StoredParam>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
        path,
    };
    if r.bytes(8)? != MAGIC {
        return Err(ckpt_err(path, "not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(ckpt_err(
            path,
            format!("unsupported format version {version}"),
        ));
    }
    let header_len = r.len(1 << 24, "header length")?;
    let header: CheckpointHeader = serde_json::from_slice(&r.bytes(header_len)?)
        .map_err(|e| ckpt_err(path, format!("header: {e}")))?;
    let count = r.len(1 << 20, "parameter count")?;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.bytes(name_len)?)
            .map_err(|_| ckpt_err(path, "parameter name is not UTF-8"))?;
        let trainable = r.bytes(1)?[0] != 0;
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(ckpt_err(path, format!("{name}: implausible rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| r.len(1 << 32, "dimension"))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = r.bytes(numel * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let value = Tensor::new(&shape, data)?;
        params.push(StoredParam {
            name,
            trainable,
            value,
        });
    }
    Ok((header, params))
}

/// Copies stored values into `store` by name. With `require_all`, every
/// stored and every existing parameter must be matched.
pub fn copy_into_store(
    path: &Path,
    params: &[StoredParam],
    store: &mut ParamStore,
    filter: impl Fn(&str) -> bool,
    require_all: bool,
) -> Result<usize> {
    let mut copied = 0;
    for p in params.iter().filter(|p| filter(&p.name)) {
        let Some(id) = store.find(&p.name) else {
            if require_all {
                return Err(ckpt_err(path, format!("unexpected parameter {}", p.name)));
            }
            continue;
        };
        if store.get(id).shape() != p.value.shape() {
            return Err(ckpt_err(
                path,
                format!(
                    "{}: stored shape {:?}, model expects {:?}",
                    p.name,
                    p.value.shape(),
                    store.get(id).shape()
                ),
            ));
        }
        store.set(id, p.value.clone())?;
        copied += 1;
    }
    if require_all && copied != store.len() {
        return Err(ckpt_err(
            path,
            format!("checkpoint holds {copied} of {} parameters", store.len()),
        ));
    }
    Ok(copied)
}
