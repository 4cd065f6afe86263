//! Versioned binary checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic    8 bytes  "PCOUNET\0"
//! version  u32
//! header   u32 length + JSON {config, dtype, meta}
//! count    u32 number of tensors
//! tensor   u16 name length, name, u8 rank, u32 dims, f32 data
//! ```
//!
//! Files are written to a sibling temporary path and renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::model::{UNet, UNetConfig};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PCOUNET\0";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header<M> {
    config: UNetConfig,
    dtype: String,
    meta: M,
}

pub fn save_checkpoint<M: Serialize>(path: &Path, model: &UNet<f32>, meta: &M) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        config: *model.config(),
        dtype: "f32".to_string(),
        meta,
    })?;
    let mut buf = Vec::with_capacity(model.param_count() * 4 + header.len() + 1024);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(model.param_specs().len() as u32).to_le_bytes());
    for spec in model.param_specs() {
        buf.extend_from_slice(&(spec.name.len() as u16).to_le_bytes());
        buf.extend_from_slice(spec.name.as_bytes());
        buf.push(spec.shape.len() as u8);
        for &d in &spec.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &model.params()[spec.range()] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &buf)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |source| Error::Io { path: p, source }
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(io(&tmp))?;
    f.write_all(bytes).map_err(io(&tmp))?;
    f.sync_all().map_err(io(&tmp))?;
    drop(f);
    fs::rename(&tmp, path).map_err(io(path))
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Checkpoint {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

/// Loads a checkpoint. With `expected` set, any config difference is an error.
pub fn load_checkpoint<M: DeserializeOwned>(
    path: &Path,
    expected: Option<&UNetConfig>,
) -> Result<(UNet<f32>, M)> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut r = Reader {
        path,
        bytes: &bytes,
        pos: 0,
    };
    if r.take(8)? != MAGIC {
        return Err(r.fail("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.fail(format!("unsupported version {version}")));
    }
    let hlen = r.u32()? as usize;
    let header: Header<M> =
        serde_json::from_slice(r.take(hlen)?).map_err(|e| r.fail(format!("header: {e}")))?;
    if header.dtype != "f32" {
        return Err(r.fail(format!("unsupported dtype {}", header.dtype)));
    }
    if let Some(want) = expected {
        if *want != header.config {
            return Err(Error::ConfigMismatch {
                expected: format!("{want:?}"),
                found: format!("{:?}", header.config),
            });
        }
    }
    let mut model = UNet::<f32>::zeroed(header.config).map_err(|e| r.fail(e.to_string()))?;
    let specs = model.param_specs().to_vec();
    let count = r.u32()? as usize;
    if count != specs.len() {
        return Err(r.fail(format!("{count} tensors, layout needs {}", specs.len())));
    }
    for spec in &specs {
        let nlen = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
        let name =
            std::str::from_utf8(r.take(nlen)?).map_err(|_| r.fail("tensor name not UTF-8"))?;
        if name != spec.name {
            return Err(r.fail(format!("tensor {name:?} where {:?} expected", spec.name)));
        }
        let rank = r.take(1)?[0] as usize;
        let dims = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if dims != spec.shape {
            return Err(r.fail(format!(
                "tensor {name} has shape {dims:?}, expected {:?}",
                spec.shape
            )));
        }
        let data = r.take(spec.len() * 4)?;
        for (dst, chunk) in model.params_mut()[spec.range()]
            .iter_mut()
            .zip(data.chunks_exact(4))
        {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
    }
    if r.pos != bytes.len() {
        return Err(r.fail(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((model, header.meta))
}
