//! Checkpoint container: versioned header, model config as structured text,
//! then every named parameter as (name, shape, little-endian f64 payload).
//! Round-trips are bit-exact.

use crate::data::DataError;
use crate::model::{Model, ModelConfig, ModelKind};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

const CKPT_MAGIC: &[u8; 8] = b"IBPDCKP1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: ModelKind,
    config: ModelConfig,
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), DataError> {
    let io_err = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    let header = serde_json::to_vec(&Header {
        format_version: FORMAT_VERSION,
        kind: model.kind,
        config: model.cfg.clone(),
    })
    .expect("header serializes");
    f.write_all(CKPT_MAGIC).map_err(io_err)?;
    f.write_all(&(header.len() as u32).to_le_bytes()).map_err(io_err)?;
    f.write_all(&header).map_err(io_err)?;
    f.write_all(&(model.params.len() as u32).to_le_bytes()).map_err(io_err)?;
    for (_, p) in model.params.iter() {
        let name = p.name.as_bytes();
        f.write_all(&(name.len() as u16).to_le_bytes()).map_err(io_err)?;
        f.write_all(name).map_err(io_err)?;
        let shape = p.value.shape();
        f.write_all(&[shape.len() as u8]).map_err(io_err)?;
        for &d in shape {
            f.write_all(&(d as u32).to_le_bytes()).map_err(io_err)?;
        }
        for v in p.value.data() {
            f.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    f.flush().map_err(io_err)
}

pub fn load_checkpoint(path: &Path) -> Result<Model, DataError> {
    let p = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|source| DataError::Io {
        path: p.clone(),
        source,
    })?;
    let mut cur = crate::data::Cursor::new(&bytes, &p);
    let magic = cur.take(8)?;
    if magic != CKPT_MAGIC {
        return Err(DataError::Format {
            path: p.clone(),
            detail: format!("bad checkpoint magic {magic:?}"),
        });
    }
    let header_len = cur.u32_le()? as usize;
    let header: Header =
        serde_json::from_slice(cur.take(header_len)?).map_err(|e| DataError::Format {
            path: p.clone(),
            detail: format!("header json: {e}"),
        })?;
    if header.format_version != FORMAT_VERSION {
        return Err(DataError::Format {
            path: p.clone(),
            detail: format!(
                "unsupported checkpoint version {} (expected {FORMAT_VERSION})",
                header.format_version
            ),
        });
    }
    let n_params = cur.u32_le()? as usize;
    let mut values = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name_len = u16::from_le_bytes(cur.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec()).map_err(|e| {
            DataError::Format {
                path: p.clone(),
                detail: format!("parameter name utf8: {e}"),
            }
        })?;
        let ndim = cur.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32_le()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes")));
        }
        let tensor = Tensor::from_vec(shape, data).map_err(|e| DataError::Format {
            path: p.clone(),
            detail: format!("parameter {name}: {e}"),
        })?;
        values.push((name, tensor));
    }
    Model::from_parts(header.kind, header.config, values).map_err(|e| DataError::Format {
        path: p.clone(),
        detail: e.to_string(),
    })
}
