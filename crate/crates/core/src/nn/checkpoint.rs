//! Binary model checkpoints.
//!
//! Layout: 8 magic bytes, a little-endian u32 header length, a JSON header,
//! then raw little-endian f64 payloads. The header lists every parameter and
//! running-statistic buffer with its shape, in payload order, so a reader can
//! validate the file against the architecture before touching any floats.
//! Writing and re-reading a model reproduces its parameters bit for bit.

use super::{build, ModelInstance, ModelSpec, NamedParam};
use crate::error::{Error, Result};
use crate::seed::{self, domain};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

const MAGIC: &[u8; 8] = b"AGMODEL1";
const FORMAT: &str = "model-checkpoint";
const VERSION: u32 = 1;
/// Headers beyond this size indicate a corrupt or hostile file.
const MAX_HEADER_BYTES: u32 = 1 << 20;

#[derive(Serialize, Deserialize)]
struct EntryMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    spec: ModelSpec,
    frozen_prefix: usize,
    params: Vec<EntryMeta>,
    buffers: Vec<EntryMeta>,
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// The buffer list a model exposes: running mean then running variance for
/// each normalization layer, in layer order.
fn buffer_metas(model: &ModelInstance) -> Vec<EntryMeta> {
    let mut metas = Vec::with_capacity(2 * model.norms.len());
    for stats in &model.norms {
        metas.push(EntryMeta {
            name: format!("{}.running_mean", stats.name),
            shape: vec![stats.mean.len()],
        });
        metas.push(EntryMeta {
            name: format!("{}.running_var", stats.name),
            shape: vec![stats.var.len()],
        });
    }
    metas
}

fn write_f64s(w: &mut impl Write, data: &[f64]) -> std::io::Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)
}

fn read_f64s(r: &mut impl Read, len: usize, path: &Path, name: &str) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; len * 8];
    r.read_exact(&mut bytes)
        .map_err(|e| format_err(path, format!("payload `{name}` truncated: {e}")))?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn write_checkpoint(model: &ModelInstance, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        spec: model.spec.clone(),
        frozen_prefix: model.frozen_prefix,
        params: model
            .params
            .iter()
            .map(|p| EntryMeta {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
            })
            .collect(),
        buffers: buffer_metas(model),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| format_err(path, format!("header encoding failed: {e}")))?;
    if header_bytes.len() as u64 > MAX_HEADER_BYTES as u64 {
        return Err(format_err(path, "header exceeds size limit"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for p in &model.params {
        write_f64s(&mut w, &p.tensor.data())?;
    }
    for stats in &model.norms {
        write_f64s(&mut w, &stats.mean)?;
        write_f64s(&mut w, &stats.var)?;
    }
    w.flush()?;
    Ok(())
}

/// Load a checkpoint, rebuilding the layer plan from the stored spec and
/// refusing any file whose parameter or buffer listing disagrees with it.
pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ModelInstance> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|e| format_err(path, format!("missing magic: {e}")))?;
    if &magic != MAGIC {
        return Err(format_err(path, "bad magic; not a model checkpoint"));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)
        .map_err(|e| format_err(path, format!("missing header length: {e}")))?;
    let header_len = u32::from_le_bytes(len_bytes);
    if header_len == 0 || header_len > MAX_HEADER_BYTES {
        return Err(format_err(path, format!("implausible header length {header_len}")));
    }
    let mut header_bytes = vec![0u8; header_len as usize];
    r.read_exact(&mut header_bytes)
        .map_err(|e| format_err(path, format!("header truncated: {e}")))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| format_err(path, format!("header is not valid JSON: {e}")))?;

    if header.format != FORMAT {
        return Err(format_err(path, format!("unexpected format `{}`", header.format)));
    }
    if header.version != VERSION {
        return Err(format_err(path, format!("unsupported version {}", header.version)));
    }
    header.spec.validate()?;

    // Rebuild the plan; stored payloads replace every freshly drawn value.
    let rng = seed::rng(0, &[domain::INIT]);
    let (plan, params, norms) = build::build_plan(&header.spec, rng)?;
    let mut model = ModelInstance {
        spec: header.spec,
        plan: Arc::new(plan),
        params,
        norms,
        frozen_prefix: 0,
    };

    if header.params.len() != model.params.len() {
        return Err(format_err(
            path,
            format!(
                "header lists {} parameters, architecture has {}",
                header.params.len(),
                model.params.len()
            ),
        ));
    }
    for (meta, p) in header.params.iter().zip(&model.params) {
        if meta.name != p.name || meta.shape != p.tensor.shape() {
            return Err(format_err(
                path,
                format!(
                    "parameter mismatch: file has `{}` {:?}, architecture expects `{}` {:?}",
                    meta.name,
                    meta.shape,
                    p.name,
                    p.tensor.shape()
                ),
            ));
        }
    }
    let expect_buffers = buffer_metas(&model);
    if header.buffers.len() != expect_buffers.len() {
        return Err(format_err(
            path,
            format!(
                "header lists {} buffers, architecture has {}",
                header.buffers.len(),
                expect_buffers.len()
            ),
        ));
    }
    for (meta, want) in header.buffers.iter().zip(&expect_buffers) {
        if meta.name != want.name || meta.shape != want.shape {
            return Err(format_err(
                path,
                format!(
                    "buffer mismatch: file has `{}` {:?}, architecture expects `{}` {:?}",
                    meta.name, meta.shape, want.name, want.shape
                ),
            ));
        }
    }
    if header.frozen_prefix > model.params.len() {
        return Err(format_err(
            path,
            format!("frozen_prefix {} exceeds parameter count", header.frozen_prefix),
        ));
    }

    let loaded: Vec<NamedParam> = model
        .params
        .iter()
        .map(|p| {
            let data = read_f64s(&mut r, p.tensor.numel(), path, &p.name)?;
            Ok(NamedParam {
                name: p.name.clone(),
                tensor: Tensor::param(p.tensor.shape(), data)?,
            })
        })
        .collect::<Result<_>>()?;
    model.params = loaded;
    for i in 0..model.norms.len() {
        let c = model.norms[i].mean.len();
        let name = model.norms[i].name.clone();
        model.norms[i].mean = read_f64s(&mut r, c, path, &format!("{name}.running_mean"))?;
        model.norms[i].var = read_f64s(&mut r, c, path, &format!("{name}.running_var"))?;
    }
    model.frozen_prefix = header.frozen_prefix;

    let mut trailing = [0u8; 1];
    match r.read(&mut trailing) {
        Ok(0) => {}
        Ok(_) => return Err(format_err(path, "trailing bytes after payloads")),
        Err(e) => return Err(e.into()),
    }
    Ok(model)
}
