//! Checkpoint archives: named little-endian tensors plus one JSON metadata entry.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype, View};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Metadata key holding the JSON [`CheckpointMeta`].
pub const META_KEY: &str = "uvcgan2";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Train,
    Pretrain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    /// Hex-encoded 32-byte ChaCha seed.
    pub seed: String,
    pub stream: u64,
    /// Decimal, since the position does not fit in 64 bits.
    pub word_pos: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: CheckpointKind,
    pub config: String,
    pub config_hash: String,
    pub model_hash: String,
    pub generator_hash: String,
    pub iteration: u64,
    pub rng: Option<RngState>,
    pub opt_g_steps: u64,
    pub opt_d_steps: u64,
    /// Feature caches are never stored; a resumed run starts with empty caches.
    pub caches_serialized: bool,
}

struct Blob {
    dtype: Dtype,
    shape: Vec<usize>,
    data: Vec<u8>,
}

impl View for &Blob {
    fn dtype(&self) -> Dtype {
        self.dtype
    }
    fn shape(&self) -> &[usize] {
        &self.shape
    }
    fn data(&self) -> Cow<'_, [u8]> {
        Cow::Borrowed(&self.data)
    }
    fn data_len(&self) -> usize {
        self.data.len()
    }
}

fn to_blob(t: &Tensor) -> Result<Blob> {
    let flat = t.flatten_all()?;
    let (dtype, data) = match t.dtype() {
        DType::F32 => (Dtype::F32, flat.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect()),
        DType::F64 => (Dtype::F64, flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect()),
        other => return Err(Error::Checkpoint(format!("unsupported tensor type {other:?}"))),
    };
    Ok(Blob {
        dtype,
        shape: t.dims().to_vec(),
        data,
    })
}

/// Writes `tensors` and `meta` to `path` (via a temporary file and rename).
pub fn write_archive(path: &Path, tensors: &BTreeMap<String, Tensor>, meta: &CheckpointMeta) -> Result<()> {
    let blobs = tensors
        .iter()
        .map(|(k, t)| Ok((k.clone(), to_blob(t)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let mut info = HashMap::new();
    info.insert(META_KEY.to_string(), serde_json::to_string(meta)?);
    let bytes = safetensors::serialize(blobs.iter().map(|(k, b)| (k.as_str(), b)), Some(info))
        .map_err(|e| Error::Checkpoint(format!("serializing {}: {e}", path.display())))?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
}

/// Tensors and metadata read back from an archive.
pub struct Archive {
    pub meta: CheckpointMeta,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Archive {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Missing(path.to_path_buf()),
            _ => Error::io(format!("reading {}", path.display()), e),
        })?;
        let bad = |e: safetensors::SafeTensorError| Error::Checkpoint(format!("{}: {e}", path.display()));
        let (_, header) = SafeTensors::read_metadata(&bytes).map_err(bad)?;
        let meta_json = header
            .metadata()
            .as_ref()
            .and_then(|m| m.get(META_KEY))
            .ok_or_else(|| Error::Checkpoint(format!("{} has no {META_KEY} metadata", path.display())))?;
        let meta: CheckpointMeta = serde_json::from_str(meta_json)?;
        let st = SafeTensors::deserialize(&bytes).map_err(bad)?;
        let mut tensors = BTreeMap::new();
        for (name, view) in st.tensors() {
            let dtype = match view.dtype() {
                Dtype::F32 => DType::F32,
                Dtype::F64 => DType::F64,
                other => return Err(Error::Checkpoint(format!("tensor {name} has unsupported type {other:?}"))),
            };
            let t = Tensor::from_raw_buffer(view.data(), dtype, view.shape(), &Device::Cpu)?;
            tensors.insert(name, t);
        }
        Ok(Self { meta, tensors })
    }

    pub fn get(&self, name: &str) -> Option<Tensor> {
        self.tensors.get(name).cloned()
    }

    /// Looks up `prefix` + `name`.
    pub fn getter<'a>(&'a self, prefix: &'a str) -> impl Fn(&str) -> Option<Tensor> + 'a {
        move |name| self.get(&format!("{prefix}{name}"))
    }
}

/// Parameters and buffers of `store` under `prefix`.
pub fn store_tensors(prefix: &str, store: &ParamStore, out: &mut BTreeMap<String, Tensor>) {
    for (k, v) in store.params().iter().chain(store.buffers()) {
        out.insert(format!("{prefix}{k}"), v.as_tensor().clone());
    }
}

/// Overwrites every parameter and buffer of `store` from `get`; all must be present.
pub fn load_store(store: &ParamStore, get: &dyn Fn(&str) -> Option<Tensor>) -> Result<()> {
    for (name, var) in store.params().iter().chain(store.buffers()) {
        let t = get(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if t.dims() != var.dims() {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                t.dims(),
                var.dims()
            )));
        }
        crate::params::assign(var, &t)?;
    }
    Ok(())
}
