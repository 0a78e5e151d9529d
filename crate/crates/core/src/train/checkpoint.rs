use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec, ParamStore};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"LFNT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A self-describing snapshot of a model and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub class_names: Vec<String>,
    pub config: Option<TrainConfig>,
    pub epoch: usize,
    pub params: ParamStore,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct Metadata {
    spec: ModelSpec,
    class_names: Vec<String>,
    config: Option<TrainConfig>,
    epoch: usize,
    parameter_count: usize,
    checksum: u64,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Model> {
        Model::new(self.spec.clone())
    }

    /// Header, JSON metadata and little-endian f32 payload.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let model = self.model()?;
        model.check_params(&self.params)?;
        if self.class_names.len() != self.spec.num_classes {
            return Err(Error::config(format!(
                "{} class names for {} model outputs",
                self.class_names.len(),
                self.spec.num_classes
            )));
        }
        let values = self.params.flat_values();
        let meta = serde_json::to_vec(&Metadata {
            spec: self.spec.clone(),
            class_names: self.class_names.clone(),
            config: self.config.clone(),
            epoch: self.epoch,
            parameter_count: values.len(),
            checksum: self.params.checksum(),
        })?;
        let mut out = Vec::with_capacity(24 + meta.len() + values.len() * 4);
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&((values.len() * 4) as u64).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Corrupt(format!("bad magic {magic:?}, expected \"LFNT\"")));
        }
        let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Corrupt(format!(
                "unsupported version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let meta_len = r.len_field("metadata length")?;
        let meta: Metadata = serde_json::from_slice(r.take(meta_len, "metadata")?)
            .map_err(|e| Error::Corrupt(format!("metadata is not valid: {e}")))?;
        let payload_len = r.len_field("payload length")?;
        let payload = r.take(payload_len, "payload")?;
        if r.pos != bytes.len() {
            return Err(Error::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let model = Model::new(meta.spec.clone()).map_err(|e| Error::Corrupt(format!("stored model is invalid: {e}")))?;
        let (total, _) = model.count_parameters();
        if payload_len != total * 4 || meta.parameter_count != total {
            return Err(Error::Corrupt(format!(
                "payload holds {payload_len} bytes but the model needs {}",
                total * 4
            )));
        }
        if meta.class_names.len() != meta.spec.num_classes {
            return Err(Error::Corrupt(format!(
                "{} class names for {} outputs",
                meta.class_names.len(),
                meta.spec.num_classes
            )));
        }
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let params = ParamStore::from_flat(model.slots(), &values)?;
        if params.checksum() != meta.checksum {
            return Err(Error::Corrupt("parameter checksum mismatch".into()));
        }
        Ok(Self {
            spec: meta.spec,
            class_names: meta.class_names,
            config: meta.config,
            epoch: meta.epoch,
            params,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Corrupt(format!(
                "truncated while reading {what}: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn len_field(&mut self, what: &str) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Corrupt(format!("{what} {v} is too large")))
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    fs::write(path, checkpoint.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
