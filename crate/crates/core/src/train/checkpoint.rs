//! Versioned checkpoint files: a TOML header (configs plus a tensor index
//! of name/shape/offset) separated from a raw little-endian f32 payload by
//! an `@payload` line. Loading into a model validates the configuration and
//! every tensor's shape.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::net::{Model, ModelConfig};
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;
const PAYLOAD_MARKER: &[u8] = b"\n@payload\n";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset in f32 elements from the start of the payload.
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    epoch: usize,
    adam_t: u64,
    model: ModelConfig,
    train: TrainConfig,
    tensors: Vec<TensorEntry>,
}

/// In-memory checkpoint: everything needed to reproduce forward outputs
/// bit-exactly (parameters, batch-norm running statistics) plus optimizer
/// state for resuming.
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub epoch: usize,
    pub adam_t: u64,
    tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    /// Snapshot a model and its optimizer state. Values are stored at f32
    /// width regardless of the run's numeric mode.
    pub fn capture<T: Scalar>(
        model: &Model<T>,
        opt: &AdamState<T>,
        train_config: &TrainConfig,
        epoch: usize,
    ) -> Checkpoint {
        let mut tensors: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
        let params = model.named_parameters();
        for (name, p) in &params {
            tensors.push((
                name.clone(),
                p.shape().to_vec(),
                p.data().iter().map(|&v| v.to_f32()).collect(),
            ));
        }
        for (name, bn) in model.bn_states() {
            let rm: Vec<f32> = bn.running_mean.borrow().iter().map(|&v| v.to_f32()).collect();
            let rv: Vec<f32> = bn.running_var.borrow().iter().map(|&v| v.to_f32()).collect();
            let c = rm.len();
            tensors.push((format!("{name}.running_mean"), vec![c], rm));
            tensors.push((format!("{name}.running_var"), vec![c], rv));
        }
        for (i, (name, p)) in params.iter().enumerate() {
            tensors.push((
                format!("adam.m.{name}"),
                p.shape().to_vec(),
                opt.m[i].iter().map(|&v| v.to_f32()).collect(),
            ));
            tensors.push((
                format!("adam.v.{name}"),
                p.shape().to_vec(),
                opt.v[i].iter().map(|&v| v.to_f32()).collect(),
            ));
        }
        Checkpoint {
            model_config: model.config().clone(),
            train_config: train_config.clone(),
            epoch,
            adam_t: opt.t,
            tensors,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut offset = 0usize;
        let entries: Vec<TensorEntry> = self
            .tensors
            .iter()
            .map(|(name, shape, data)| {
                let e = TensorEntry {
                    name: name.clone(),
                    shape: shape.clone(),
                    offset,
                };
                offset += data.len();
                e
            })
            .collect();
        let header = Header {
            version: CHECKPOINT_VERSION,
            epoch: self.epoch,
            adam_t: self.adam_t,
            model: self.model_config.clone(),
            train: self.train_config.clone(),
            tensors: entries,
        };
        let header_text = toml::to_string(&header)
            .map_err(|e| Error::Checkpoint(format!("cannot serialize header: {e}")))?;
        let mut bytes = header_text.into_bytes();
        bytes.extend_from_slice(PAYLOAD_MARKER);
        for (_, _, data) in &self.tensors {
            for v in data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        let marker = bytes
            .windows(PAYLOAD_MARKER.len())
            .position(|w| w == PAYLOAD_MARKER)
            .ok_or_else(|| Error::Checkpoint("missing @payload marker".to_string()))?;
        let header_text = std::str::from_utf8(&bytes[..marker])
            .map_err(|_| Error::Checkpoint("header is not UTF-8".to_string()))?;
        let header: Header = toml::from_str(header_text)
            .map_err(|e| Error::Checkpoint(format!("malformed header: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "version {} not supported (expected {CHECKPOINT_VERSION})",
                header.version
            )));
        }
        let payload = &bytes[marker + PAYLOAD_MARKER.len()..];
        if payload.len() % 4 != 0 {
            return Err(Error::Checkpoint("payload length not a multiple of 4".to_string()));
        }
        let floats: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let numel: usize = entry.shape.iter().product();
            let end = entry.offset + numel;
            if end > floats.len() {
                return Err(Error::Checkpoint(format!(
                    "truncated payload: {} wants {numel} values at offset {}, payload has {}",
                    entry.name,
                    entry.offset,
                    floats.len()
                )));
            }
            tensors.push((
                entry.name.clone(),
                entry.shape.clone(),
                floats[entry.offset..end].to_vec(),
            ));
        }
        Ok(Checkpoint {
            model_config: header.model,
            train_config: header.train,
            epoch: header.epoch,
            adam_t: header.adam_t,
            tensors,
        })
    }

    fn entry(&self, name: &str) -> Option<&(String, Vec<usize>, Vec<f32>)> {
        self.tensors.iter().find(|(n, _, _)| n == name)
    }

    /// Write this checkpoint's values into an existing model and optimizer.
    /// The model's configuration must match exactly.
    pub fn restore_into<T: Scalar>(
        &self,
        model: &Model<T>,
        opt: &mut AdamState<T>,
    ) -> Result<()> {
        if model.config() != &self.model_config {
            return Err(Error::Checkpoint(format!(
                "configuration mismatch: checkpoint was trained with {:?}, model is {:?}",
                self.model_config,
                model.config()
            )));
        }
        let params = model.named_parameters();
        for (name, p) in &params {
            let (_, shape, data) = self.entry(name).ok_or_else(|| {
                Error::Checkpoint(format!("parameter {name} missing from checkpoint"))
            })?;
            if shape != p.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: checkpoint shape {shape:?} does not match model {:?}",
                    p.shape()
                )));
            }
            let mut dst = p.data_mut();
            for (d, &s) in dst.iter_mut().zip(data.iter()) {
                *d = T::from_f32(s);
            }
        }
        for (name, bn) in model.bn_states() {
            for (suffix, slot) in [
                ("running_mean", &bn.running_mean),
                ("running_var", &bn.running_var),
            ] {
                let key = format!("{name}.{suffix}");
                let (_, shape, data) = self.entry(&key).ok_or_else(|| {
                    Error::Checkpoint(format!("buffer {key} missing from checkpoint"))
                })?;
                if shape.as_slice() != [bn.channels()] {
                    return Err(Error::Checkpoint(format!(
                        "buffer {key}: checkpoint shape {shape:?} does not match [{}]",
                        bn.channels()
                    )));
                }
                let mut dst = slot.borrow_mut();
                for (d, &s) in dst.iter_mut().zip(data.iter()) {
                    *d = T::from_f32(s);
                }
            }
        }
        for (i, (name, p)) in params.iter().enumerate() {
            for (prefix, slot) in [("adam.m", &mut opt.m[i]), ("adam.v", &mut opt.v[i])] {
                let key = format!("{prefix}.{name}");
                let (_, shape, data) = self.entry(&key).ok_or_else(|| {
                    Error::Checkpoint(format!("optimizer tensor {key} missing"))
                })?;
                if shape != p.shape() {
                    return Err(Error::Checkpoint(format!(
                        "optimizer tensor {key}: shape {shape:?} does not match {:?}",
                        p.shape()
                    )));
                }
                for (d, &s) in slot.iter_mut().zip(data.iter()) {
                    *d = T::from_f32(s);
                }
            }
        }
        opt.t = self.adam_t;
        Ok(())
    }

    /// Rebuild a model and optimizer entirely from the checkpoint.
    pub fn restore<T: Scalar>(&self) -> Result<(Model<T>, AdamState<T>)> {
        let model = Model::init(&self.model_config)?;
        let mut opt = AdamState::new(
            &model.named_parameters(),
            self.train_config.beta1,
            self.train_config.beta2,
            self.train_config.adam_eps,
        );
        self.restore_into(&model, &mut opt)?;
        Ok((model, opt))
    }
}
