//! Run configuration: a TOML file mirroring the model and training configs,
//! plus paths. Flags override file values; every run writes its fully
//! resolved configuration next to its outputs.

use std::path::{Path, PathBuf};

use dualstream::net::ModelConfig;
use dualstream::train::TrainConfig;
use dualstream::{Error, Result};
use serde::{Deserialize, Serialize};

/// Environment variable that re-roots relative output directories.
pub const OUT_DIR_ENV: &str = "DUALSTREAM_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    F32,
    F64,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Mode> {
        match s {
            "f32" => Ok(Mode::F32),
            "f64" => Ok(Mode::F64),
            other => Err(Error::Config(format!(
                "unknown numeric mode `{other}` (expected f32 or f64)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mode: Mode,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::F32,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("bad config: {e}")))
    }

    /// Output directory with the environment root override applied.
    pub fn resolved_out_dir(&self) -> Result<PathBuf> {
        let out = self
            .paths
            .out_dir
            .clone()
            .ok_or_else(|| Error::Config("no output directory configured".to_string()))?;
        match std::env::var_os(OUT_DIR_ENV) {
            Some(root) if out.is_relative() => Ok(PathBuf::from(root).join(out)),
            _ => Ok(out),
        }
    }

    pub fn manifest_path(&self) -> Result<&Path> {
        self.paths
            .manifest
            .as_deref()
            .ok_or_else(|| Error::Config("no manifest configured".to_string()))
    }

    pub fn checkpoint_path(&self) -> Result<&Path> {
        self.paths
            .checkpoint
            .as_deref()
            .ok_or_else(|| Error::Config("no checkpoint configured".to_string()))
    }

    /// Write the fully resolved configuration into the output directory.
    pub fn write_resolved(&self, out_dir: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("cannot serialize config: {e}")))?;
        std::fs::create_dir_all(out_dir)?;
        std::fs::write(out_dir.join("resolved-config.toml"), text)?;
        Ok(())
    }
}

/// The commented template written by `init-config`.
pub fn default_config_template() -> String {
    let default = RunConfig::default();
    format!(
        "\
# dualstream run configuration
#
# mode: numeric width of the whole run. f32 trains fast; f64 is for
# verification and gradient checking.
mode = \"f32\"

[model]
# input side length s; images are resized to 3 x s x s (multiple of 32)
input_side = {input_side}
# attention heads h (embed_width must divide evenly)
heads = {heads}
embed_width = {embed_width}
# encoder blocks between the streams, each with its own parameters
encoder_repeats = {encoder_repeats}
mlp_ratio = {mlp_ratio}
# channel widths of the three downsampling stages before attention
channel_plan = [64, 128, 256]
# channel widths of the two stages after attention
post_plan = [256, 256]
# ablation switches
residual_stream = true
content_stream = true
cross_attention = true
# parameter initialization seed
seed = {model_seed}

[train]
lr0 = {lr0:e}
batch_size = {batch_size}
epochs = {epochs}
# multiply the learning rate by lr_decay every lr_decay_every epochs
lr_decay = {lr_decay}
lr_decay_every = {lr_decay_every}
beta1 = {beta1}
beta2 = {beta2}
adam_eps = {adam_eps:e}
# shuffle seed; batch order is a pure function of (seed, epoch)
seed = {train_seed}

[paths]
# manifest CSV with header `path,label,split` (label: 0 photo, 1 generated)
manifest = \"data/manifest.csv\"
# run outputs: resolved config, logs, checkpoints, reports
out_dir = \"runs/default\"
# checkpoint to evaluate or resume from (used by eval/robustness)
# checkpoint = \"runs/default/best.ckpt\"
",
        input_side = default.model.input_side,
        heads = default.model.heads,
        embed_width = default.model.embed_width,
        encoder_repeats = default.model.encoder_repeats,
        mlp_ratio = default.model.mlp_ratio,
        model_seed = default.model.seed,
        lr0 = default.train.lr0,
        batch_size = default.train.batch_size,
        epochs = default.train.epochs,
        lr_decay = default.train.lr_decay,
        lr_decay_every = default.train.lr_decay_every,
        beta1 = default.train.beta1,
        beta2 = default.train.beta2,
        adam_eps = default.train.adam_eps,
        train_seed = default.train.seed,
    )
}
