//! Command-line entry points: corpus generation, training, evaluation and
//! probes, and a tokenizer inspection utility. Every command is
//! deterministic given its flags and seed.

mod eval;
mod generate;
mod tokenize;
mod train;

pub use eval::cmd_eval;
pub use generate::cmd_generate;
pub use tokenize::cmd_tokenize;
pub use train::cmd_train;

use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use xval_lab::codec::Scheme;
use xval_lab::model::ModelConfig;
use xval_lab::training::TrainConfig;

/// Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

pub type Result<V> = std::result::Result<V, CliError>;

impl From<xval_lab::datagen::DatagenError> for CliError {
    fn from(e: xval_lab::datagen::DatagenError) -> Self {
        match e {
            xval_lab::datagen::DatagenError::UnknownDataset(_)
            | xval_lab::datagen::DatagenError::BadOodField(_) => CliError::Config(e.to_string()),
            xval_lab::datagen::DatagenError::Unstable(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<xval_lab::training::TrainError> for CliError {
    fn from(e: xval_lab::training::TrainError) -> Self {
        use xval_lab::training::TrainError::*;
        match e {
            BadConfig(_) | StepOutOfRange(..) => CliError::Config(e.to_string()),
            NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            Model(m) => CliError::from(m),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<xval_lab::model::ModelError> for CliError {
    fn from(e: xval_lab::model::ModelError) -> Self {
        use xval_lab::model::ModelError::*;
        match e {
            BadHeads(..) | ContextOverflow(..) => CliError::Config(e.to_string()),
            NonFinite { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<xval_lab::codec::CodecError> for CliError {
    fn from(e: xval_lab::codec::CodecError) -> Self {
        match e {
            xval_lab::codec::CodecError::Range(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<xval_lab::evaluation::EvalError> for CliError {
    fn from(e: xval_lab::evaluation::EvalError) -> Self {
        use xval_lab::evaluation::EvalError::*;
        match e {
            VocabMismatch { .. } | MissingField(..) | NeedsTextScheme => {
                CliError::Config(e.to_string())
            }
            Model(m) => CliError::from(m),
            Train(t) => CliError::from(t),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

/// User-facing training configuration file: `model` and `train` sections
/// mirroring the config structs field-for-field. Unknown fields are
/// rejected by name.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

pub fn read_config(path: &Path) -> Result<RunConfigFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let cfg: RunConfigFile =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config: {e}")))?;
    if cfg.model.mode != cfg.train.mode {
        return Err(CliError::Config(
            "model.mode and train.mode must agree".into(),
        ));
    }
    cfg.train.validate().map_err(CliError::from)?;
    Ok(cfg)
}

/// Snapshot persisted inside a run directory; enough to replay the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSnapshot {
    pub scheme: Scheme,
    pub data_dir: String,
    pub config: RunConfigFile,
    pub config_hash: String,
    pub vocab_hash: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    use std::io::Read;
    let mut f = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(xval_lab::codec::hex_digest(&hasher.finalize()))
}

pub fn sha256_str(s: &str) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(s.as_bytes());
    xval_lab::codec::hex_digest(&hasher.finalize())
}

/// Exclusive ownership of a run directory via a lock file, released on drop.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<RunLock> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("lock");
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(RunLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Data(
                format!("run directory {} is locked", dir.display()),
            )),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Most recent checkpoint in `dir/checkpoints`, by step number in the name.
pub fn latest_checkpoint(run_dir: &Path) -> Result<PathBuf> {
    let dir = run_dir.join("checkpoints");
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in std::fs::read_dir(&dir)
        .map_err(|e| CliError::Data(format!("no checkpoints in {}: {e}", dir.display())))?
    {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(step) = name
            .strip_prefix("step_")
            .and_then(|s| s.strip_suffix(".ckpt"))
            .and_then(|s| s.parse::<u64>().ok())
        {
            if best.as_ref().map_or(true, |(b, _)| step > *b) {
                best = Some((step, path));
            }
        }
    }
    best.map(|(_, p)| p)
        .ok_or_else(|| CliError::Data(format!("no checkpoints under {}", dir.display())))
}
