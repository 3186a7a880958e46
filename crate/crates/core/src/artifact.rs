//! On-disk artifacts: versioned binary policy checkpoints bound to the
//! environment configuration they were trained against, serialized model
//! files, and run manifests listing every output of a command.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::correlation::{ConditionalPrior, CorrelationStructure};
use crate::ddmac::{DdmacNets, TrainConfig};
use crate::discretization::DeteriorationModel;
use crate::environment::{EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::reliability::SystemModel;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DPCK";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Canonical byte encoding used for hashing: JSON with struct-declaration
/// field order, which serde_json emits deterministically.
pub fn canonical_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    serde_json::to_vec(value).map_err(|e| Error::Config(format!("serialization failed: {e}")))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash binding a checkpoint to the environment configuration it was
/// trained against.
pub fn env_config_hash(config: &EnvConfig) -> Result<String> {
    Ok(sha256_hex(&canonical_bytes(config)?))
}

/// Trained policy: networks, the training hyperparameters that produced
/// them, and the hash of the environment configuration they are valid for.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub env_hash: String,
    pub train_config: TrainConfig,
    pub nets: DdmacNets,
}

impl PolicyCheckpoint {
    pub fn new(env_config: &EnvConfig, train_config: TrainConfig, nets: DdmacNets) -> Result<Self> {
        Ok(PolicyCheckpoint { env_hash: env_config_hash(env_config)?, train_config, nets })
    }

    /// Versioned binary layout: 4-byte magic, version (u32 LE), payload
    /// length (u64 LE), JSON payload. Byte-identical for identical content.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let payload = canonical_bytes(self)?;
        let mut out = Vec::with_capacity(payload.len() + 16);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        let mut version = [0u8; 4];
        let mut len = [0u8; 8];
        r.read_exact(&mut magic)
            .and_then(|_| r.read_exact(&mut version))
            .and_then(|_| r.read_exact(&mut len))
            .map_err(|_| Error::Config("checkpoint truncated: header incomplete".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Config("not a policy checkpoint (bad magic bytes)".into()));
        }
        let version = u32::from_le_bytes(version);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let n = u64::from_le_bytes(len) as usize;
        if r.len() != n {
            return Err(Error::Config(format!(
                "checkpoint payload length mismatch: header says {n}, found {}",
                r.len()
            )));
        }
        serde_json::from_slice(r)
            .map_err(|e| Error::Config(format!("checkpoint payload unreadable: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path)
            .map_err(|e| Error::Config(format!("cannot create {}: {e}", path.display())))?;
        f.write_all(&bytes)
            .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    /// Rejects evaluation against an environment the policy was not trained
    /// for.
    pub fn verify_env(&self, config: &EnvConfig) -> Result<()> {
        let actual = env_config_hash(config)?;
        if actual != self.env_hash {
            return Err(Error::HashMismatch { expected: self.env_hash.clone(), found: actual });
        }
        Ok(())
    }
}

/// Serialized environment: everything needed to reconstruct an
/// `Environment` without rebuilding the transition tables.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub env_config: EnvConfig,
    pub model: DeteriorationModel,
    pub structure: CorrelationStructure,
    pub prior: ConditionalPrior,
    pub system: SystemModel,
}

impl ModelArtifact {
    pub fn from_environment(env: &Environment) -> Self {
        ModelArtifact {
            env_config: env.config.clone(),
            model: env.model.clone(),
            structure: env.structure.clone(),
            prior: env.prior.clone(),
            system: env.system.clone(),
        }
    }

    pub fn into_environment(self) -> Result<Environment> {
        Environment::new(self.env_config, self.model, self.structure, self.prior, self.system)
    }

    pub fn content_hash(&self) -> Result<String> {
        Ok(sha256_hex(&canonical_bytes(self)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Record of one CLI run: what produced it, the entropy it consumed, what
/// files it wrote, and how long it took.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub outputs: Vec<String>,
    pub timings_seconds: Vec<(String, f64)>,
    pub toolkit_version: String,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: String, seeds: Vec<u64>) -> Self {
        RunManifest {
            command: command.to_string(),
            config_hash,
            seeds,
            outputs: Vec::new(),
            timings_seconds: Vec::new(),
            toolkit_version: TOOLKIT_VERSION.to_string(),
        }
    }

    pub fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn record_timing(&mut self, label: &str, seconds: f64) {
        self.timings_seconds.push((label.to_string(), seconds));
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serialization failed: {e}")))?;
    fs::write(path, text)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{} unreadable: {e}", path.display())))
}
