//! JSON checkpoints. Weight arrays are stored as base64 little-endian f64 and
//! covered by a SHA-256 checksum, so a truncated or edited file is rejected.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::learner::Learner;
use crate::nn::{Activation, Layer, MlpParams};

const FORMAT: &str = "formation-marl-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerDoc {
    inputs: usize,
    outputs: usize,
    activation: Activation,
    weights: String,
    bias: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetworkDoc {
    layers: Vec<LayerDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointDoc {
    format: String,
    version: u32,
    episode: usize,
    train_steps: u64,
    config: TrainConfig,
    actors: Vec<NetworkDoc>,
    critic: NetworkDoc,
    target_actors: Vec<NetworkDoc>,
    target_critic: NetworkDoc,
    sha256: String,
}

/// Networks plus the configuration they were trained with.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Number of completed training episodes.
    pub episode: usize,
    pub learner: Learner,
}

fn encode_f64s<'a>(values: impl Iterator<Item = &'a f64>, hasher: &mut Sha256) -> String {
    let bytes: Vec<u8> = values.flat_map(|v| v.to_le_bytes()).collect();
    hasher.update(&bytes);
    B64.encode(bytes)
}

fn decode_f64s(text: &str, expected: usize, hasher: &mut Sha256) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(text)
        .map_err(|e| Error::InvalidCheckpoint(format!("bad base64: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(Error::InvalidCheckpoint(format!(
            "array holds {} bytes, expected {}",
            bytes.len(),
            expected * 8
        )));
    }
    hasher.update(&bytes);
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn encode_net(net: &MlpParams, hasher: &mut Sha256) -> NetworkDoc {
    NetworkDoc {
        layers: net
            .layers()
            .iter()
            .map(|l| LayerDoc {
                inputs: l.inputs(),
                outputs: l.outputs(),
                activation: l.activation,
                weights: encode_f64s(l.weights.iter(), hasher),
                bias: encode_f64s(l.bias.iter(), hasher),
            })
            .collect(),
    }
}

fn decode_net(doc: &NetworkDoc, hasher: &mut Sha256) -> Result<MlpParams> {
    let layers = doc
        .layers
        .iter()
        .map(|l| {
            let w = decode_f64s(&l.weights, l.inputs * l.outputs, hasher)?;
            let b = decode_f64s(&l.bias, l.outputs, hasher)?;
            Ok(Layer {
                weights: Array2::from_shape_vec((l.outputs, l.inputs), w)
                    .map_err(|e| Error::InvalidCheckpoint(e.to_string()))?,
                bias: Array1::from_vec(b),
                activation: l.activation,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MlpParams::from_layers(layers)
}

impl Checkpoint {
    pub fn new(config: TrainConfig, episode: usize, learner: Learner) -> Self {
        Self {
            config,
            episode,
            learner,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        let l = &self.learner;
        let actors = l.actors().iter().map(|a| encode_net(a, &mut hasher)).collect();
        let critic = encode_net(l.critic(), &mut hasher);
        let target_actors = l.target_actors().iter().map(|a| encode_net(a, &mut hasher)).collect();
        let target_critic = encode_net(l.target_critic(), &mut hasher);
        let doc = CheckpointDoc {
            format: FORMAT.into(),
            version: VERSION,
            episode: self.episode,
            train_steps: l.train_steps(),
            config: self.config.clone(),
            actors,
            critic,
            target_actors,
            target_critic,
            sha256: hex::encode(hasher.finalize()),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CheckpointDoc = serde_json::from_str(text)?;
        if doc.format != FORMAT || doc.version != VERSION {
            return Err(Error::InvalidCheckpoint(format!(
                "unsupported format {} version {}",
                doc.format, doc.version
            )));
        }
        let mut hasher = Sha256::new();
        let actors = doc
            .actors
            .iter()
            .map(|a| decode_net(a, &mut hasher))
            .collect::<Result<Vec<_>>>()?;
        let critic = decode_net(&doc.critic, &mut hasher)?;
        let target_actors = doc
            .target_actors
            .iter()
            .map(|a| decode_net(a, &mut hasher))
            .collect::<Result<Vec<_>>>()?;
        let target_critic = decode_net(&doc.target_critic, &mut hasher)?;
        if hex::encode(hasher.finalize()) != doc.sha256 {
            return Err(Error::ChecksumMismatch);
        }
        doc.config.validate()?;
        let mut learner = Learner::from_params(doc.config.learner_config(), actors, critic)?;
        learner.set_targets(target_actors, target_critic)?;
        learner.set_train_steps(doc.train_steps);
        Ok(Self {
            config: doc.config,
            episode: doc.episode,
            learner,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
