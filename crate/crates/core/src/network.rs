//! One handle over the hierarchical model and the flat baselines, so that
//! training, evaluation and checkpoints treat them alike.

use serde::{Deserialize, Serialize};

use crate::autodiff::{decode_checkpoint, encode_checkpoint, ParamStore, Tape, Tensor, Var};
use crate::baselines::{FlatConfig, FlatKind, FlatModel};
use crate::error::{Error, Result};
use crate::hierarchy::{Hierarchy, PoolingConfig};
use crate::layers::Backbone;
use crate::model::{self, GhrConfig, GhrModel, Iterations};

/// Checkpoint header: the model family plus its configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum NetworkConfig {
    Ghr(GhrConfig),
    Flat(FlatConfig),
}

#[derive(Clone, Debug)]
pub enum Network {
    Ghr(GhrModel),
    Flat(FlatModel),
}

impl Network {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        Ok(match config {
            NetworkConfig::Ghr(c) => Network::Ghr(GhrModel::new(c, seed)?),
            NetworkConfig::Flat(c) => Network::Flat(FlatModel::new(c, seed)?),
        })
    }

    pub fn config(&self) -> NetworkConfig {
        match self {
            Network::Ghr(m) => NetworkConfig::Ghr(m.config.clone()),
            Network::Flat(m) => NetworkConfig::Flat(m.config.clone()),
        }
    }

    pub fn store(&self) -> &ParamStore {
        match self {
            Network::Ghr(m) => &m.store,
            Network::Flat(m) => &m.store,
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        match self {
            Network::Ghr(m) => &mut m.store,
            Network::Flat(m) => &mut m.store,
        }
    }

    pub fn gamma(&self) -> f64 {
        match self {
            Network::Ghr(m) => m.config.gamma,
            Network::Flat(m) => m.config.gamma,
        }
    }

    /// Hierarchy construction, if the model uses one.
    pub fn pooling(&self) -> Option<&PoolingConfig> {
        match self {
            Network::Ghr(m) => Some(&m.config.pooling),
            Network::Flat(_) => None,
        }
    }

    pub fn training_iterations(&self) -> Iterations {
        match self {
            Network::Ghr(m) => m.config.training_iterations(),
            Network::Flat(m) => m.config.training_iterations(),
        }
    }

    pub fn inference_iterations(&self) -> Iterations {
        match self {
            Network::Ghr(m) => m.config.inference_iterations(),
            Network::Flat(m) => m.config.inference_iterations(),
        }
    }

    /// Replaces the evaluation-time iteration counts.
    pub fn set_inference(&mut self, o: crate::model::IterationOverride) {
        match self {
            Network::Ghr(m) => m.config.inference = m.config.inference.merged(&o),
            Network::Flat(m) => m.config.inference = m.config.inference.merged(&o),
        }
    }

    /// Per-step predictions recorded on `tape`.
    pub fn forward(&self, tape: &mut Tape, h: &Hierarchy, iters: Iterations) -> Result<Vec<Var>> {
        match self {
            Network::Ghr(m) => Ok(model::forward(tape, m, h, iters)?.predictions),
            Network::Flat(m) => m.forward(tape, &h.low, iters),
        }
    }

    /// Per-step prediction values.
    pub fn predict(&self, h: &Hierarchy, iters: Iterations) -> Result<Vec<Tensor>> {
        match self {
            Network::Ghr(m) => model::predict(m, h, iters),
            Network::Flat(m) => m.predict(&h.low, iters),
        }
    }

    pub fn to_checkpoint(&self) -> Vec<u8> {
        let header = serde_json::to_string(&self.config()).expect("config serializes");
        encode_checkpoint(&header, self.store())
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let ck = decode_checkpoint(bytes)?;
        let config: NetworkConfig =
            serde_json::from_str(&ck.config_json).map_err(|e| Error::Checkpoint(format!("config header: {e}")))?;
        let mut net = Network::new(config, 0)?;
        net.store_mut().load_values(&ck.params)?;
        Ok(net)
    }

    /// Short variant label, e.g. `ghr_gated_gine`, `deep_gine` or `recurrent+gr`.
    pub fn variant_name(&self) -> String {
        match self {
            Network::Ghr(m) => format!("ghr_{}", m.config.backbone.as_str()),
            Network::Flat(m) => {
                let bb = m.config.backbone.as_str();
                match (m.config.kind, m.config.backbone) {
                    (FlatKind::Deep, _) => format!("deep_{bb}"),
                    (FlatKind::Recurrent, _) => format!("recurrent_{bb}"),
                    (FlatKind::DeepGr, Backbone::Gine) => "deep+gr".into(),
                    (FlatKind::FlatGr, Backbone::Gine) => "recurrent+gr".into(),
                    (FlatKind::DeepGr, _) => format!("deep+gr_{bb}"),
                    (FlatKind::FlatGr, _) => format!("recurrent+gr_{bb}"),
                }
            }
        }
    }

    pub fn backbone(&self) -> Backbone {
        match self {
            Network::Ghr(m) => m.config.backbone,
            Network::Flat(m) => m.config.backbone,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip() {
        for cfg in [
            NetworkConfig::Ghr(GhrConfig { m: 4, ..GhrConfig::default() }),
            NetworkConfig::Flat(FlatConfig { m: 4, depth: 2, ..FlatConfig::default() }),
        ] {
            let net = Network::new(cfg.clone(), 9).unwrap();
            let back = Network::from_checkpoint(&net.to_checkpoint()).unwrap();
            assert_eq!(back.config(), cfg);
            assert!(back.store().values_equal(net.store()));
        }
    }

    #[test]
    fn start_vectors_follow_seed_and_survive_reload() {
        let cfg = NetworkConfig::Ghr(GhrConfig { m: 4, ..GhrConfig::default() });
        let (a, b) = (Network::new(cfg.clone(), 3).unwrap(), Network::new(cfg, 4).unwrap());
        let z = |n: &Network| n.store().value(n.store().id("z.low").unwrap()).clone();
        assert_ne!(z(&a), z(&b));
        let back = Network::from_checkpoint(&a.to_checkpoint()).unwrap();
        assert_eq!(z(&back), z(&a));
        assert!(!back.store().is_trainable(back.store().id("z.low").unwrap()));
    }

    #[test]
    fn header_rejects_unknown_fields() {
        let bad = r#"{"model":"ghr","m":4,"bogus":1}"#;
        assert!(serde_json::from_str::<NetworkConfig>(bad).is_err());
    }
}
