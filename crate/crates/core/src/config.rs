//! Run configuration: one JSON document whose optional `preset` key expands
//! to a full default set before the document's own fields are merged on top.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines::{FlatConfig, FlatKind};
use crate::data::RggConfig;
use crate::error::{Error, Result};
use crate::layers::Backbone;
use crate::model::{GhrConfig, IterationOverride};
use crate::network::NetworkConfig;
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 40–60 node graphs, train distances capped at 5, test up to 8 hops.
    #[default]
    SmallOor,
    /// 300–350 node graphs, train distances capped at 20, test up to 40 hops.
    LargeOor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths { dataset: "data".into(), checkpoint: "run/checkpoint.bin".into(), reports: "reports".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    /// Master seed for data, initialisation and shuffling.
    pub seed: u64,
    pub data: RggConfig,
    /// Model trained by `train`; see [`variant_config`].
    pub variant: String,
    pub ghr: GhrConfig,
    pub flat: FlatConfig,
    pub train: TrainConfig,
    pub paths: Paths,
    /// Variants and seeds swept by `ablate`.
    pub variants: Vec<String>,
    pub seeds: Vec<u64>,
    /// Recurrent-baseline iteration count at evaluation.
    pub recurrent_inference_t: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: Preset::SmallOor,
            seed: 0,
            data: RggConfig::default(),
            variant: "ghr_gated_gine".into(),
            ghr: GhrConfig { t_low: 4, ..GhrConfig::default() },
            flat: FlatConfig { depth: 10, ..FlatConfig::default() },
            train: TrainConfig::default(),
            paths: Paths::default(),
            variants: vec!["ghr_gated_gine".into(), "deep_gine".into()],
            seeds: vec![0],
            recurrent_inference_t: None,
        }
    }
}

fn preset_value(p: Preset) -> Value {
    let small = serde_json::to_value(RunConfig::default()).expect("config serializes");
    match p {
        Preset::SmallOor => small,
        Preset::LargeOor => {
            let mut v = small;
            merge(
                &mut v,
                serde_json::json!({
                    "preset": "large_oor",
                    "data": {
                        "n_min": 300, "n_max": 350, "test_n_min": 300, "test_n_max": 350,
                        "distance_cap": 20, "test_ceiling": 40
                    },
                    "ghr": {"t_low": 6, "inference": {"t_low": 8}},
                    "flat": {"depth": 20},
                    "train": {"batch_size": 128},
                    "variants": [
                        "ghr_gated_gine", "ghr_gine", "deep_gine", "deep_gated_gine",
                        "recurrent_gine", "recurrent_gated_gine", "deep+gr", "recurrent+gr"
                    ],
                    "seeds": [0, 1, 2],
                    "recurrent_inference_t": 30,
                }),
            );
            v
        }
    }
}

/// Recursive object merge; non-object values in `over` replace `base`.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Expands the document's preset and merges the document over it.
    pub fn from_value(doc: Value) -> Result<Self> {
        if !doc.is_object() {
            return Err(Error::Config("configuration must be a JSON object".into()));
        }
        let preset = match doc.get("preset") {
            Some(p) => serde_json::from_value(p.clone()).map_err(|e| Error::Config(format!("preset: {e}")))?,
            None => Preset::SmallOor,
        };
        let mut v = preset_value(preset);
        merge(&mut v, doc);
        let cfg: RunConfig = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_value(doc)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.ghr.validate()?;
        self.flat.validate()?;
        self.train.validate()?;
        self.network(&self.variant)?;
        for v in &self.variants {
            self.network(v)?;
        }
        Ok(())
    }

    /// Model configuration of a named variant; iteration overrides for the
    /// preset are folded into its inference settings.
    pub fn network(&self, variant: &str) -> Result<NetworkConfig> {
        let mut cfg = variant_config(variant, &self.ghr, &self.flat)?;
        if let (NetworkConfig::Flat(f), Some(t)) = (&mut cfg, self.recurrent_inference_t) {
            if f.kind == FlatKind::Recurrent && f.inference.t_low.is_none() {
                f.inference.t_low = Some(t);
            }
        }
        Ok(cfg)
    }
}

fn parse_backbone(s: &str) -> Option<Backbone> {
    match s {
        "gine" => Some(Backbone::Gine),
        "gated_gine" => Some(Backbone::GatedGine),
        _ => None,
    }
}

/// Resolves names like `ghr_gated_gine`, `deep_gine`, `recurrent_gated_gine`,
/// `deep+gr` or `recurrent+gr_gated_gine` (the `+gr` forms default to GINE).
pub fn variant_config(variant: &str, ghr: &GhrConfig, flat: &FlatConfig) -> Result<NetworkConfig> {
    let bad = || Error::Config(format!("unknown model variant {variant:?}"));
    let (family, backbone) = if let Some((fam, rest)) = variant.split_once("+gr") {
        let bb = match rest {
            "" => Backbone::Gine,
            r => r.strip_prefix('_').and_then(parse_backbone).ok_or_else(bad)?,
        };
        (format!("{fam}+gr"), bb)
    } else {
        let (fam, bb) = variant.split_once('_').ok_or_else(bad)?;
        (fam.to_string(), parse_backbone(bb).ok_or_else(bad)?)
    };
    let flat_with = |kind: FlatKind, r: usize| {
        NetworkConfig::Flat(FlatConfig { kind, backbone, r, ..flat.clone() })
    };
    let gr_steps = ghr.r;
    Ok(match family.as_str() {
        "ghr" => NetworkConfig::Ghr(GhrConfig { backbone, ..ghr.clone() }),
        "deep" => flat_with(FlatKind::Deep, 1),
        "recurrent" => flat_with(FlatKind::Recurrent, 1),
        "deep+gr" => flat_with(FlatKind::DeepGr, gr_steps),
        "recurrent+gr" => flat_with(FlatKind::FlatGr, gr_steps),
        _ => return Err(bad()),
    })
}

/// Iteration overrides collected from command-line flags.
pub fn cli_override(r: Option<usize>, t_high: Option<usize>, t_low: Option<usize>) -> IterationOverride {
    IterationOverride { r, t_high, t_low }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_preset_defaults() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c.data.distance_cap, Some(5));
        assert_eq!(c.ghr.t_low, 4);
        assert_eq!(c.flat.depth, 10);
    }

    #[test]
    fn large_preset_with_override() {
        let c = RunConfig::from_json(r#"{"preset":"large_oor","data":{"train":2000},"ghr":{"m":16}}"#).unwrap();
        assert_eq!((c.data.n_min, c.data.train, c.data.distance_cap), (300, 2000, Some(20)));
        assert_eq!((c.ghr.m, c.ghr.t_low, c.ghr.inference.t_low), (16, 6, Some(8)));
        match c.network("recurrent_gine").unwrap() {
            NetworkConfig::Flat(f) => assert_eq!(f.inference_iterations().t_low, 30),
            _ => panic!("expected flat"),
        }
    }

    #[test]
    fn unknown_fields_and_variants_rejected() {
        assert!(RunConfig::from_json(r#"{"ghr":{"bogus":1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"variant":"ghr_gat"}"#).is_err());
        assert!(RunConfig::from_json(r#"{"preset":"huge"}"#).is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        let c = RunConfig::default();
        for v in [
            "ghr_gated_gine",
            "ghr_gine",
            "deep_gine",
            "deep_gated_gine",
            "recurrent_gine",
            "recurrent_gated_gine",
            "deep+gr",
            "recurrent+gr",
        ] {
            let net = crate::network::Network::new(c.network(v).unwrap(), 0).unwrap();
            assert_eq!(net.variant_name(), v);
        }
    }
}
