//! Single-level comparison models.
//!
//! All three share the low-level update of the hierarchical model without
//! the unpooled term: `h <- h + MP_k(f_L + rms(h), e)`, starting from the
//! broadcast start vector. `Deep` uses `N` distinct layers, `Recurrent` one
//! shared layer applied `T` times. `FlatGr` runs `R` global steps of `T`
//! shared iterations with a readout after each, and `DeepGr` repeats the
//! `N` distinct layers `R` times the same way.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{Graph, Index};
use crate::layers::{layer_update, ArcIndex, Backbone, LayerParams, LayerVars};
use crate::model::{broadcast_rows, start_vector, IterationOverride, Iterations};
use crate::seeding;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlatKind {
    Deep,
    Recurrent,
    FlatGr,
    DeepGr,
}

impl FlatKind {
    /// Distinct layer parameter sets.
    fn distinct_layers(self) -> bool {
        matches!(self, FlatKind::Deep | FlatKind::DeepGr)
    }

    fn global_recurrence(self) -> bool {
        matches!(self, FlatKind::FlatGr | FlatKind::DeepGr)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlatConfig {
    pub kind: FlatKind,
    pub m: usize,
    /// Layer count for `Deep`, iterations per step otherwise.
    pub depth: usize,
    /// Global steps; only `FlatGr` uses more than one.
    pub r: usize,
    pub gamma: f64,
    pub backbone: Backbone,
    pub node_features: usize,
    pub edge_features: usize,
    /// `t_low` replaces the iteration count and `r` the global steps at
    /// evaluation. `Deep` ignores both and `DeepGr` ignores `t_low`.
    pub inference: IterationOverride,
}

impl Default for FlatConfig {
    fn default() -> Self {
        FlatConfig {
            kind: FlatKind::Deep,
            m: 32,
            depth: 10,
            r: 1,
            gamma: 0.8,
            backbone: Backbone::Gine,
            node_features: 1,
            edge_features: 1,
            inference: IterationOverride::default(),
        }
    }
}

impl FlatConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("m", self.m),
            ("depth", self.depth),
            ("r", self.r),
            ("node_features", self.node_features),
            ("edge_features", self.edge_features),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !self.kind.global_recurrence() && self.r != 1 {
            return Err(Error::Config("only +gr models run more than one global step".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        Ok(())
    }

    pub fn training_iterations(&self) -> Iterations {
        Iterations { r: self.r, t_high: 1, t_low: self.depth }
    }

    pub fn inference_iterations(&self) -> Iterations {
        let base = self.training_iterations();
        match self.kind {
            FlatKind::Deep => base,
            FlatKind::Recurrent => Iterations { t_low: self.inference.t_low.unwrap_or(base.t_low), ..base },
            FlatKind::FlatGr => Iterations {
                r: self.inference.r.unwrap_or(base.r),
                t_low: self.inference.t_low.unwrap_or(base.t_low),
                ..base
            },
            FlatKind::DeepGr => Iterations { r: self.inference.r.unwrap_or(base.r), ..base },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlatParams {
    pub w_n: ParamId,
    pub w_el: ParamId,
    pub layers: Vec<LayerParams>,
    pub state_norm: ParamId,
    pub readout: ParamId,
    pub z_l: ParamId,
}

#[derive(Clone, Debug)]
pub struct FlatModel {
    pub config: FlatConfig,
    pub store: ParamStore,
    pub params: FlatParams,
}

impl FlatModel {
    pub fn new(config: FlatConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let m = config.m;
        let mut rng = seeding::stream(seed, "init", 0);
        let mut s = ParamStore::new();
        let w_n = s.add_glorot("encoder.node", config.node_features, m, &mut rng);
        let w_el = s.add_glorot("encoder.edge_low", config.edge_features, m, &mut rng);
        let count = if config.kind.distinct_layers() { config.depth } else { 1 };
        let layers =
            (0..count).map(|k| LayerParams::new(&mut s, &format!("layer{k}"), config.backbone, m, &mut rng)).collect();
        let state_norm = s.add("state_norm.low", Tensor::ones(1, m), true);
        let readout = s.add_glorot("readout", m, 1, &mut rng);
        let z_l = s.add("z.low", start_vector(m, &mut rng), false);
        let params = FlatParams { w_n, w_el, layers, state_norm, readout, z_l };
        Ok(FlatModel { config, store: s, params })
    }

    fn bind(&self, tape: &mut Tape) -> FlatVars {
        let s = &self.store;
        let p = &self.params;
        FlatVars {
            w_n: tape.param(s, p.w_n),
            w_el: tape.param(s, p.w_el),
            layers: p.layers.iter().map(|l| l.bind(tape, s)).collect(),
            state_norm: tape.param(s, p.state_norm),
            readout: tape.param(s, p.readout),
            z_l: tape.param(s, p.z_l),
        }
    }

    /// Per-step predictions (one entry unless a `+gr` kind).
    pub fn forward(&self, tape: &mut Tape, g: &Graph, iters: Iterations) -> Result<Vec<Var>> {
        let v = self.bind(tape);
        let arcs = ArcIndex::from_arcs(g.arcs(), g.num_nodes());
        let x = tape.constant(g.node_features().clone());
        let f = tape.matmul(x, v.w_n)?;
        let ef = tape.constant(g.edge_features().clone());
        let e_edges = tape.matmul(ef, v.w_el)?;
        let edge_index: Index = g.arcs().edge.clone();
        let e = tape.gather_rows(e_edges, &edge_index)?;
        let mut h = broadcast_rows(tape, v.z_l, g.num_nodes())?;
        let mut out = Vec::new();
        match self.config.kind {
            FlatKind::Deep | FlatKind::DeepGr => {
                let steps = if self.config.kind == FlatKind::Deep { 1 } else { iters.r };
                for _ in 0..steps {
                    for layer in &v.layers {
                        h = flat_step(tape, h, f, &arcs, e, v.state_norm, layer)?;
                    }
                    out.push(tape.matmul(h, v.readout)?);
                }
            }
            FlatKind::Recurrent | FlatKind::FlatGr => {
                for _ in 0..iters.r {
                    for _ in 0..iters.t_low {
                        h = flat_step(tape, h, f, &arcs, e, v.state_norm, &v.layers[0])?;
                    }
                    out.push(tape.matmul(h, v.readout)?);
                }
            }
        }
        Ok(out)
    }

    pub fn predict(&self, g: &Graph, iters: Iterations) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, g, iters)?;
        Ok(out.iter().map(|&y| tape.value(y).clone()).collect())
    }
}

struct FlatVars {
    w_n: Var,
    w_el: Var,
    layers: Vec<LayerVars>,
    state_norm: Var,
    readout: Var,
    z_l: Var,
}

/// `h + MP(f + rms(h), e)`.
fn flat_step(tape: &mut Tape, h: Var, f: Var, arcs: &ArcIndex, e: Var, norm: Var, layer: &LayerVars) -> Result<Var> {
    let hn = tape.rms_norm(h, norm)?;
    let input = tape.add(f, hn)?;
    let u = layer_update(tape, input, arcs, e, layer)?;
    tape.add(h, u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deep_builds_distinct_layers() {
        let m = FlatModel::new(FlatConfig { depth: 3, ..FlatConfig::default() }, 0).unwrap();
        assert_eq!(m.params.layers.len(), 3);
        let r = FlatModel::new(FlatConfig { kind: FlatKind::Recurrent, depth: 20, ..FlatConfig::default() }, 0).unwrap();
        assert_eq!(r.params.layers.len(), 1);
    }

    #[test]
    fn inference_overrides_by_kind() {
        let o = IterationOverride { r: Some(3), t_high: None, t_low: Some(30) };
        let deep = FlatConfig { inference: o, ..FlatConfig::default() };
        assert_eq!(deep.inference_iterations().t_low, 10);
        let rec = FlatConfig { kind: FlatKind::Recurrent, depth: 20, inference: o, ..FlatConfig::default() };
        assert_eq!(rec.inference_iterations(), Iterations { r: 1, t_high: 1, t_low: 30 });
        let gr = FlatConfig { kind: FlatKind::FlatGr, depth: 5, r: 4, inference: o, ..FlatConfig::default() };
        assert_eq!(gr.inference_iterations(), Iterations { r: 3, t_high: 1, t_low: 30 });
    }
}
