//! The two-level recurrent model.
//!
//! One global step runs `t_high` outer iterations; each updates the high-level
//! state once from its own normalised state plus the pooled low-level state,
//! then updates the low-level state `t_low` times from the encoded node
//! features, its normalised state and the unpooled high-level state. A shared
//! linear readout follows every global step.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::Index;
use crate::hierarchy::{Hierarchy, PoolingConfig, Reduce};
use crate::layers::{ArcIndex, Backbone, LayerParams, LayerVars};
use crate::seeding;

/// What the readout predicts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutKind {
    #[default]
    Node,
    Edge,
}

/// Recurrence depth: `r` global steps of `t_high × t_low` nested updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Iterations {
    pub r: usize,
    pub t_high: usize,
    pub t_low: usize,
}

/// Optional replacements for the training-time [`Iterations`] at evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_high: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_low: Option<usize>,
}

impl IterationOverride {
    pub fn apply(&self, base: Iterations) -> Iterations {
        Iterations {
            r: self.r.unwrap_or(base.r),
            t_high: self.t_high.unwrap_or(base.t_high),
            t_low: self.t_low.unwrap_or(base.t_low),
        }
    }

    /// Field-wise override where `other` wins.
    pub fn merged(&self, other: &IterationOverride) -> IterationOverride {
        IterationOverride {
            r: other.r.or(self.r),
            t_high: other.t_high.or(self.t_high),
            t_low: other.t_low.or(self.t_low),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GhrConfig {
    /// Hidden width.
    pub m: usize,
    /// Global recurrent steps.
    pub r: usize,
    pub t_high: usize,
    pub t_low: usize,
    pub gamma: f64,
    pub backbone: Backbone,
    pub time_informed: bool,
    pub readout: ReadoutKind,
    pub node_features: usize,
    pub edge_features_low: usize,
    pub edge_features_high: usize,
    /// Evaluation-time iteration counts.
    pub inference: IterationOverride,
    pub pooling: PoolingConfig,
}

impl Default for GhrConfig {
    fn default() -> Self {
        GhrConfig {
            m: 32,
            r: 4,
            t_high: 3,
            t_low: 6,
            gamma: 0.8,
            backbone: Backbone::GatedGine,
            time_informed: false,
            readout: ReadoutKind::Node,
            node_features: 1,
            edge_features_low: 1,
            edge_features_high: 1,
            inference: IterationOverride::default(),
            pooling: PoolingConfig::default(),
        }
    }
}

impl GhrConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m", self.m),
            ("r", self.r),
            ("t_high", self.t_high),
            ("t_low", self.t_low),
            ("node_features", self.node_features),
            ("edge_features_low", self.edge_features_low),
            ("edge_features_high", self.edge_features_high),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        for (name, v) in [("r", self.inference.r), ("t_high", self.inference.t_high), ("t_low", self.inference.t_low)] {
            if v == Some(0) {
                return Err(Error::Config(format!("inference {name} must be at least 1")));
            }
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if self.pooling.iterations == 0 {
            return Err(Error::Config("pooling needs at least one Graclus iteration".into()));
        }
        Ok(())
    }

    pub fn training_iterations(&self) -> Iterations {
        Iterations { r: self.r, t_high: self.t_high, t_low: self.t_low }
    }

    pub fn inference_iterations(&self) -> Iterations {
        self.inference.apply(self.training_iterations())
    }
}

/// Parameter handles of a [`GhrModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct GhrParams {
    pub w_n: ParamId,
    pub w_el: ParamId,
    pub w_eh: ParamId,
    pub low_mp: LayerParams,
    pub high_mp: LayerParams,
    pub w_unpool: ParamId,
    pub state_norm_l: ParamId,
    pub state_norm_h: ParamId,
    pub readout: ParamId,
    pub z_l: ParamId,
    pub z_h: ParamId,
    pub w_time: Option<ParamId>,
}

/// Configuration plus parameters.
#[derive(Clone, Debug)]
pub struct GhrModel {
    pub config: GhrConfig,
    pub store: ParamStore,
    pub params: GhrParams,
}

/// Draws a frozen `1 × m` start vector from `N(0, 1/m)`.
pub(crate) fn start_vector<R: rand::Rng + ?Sized>(m: usize, rng: &mut R) -> Tensor {
    let normal = Normal::new(0.0, 1.0 / (m as f64).sqrt()).expect("positive deviation");
    Tensor::row_vector(&(0..m).map(|_| normal.sample(rng)).collect::<Vec<_>>())
}

impl GhrModel {
    /// Fresh model; all weights come from the `init` stream of `seed`.
    pub fn new(config: GhrConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let m = config.m;
        let mut rng = seeding::stream(seed, "init", 0);
        let mut s = ParamStore::new();
        let w_n = s.add_glorot("encoder.node", config.node_features, m, &mut rng);
        let w_el = s.add_glorot("encoder.edge_low", config.edge_features_low, m, &mut rng);
        let w_eh = s.add_glorot("encoder.edge_high", config.edge_features_high, m, &mut rng);
        let low_mp = LayerParams::new(&mut s, "low_mp", config.backbone, m, &mut rng);
        let high_mp = LayerParams::new(&mut s, "high_mp", config.backbone, m, &mut rng);
        let w_unpool = s.add_glorot("unpool", m, m, &mut rng);
        let state_norm_l = s.add("state_norm.low", Tensor::ones(1, m), true);
        let state_norm_h = s.add("state_norm.high", Tensor::ones(1, m), true);
        let readout = match config.readout {
            ReadoutKind::Node => s.add_glorot("readout", m, 1, &mut rng),
            ReadoutKind::Edge => s.add_glorot("readout", 3 * m, 1, &mut rng),
        };
        let z_l = s.add("z.low", start_vector(m, &mut rng), false);
        let z_h = s.add("z.high", start_vector(m, &mut rng), false);
        let w_time = config.time_informed.then(|| s.add_glorot("time", 2, m, &mut rng));
        let params = GhrParams {
            w_n,
            w_el,
            w_eh,
            low_mp,
            high_mp,
            w_unpool,
            state_norm_l,
            state_norm_h,
            readout,
            z_l,
            z_h,
            w_time,
        };
        Ok(GhrModel { config, store: s, params })
    }

    pub fn bind(&self, tape: &mut Tape) -> GhrVars {
        let s = &self.store;
        let p = &self.params;
        GhrVars {
            w_n: tape.param(s, p.w_n),
            w_el: tape.param(s, p.w_el),
            w_eh: tape.param(s, p.w_eh),
            low_mp: p.low_mp.bind(tape, s),
            high_mp: p.high_mp.bind(tape, s),
            w_unpool: tape.param(s, p.w_unpool),
            state_norm_l: tape.param(s, p.state_norm_l),
            state_norm_h: tape.param(s, p.state_norm_h),
            readout: tape.param(s, p.readout),
            z_l: tape.param(s, p.z_l),
            z_h: tape.param(s, p.z_h),
            w_time: p.w_time.map(|w| tape.param(s, w)),
        }
    }
}

/// Model parameters recorded on one tape.
#[derive(Clone, Debug)]
pub struct GhrVars {
    pub w_n: Var,
    pub w_el: Var,
    pub w_eh: Var,
    pub low_mp: LayerVars,
    pub high_mp: LayerVars,
    pub w_unpool: Var,
    pub state_norm_l: Var,
    pub state_norm_h: Var,
    pub readout: Var,
    pub z_l: Var,
    pub z_h: Var,
    pub w_time: Option<Var>,
}

/// Index structure of a hierarchy, prepared once per forward pass.
#[derive(Clone, Debug)]
pub struct HierarchyIndex {
    pub low_arcs: ArcIndex,
    pub high_arcs: ArcIndex,
    pub low_arc_edge: Index,
    pub high_arc_edge: Index,
    pub cluster_of: Index,
    pub num_low: usize,
    pub num_high: usize,
    pub reduce: Reduce,
    /// `1 / |cluster|` per high node, for mean pooling.
    inv_sizes: Vec<f64>,
    pub edge_min: Index,
    pub edge_max: Index,
}

impl HierarchyIndex {
    pub fn new(h: &Hierarchy) -> Self {
        let inv_sizes = h.assignment.sizes().iter().map(|&c| 1.0 / c as f64).collect();
        HierarchyIndex {
            low_arcs: ArcIndex::from_arcs(h.low.arcs(), h.low.num_nodes()),
            high_arcs: ArcIndex::from_arcs(h.high.arcs(), h.high.num_nodes()),
            low_arc_edge: h.low.arcs().edge.clone(),
            high_arc_edge: h.high.arcs().edge.clone(),
            cluster_of: h.assignment.cluster_of().clone(),
            num_low: h.low.num_nodes(),
            num_high: h.high.num_nodes(),
            reduce: h.feature_reduce,
            inv_sizes,
            edge_min: h.low.edges().iter().map(|e| e.0).collect(),
            edge_max: h.low.edges().iter().map(|e| e.1).collect(),
        }
    }
}

/// Latent inputs reused by every update of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct EncodedInputs {
    pub f_l: Var,
    /// One row per low-level edge.
    pub e_l_edges: Var,
    /// One row per low-level arc.
    pub e_l: Var,
    /// One row per high-level arc.
    pub e_h: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct HiddenState {
    pub h_l: Var,
    pub h_h: Var,
}

/// Number of level updates executed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct UpdateCounter {
    pub high: usize,
    pub low: usize,
}

pub fn encode(tape: &mut Tape, h: &Hierarchy, idx: &HierarchyIndex, v: &GhrVars) -> Result<EncodedInputs> {
    let xl = tape.constant(h.low.node_features().clone());
    let f_l = tape.matmul(xl, v.w_n)?;
    let el = tape.constant(h.low.edge_features().clone());
    let e_l_edges = tape.matmul(el, v.w_el)?;
    let e_l = tape.gather_rows(e_l_edges, &idx.low_arc_edge)?;
    let eh = tape.constant(h.high.edge_features().clone());
    let e_h_edges = tape.matmul(eh, v.w_eh)?;
    let e_h = tape.gather_rows(e_h_edges, &idx.high_arc_edge)?;
    Ok(EncodedInputs { f_l, e_l_edges, e_l, e_h })
}

/// Repeats a `1 × m` row over `n` rows.
pub fn broadcast_rows(tape: &mut Tape, row: Var, n: usize) -> Result<Var> {
    let ones = tape.constant(Tensor::ones(n, 1));
    tape.matmul(ones, row)
}

pub fn init_state(tape: &mut Tape, idx: &HierarchyIndex, v: &GhrVars) -> Result<HiddenState> {
    Ok(HiddenState {
        h_l: broadcast_rows(tape, v.z_l, idx.num_low)?,
        h_h: broadcast_rows(tape, v.z_h, idx.num_high)?,
    })
}

/// Pools low-level rows into their clusters with the hierarchy's reduction.
pub fn pool(tape: &mut Tape, x: Var, idx: &HierarchyIndex) -> Result<Var> {
    match idx.reduce {
        Reduce::Sum => tape.scatter_add_rows(x, &idx.cluster_of, idx.num_high),
        Reduce::Max => tape.scatter_max_rows(x, &idx.cluster_of, idx.num_high),
        Reduce::Mean => {
            let s = tape.scatter_add_rows(x, &idx.cluster_of, idx.num_high)?;
            let m = tape.shape(x).1;
            let mut scale = Tensor::zeros(idx.num_high, m);
            for (c, &w) in idx.inv_sizes.iter().enumerate() {
                scale.row_mut(c).iter_mut().for_each(|v| *v = w);
            }
            let scale = tape.constant(scale);
            tape.hadamard(s, scale)
        }
    }
}

pub fn unpool(tape: &mut Tape, x_high: Var, idx: &HierarchyIndex) -> Result<Var> {
    tape.gather_rows(x_high, &idx.cluster_of)
}

/// `g_H + MP_H(rms(g_H) + Pool(rms(g_L)), e_H)`.
pub fn high_update(
    tape: &mut Tape,
    g_h: Var,
    g_l: Var,
    enc: &EncodedInputs,
    idx: &HierarchyIndex,
    v: &GhrVars,
) -> Result<Var> {
    let gh_hat = tape.rms_norm(g_h, v.state_norm_h)?;
    let gl_hat = tape.rms_norm(g_l, v.state_norm_l)?;
    let pooled = pool(tape, gl_hat, idx)?;
    let input = tape.add(gh_hat, pooled)?;
    residual_message_pass(tape, g_h, input, &idx.high_arcs, enc.e_h, &v.high_mp)
}

/// `g_L + MP_L(f_L + rms(g_L) + Unpool(g_H) W_unpool [+ (t_H, t_L) W_time], e_L)`.
#[allow(clippy::too_many_arguments)]
pub fn low_update(
    tape: &mut Tape,
    g_h: Var,
    g_l: Var,
    enc: &EncodedInputs,
    idx: &HierarchyIndex,
    v: &GhrVars,
    t_h: usize,
    t_l: usize,
) -> Result<Var> {
    let gl_hat = tape.rms_norm(g_l, v.state_norm_l)?;
    let up = unpool(tape, g_h, idx)?;
    let up = tape.matmul(up, v.w_unpool)?;
    let input = tape.add(enc.f_l, gl_hat)?;
    let mut input = tape.add(input, up)?;
    if let Some(w_time) = v.w_time {
        let t = tape.constant(Tensor::row_vector(&[t_h as f64, t_l as f64]));
        let shift = tape.matmul(t, w_time)?;
        input = tape.add(input, shift)?;
    }
    residual_message_pass(tape, g_l, input, &idx.low_arcs, enc.e_l, &v.low_mp)
}

/// `state + MP(input)` where `MP(x) = layer_step(x) - x`.
fn residual_message_pass(
    tape: &mut Tape,
    state: Var,
    input: Var,
    arcs: &ArcIndex,
    e: Var,
    layer: &LayerVars,
) -> Result<Var> {
    let u = crate::layers::layer_update(tape, input, arcs, e, layer)?;
    tape.add(state, u)
}

/// One global recurrent step.
pub fn global_step(
    tape: &mut Tape,
    state: HiddenState,
    enc: &EncodedInputs,
    idx: &HierarchyIndex,
    v: &GhrVars,
    iters: Iterations,
    counter: &mut UpdateCounter,
) -> Result<HiddenState> {
    let HiddenState { mut h_l, mut h_h } = state;
    for t_h in 1..=iters.t_high {
        h_h = high_update(tape, h_h, h_l, enc, idx, v)?;
        counter.high += 1;
        for t_l in 1..=iters.t_low {
            h_l = low_update(tape, h_h, h_l, enc, idx, v, t_h, t_l)?;
            counter.low += 1;
        }
    }
    Ok(HiddenState { h_l, h_h })
}

/// `h_L W`, one scalar per node.
pub fn node_readout(tape: &mut Tape, h_l: Var, w: Var) -> Result<Var> {
    tape.matmul(h_l, w)
}

/// `[h_min(e), h_max(e), e] W`, one scalar per edge.
pub fn edge_readout(tape: &mut Tape, h_l: Var, e_edges: Var, idx: &HierarchyIndex, w: Var) -> Result<Var> {
    let a = tape.gather_rows(h_l, &idx.edge_min)?;
    let b = tape.gather_rows(h_l, &idx.edge_max)?;
    let z = tape.concat_cols(&[a, b, e_edges])?;
    tape.matmul(z, w)
}

/// Recorded forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub predictions: Vec<Var>,
    pub state: HiddenState,
    pub counter: UpdateCounter,
}

fn readout(tape: &mut Tape, model: &GhrModel, state: HiddenState, enc: &EncodedInputs, idx: &HierarchyIndex, v: &GhrVars) -> Result<Var> {
    match model.config.readout {
        ReadoutKind::Node => node_readout(tape, state.h_l, v.readout),
        ReadoutKind::Edge => edge_readout(tape, state.h_l, enc.e_l_edges, idx, v.readout),
    }
}

/// Runs `iters.r` global steps from the start state, reading out after each.
pub fn forward(tape: &mut Tape, model: &GhrModel, h: &Hierarchy, iters: Iterations) -> Result<Forward> {
    let idx = HierarchyIndex::new(h);
    let v = model.bind(tape);
    let enc = encode(tape, h, &idx, &v)?;
    let mut state = init_state(tape, &idx, &v)?;
    let mut counter = UpdateCounter::default();
    let mut predictions = Vec::with_capacity(iters.r);
    for _ in 0..iters.r {
        state = global_step(tape, state, &enc, &idx, &v, iters, &mut counter)?;
        predictions.push(readout(tape, model, state, &enc, &idx, &v)?);
    }
    Ok(Forward { predictions, state, counter })
}

/// Per-step predictions without keeping a tape beyond one global step.
/// Produces the same values as [`forward`].
pub fn predict(model: &GhrModel, h: &Hierarchy, iters: Iterations) -> Result<Vec<Tensor>> {
    let idx = HierarchyIndex::new(h);
    let mut tape = Tape::new();
    let v = model.bind(&mut tape);
    let enc = encode(&mut tape, h, &idx, &v)?;
    let s = init_state(&mut tape, &idx, &v)?;
    let (mut h_l, mut h_h) = (tape.value(s.h_l).clone(), tape.value(s.h_h).clone());
    let enc_values = [enc.f_l, enc.e_l_edges, enc.e_l, enc.e_h].map(|x| tape.value(x).clone());
    let mut out = Vec::with_capacity(iters.r);
    let mut counter = UpdateCounter::default();
    for _ in 0..iters.r {
        let mut tape = Tape::new();
        let v = model.bind(&mut tape);
        let [f_l, e_l_edges, e_l, e_h] = enc_values.clone().map(|t| tape.constant(t));
        let enc = EncodedInputs { f_l, e_l_edges, e_l, e_h };
        let state = HiddenState { h_l: tape.constant(h_l), h_h: tape.constant(h_h) };
        let state = global_step(&mut tape, state, &enc, &idx, &v, iters, &mut counter)?;
        let y = readout(&mut tape, model, state, &enc, &idx, &v)?;
        out.push(tape.value(y).clone());
        h_l = tape.value(state.h_l).clone();
        h_h = tape.value(state.h_h).clone();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::hierarchy::ClusterAssignment;

    fn small_config() -> GhrConfig {
        GhrConfig { m: 4, r: 2, t_high: 2, t_low: 3, ..GhrConfig::default() }
    }

    fn path_hierarchy() -> Hierarchy {
        let g = Graph::structural(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let a = ClusterAssignment::new(vec![0, 0, 1, 1], 2).unwrap();
        Hierarchy::from_assignment(g, a, Reduce::Sum, Reduce::Sum).unwrap()
    }

    #[test]
    fn update_counts_match_depth() {
        let model = GhrModel::new(small_config(), 1).unwrap();
        let mut tape = Tape::new();
        let f = forward(&mut tape, &model, &path_hierarchy(), model.config.training_iterations()).unwrap();
        assert_eq!(f.counter, UpdateCounter { high: 4, low: 12 });
        assert_eq!(f.predictions.len(), 2);
    }

    #[test]
    fn predict_matches_forward_bit_exactly() {
        let model = GhrModel::new(GhrConfig { time_informed: true, ..small_config() }, 2).unwrap();
        let h = path_hierarchy();
        let it = model.config.training_iterations();
        let mut tape = Tape::new();
        let f = forward(&mut tape, &model, &h, it).unwrap();
        let p = predict(&model, &h, it).unwrap();
        for (a, b) in f.predictions.iter().zip(&p) {
            assert_eq!(tape.value(*a), b);
        }
    }

    #[test]
    fn config_validation() {
        assert!(GhrModel::new(GhrConfig { gamma: 0.0, ..small_config() }, 0).is_err());
        assert!(GhrModel::new(GhrConfig { t_low: 0, ..small_config() }, 0).is_err());
        let c = GhrConfig { inference: IterationOverride { t_low: Some(8), ..Default::default() }, ..small_config() };
        assert_eq!(c.inference_iterations(), Iterations { r: 2, t_high: 2, t_low: 8 });
    }
}
