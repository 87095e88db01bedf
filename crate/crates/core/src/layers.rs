//! Message-passing layers built from tape primitives.
//!
//! A layer is `h' = h + U(aggregate(rms_norm(h)))` where the aggregation is
//! GINE, `(1 + ε) x_i + Σ_{j→i} relu(x_j + e_{ji})`, and the update `U` is
//! either a SwiGLU block or a two-layer ReLU perceptron.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;
use crate::graph::{Arcs, Index};

/// Update network applied after aggregation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    GatedGine,
    Gine,
}

impl Backbone {
    pub fn as_str(self) -> &'static str {
        match self {
            Backbone::GatedGine => "gated_gine",
            Backbone::Gine => "gine",
        }
    }
}

/// Arc endpoints of one (possibly batched) graph, as seen by the tape.
#[derive(Clone, Debug)]
pub struct ArcIndex {
    pub src: Index,
    pub dst: Index,
    pub num_nodes: usize,
}

impl ArcIndex {
    pub fn from_arcs(arcs: &Arcs, num_nodes: usize) -> Self {
        ArcIndex { src: arcs.src.clone(), dst: arcs.dst.clone(), num_nodes }
    }
}

/// Parameter handles of one message-passing layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub backbone: Backbone,
    pub norm: ParamId,
    pub epsilon: ParamId,
    /// SwiGLU: content, gate, output. Perceptron: first, second.
    pub weights: Vec<ParamId>,
}

impl LayerParams {
    /// Registers a layer under `prefix`: unit norm scale, ε = 0, Glorot weights.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        backbone: Backbone,
        m: usize,
        rng: &mut R,
    ) -> Self {
        let norm = store.add(&format!("{prefix}.norm"), Tensor::ones(1, m), true);
        let epsilon = store.add(&format!("{prefix}.eps"), Tensor::scalar(0.0), true);
        let names: &[&str] = match backbone {
            Backbone::GatedGine => &["content", "gate", "out"],
            Backbone::Gine => &["mlp1", "mlp2"],
        };
        let weights = names.iter().map(|n| store.add_glorot(&format!("{prefix}.{n}"), m, m, rng)).collect();
        LayerParams { backbone, norm, epsilon, weights }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> LayerVars {
        LayerVars {
            backbone: self.backbone,
            norm: tape.param(store, self.norm),
            epsilon: tape.param(store, self.epsilon),
            weights: self.weights.iter().map(|&w| tape.param(store, w)).collect(),
        }
    }
}

/// Layer parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct LayerVars {
    pub backbone: Backbone,
    pub norm: Var,
    pub epsilon: Var,
    pub weights: Vec<Var>,
}

pub fn rms_norm(tape: &mut Tape, x: Var, w: Var) -> Result<Var> {
    tape.rms_norm(x, w)
}

/// `((X Wc) ⊙ swish(X Wg)) Wo`.
pub fn swiglu(tape: &mut Tape, x: Var, content: Var, gate: Var, out: Var) -> Result<Var> {
    let c = tape.matmul(x, content)?;
    let g = tape.matmul(x, gate)?;
    let g = tape.swish(g)?;
    let h = tape.hadamard(c, g)?;
    tape.matmul(h, out)
}

/// `relu(X W1) W2`.
pub fn perceptron(tape: &mut Tape, x: Var, w1: Var, w2: Var) -> Result<Var> {
    let h = tape.matmul(x, w1)?;
    let h = tape.relu(h)?;
    tape.matmul(h, w2)
}

/// `(1 + ε) x_i + Σ_{j→i} relu(x_j + e_{ji})` with `e` holding one row per arc
/// and `ε` a `1 × 1` value.
pub fn gine_aggregate(tape: &mut Tape, x: Var, arcs: &ArcIndex, e: Var, epsilon: Var) -> Result<Var> {
    let (n, m) = tape.shape(x);
    let ones_col = tape.constant(Tensor::ones(n, 1));
    let ones_row = tape.constant(Tensor::ones(1, m));
    let eps_row = tape.matmul(epsilon, ones_row)?;
    let eps_full = tape.matmul(ones_col, eps_row)?;
    let scaled = tape.hadamard(x, eps_full)?;
    let center = tape.add(x, scaled)?;
    if arcs.src.is_empty() {
        return Ok(center);
    }
    let xj = tape.gather_rows(x, &arcs.src)?;
    let msg = tape.add(xj, e)?;
    let msg = tape.relu(msg)?;
    let agg = tape.scatter_add_rows(msg, &arcs.dst, arcs.num_nodes)?;
    tape.add(center, agg)
}

/// The update `U(aggregate(rms_norm(x)))` without the residual.
pub fn layer_update(tape: &mut Tape, x: Var, arcs: &ArcIndex, e: Var, p: &LayerVars) -> Result<Var> {
    let xn = tape.rms_norm(x, p.norm)?;
    let agg = gine_aggregate(tape, xn, arcs, e, p.epsilon)?;
    match p.backbone {
        Backbone::GatedGine => swiglu(tape, agg, p.weights[0], p.weights[1], p.weights[2]),
        Backbone::Gine => perceptron(tape, agg, p.weights[0], p.weights[1]),
    }
}

/// `h + SwiGLU(gine_aggregate(rms_norm(h)))`.
pub fn gated_gine_step(tape: &mut Tape, h: Var, arcs: &ArcIndex, e: Var, p: &LayerVars) -> Result<Var> {
    debug_assert_eq!(p.backbone, Backbone::GatedGine);
    let u = layer_update(tape, h, arcs, e, p)?;
    tape.add(h, u)
}

/// `h + relu(gine_aggregate(rms_norm(h)) W1) W2`.
pub fn gine_step(tape: &mut Tape, h: Var, arcs: &ArcIndex, e: Var, p: &LayerVars) -> Result<Var> {
    debug_assert_eq!(p.backbone, Backbone::Gine);
    let u = layer_update(tape, h, arcs, e, p)?;
    tape.add(h, u)
}

/// Residual step for either backbone.
pub fn layer_step(tape: &mut Tape, h: Var, arcs: &ArcIndex, e: Var, p: &LayerVars) -> Result<Var> {
    let u = layer_update(tape, h, arcs, e, p)?;
    tape.add(h, u)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::finite_difference_check;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn swiglu_scalar_case() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(2.0));
        let one = tape.constant(Tensor::scalar(1.0));
        let y = swiglu(&mut tape, x, one, one, one).unwrap();
        assert!((tape.value(y).get(0, 0) - 3.523188).abs() < 1e-6);
        assert!((tape.value(y).get(0, 0) - 2.0 * 2.0 * sigmoid(2.0)).abs() < 1e-12);
    }

    #[test]
    fn swiglu_zero_gate_and_zero_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let p = LayerParams::new(&mut store, "l", Backbone::GatedGine, 3, &mut rng);
        let mut tape = Tape::new();
        let v = p.bind(&mut tape, &store);
        let x = tape.constant(Tensor::from_vec(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.0]).unwrap());
        let zero = tape.constant(Tensor::zeros(3, 3));
        let y = swiglu(&mut tape, x, v.weights[0], zero, v.weights[2]).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
        let x0 = tape.constant(Tensor::zeros(2, 3));
        let y = swiglu(&mut tape, x0, v.weights[0], v.weights[1], v.weights[2]).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn aggregate_isolated_and_star() {
        let mut tape = Tape::new();
        let arcs = ArcIndex { src: Index::from(vec![]), dst: Index::from(vec![]), num_nodes: 1 };
        let x = tape.constant(Tensor::row_vector(&[1.5, -2.0]));
        let e = tape.constant(Tensor::zeros(0, 2));
        let eps = tape.constant(Tensor::scalar(0.25));
        let y = gine_aggregate(&mut tape, x, &arcs, e, eps).unwrap();
        assert_eq!(tape.value(y).data(), &[1.875, -2.5]);

        // Star: centre 0 with leaves 1..=3 at value -1.
        let src = vec![1, 0, 2, 0, 3, 0];
        let dst = vec![0, 1, 0, 2, 0, 3];
        let arcs = ArcIndex { src: Index::from(src), dst: Index::from(dst), num_nodes: 4 };
        let x = tape.constant(Tensor::from_vec(4, 1, vec![0.7, -1.0, -1.0, -1.0]).unwrap());
        let e = tape.constant(Tensor::zeros(6, 1));
        let eps = tape.constant(Tensor::scalar(0.0));
        let y = gine_aggregate(&mut tape, x, &arcs, e, eps).unwrap();
        assert_eq!(tape.value(y).get(0, 0), 0.7);
    }

    #[test]
    fn gine_hand_case() {
        // Two nodes, one edge, m = 1, all weights 1.
        let mut tape = Tape::new();
        let arcs = ArcIndex { src: Index::from(vec![0, 1]), dst: Index::from(vec![1, 0]), num_nodes: 2 };
        let h = tape.constant(Tensor::column(&[2.0, -3.0]));
        let e = tape.constant(Tensor::column(&[0.5, 0.5]));
        let one = tape.constant(Tensor::scalar(1.0));
        let eps = tape.constant(Tensor::scalar(0.0));
        let v = LayerVars { backbone: Backbone::Gine, norm: one, epsilon: eps, weights: vec![one, one] };
        let out = gine_step(&mut tape, h, &arcs, e, &v).unwrap();
        // rms_norm of a scalar is its sign.
        let agg = [1.0 + (-1.0f64 + 0.5).max(0.0), -1.0 + (1.0f64 + 0.5).max(0.0)];
        let expected = [2.0 + agg[0].max(0.0), -3.0 + agg[1].max(0.0)];
        for (got, want) in tape.value(out).data().iter().zip(expected) {
            assert!((got - want).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_update_weights_are_a_fixed_point() {
        for backbone in [Backbone::GatedGine, Backbone::Gine] {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut store = ParamStore::new();
            let p = LayerParams::new(&mut store, "l", backbone, 4, &mut rng);
            for &w in &p.weights {
                store.set_value(w, Tensor::zeros(4, 4)).unwrap();
            }
            let mut tape = Tape::new();
            let v = p.bind(&mut tape, &store);
            let arcs = ArcIndex { src: Index::from(vec![0, 1]), dst: Index::from(vec![1, 0]), num_nodes: 2 };
            let h0 = Tensor::from_vec(2, 4, (0..8).map(|i| i as f64 - 3.5).collect()).unwrap();
            let h = tape.constant(h0.clone());
            let e = tape.constant(Tensor::ones(2, 4));
            let out = layer_step(&mut tape, h, &arcs, e, &v).unwrap();
            assert_eq!(tape.value(out), &h0);
        }
    }

    #[test]
    fn layer_gradients_match_finite_differences() {
        for backbone in [Backbone::GatedGine, Backbone::Gine] {
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let mut store = ParamStore::new();
            let p = LayerParams::new(&mut store, "l", backbone, 4, &mut rng);
            store.set_value(p.epsilon, Tensor::scalar(0.3)).unwrap();
            let arcs = ArcIndex {
                src: Index::from(vec![0, 1, 1, 2, 2, 0]),
                dst: Index::from(vec![1, 0, 2, 1, 0, 2]),
                num_nodes: 3,
            };
            let h0 = Tensor::from_vec(3, 4, (0..12).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.4 + 0.1).collect()).unwrap();
            let e0 = Tensor::from_vec(6, 4, (0..24).map(|i| ((i * 3 % 7) as f64 - 3.0) * 0.2).collect()).unwrap();
            let report = finite_difference_check(
                |tape, s| {
                    let v = p.bind(tape, s);
                    let h = tape.constant(h0.clone());
                    let e = tape.constant(e0.clone());
                    let out = layer_step(tape, h, &arcs, e, &v)?;
                    let sq = tape.hadamard(out, out)?;
                    tape.sum_all(sq)
                },
                &store,
                1e-5,
            )
            .unwrap();
            assert!(report.max_rel_error <= 1e-6, "{backbone:?}: {report:?}");
        }
    }
}
