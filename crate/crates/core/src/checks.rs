//! Self-contained correctness checks shared by the `selfcheck` command and
//! the test suites.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{finite_difference_check, GradCheckReport, ParamStore, Tensor};
use crate::data::{sample_rgg, SsspInstance};
use crate::error::Result;
use crate::graph::Graph;
use crate::hierarchy::{Hierarchy, PoolingConfig};
use crate::layers::{layer_step, ArcIndex, Backbone, LayerParams};
use crate::model::GhrConfig;
use crate::network::{Network, NetworkConfig};
use crate::seeding;
use crate::train::{full_model_grad_check, LossKind};

/// Gradient check of one backbone layer on a random 5-node graph with
/// `m = 4`, loss `sum(out ⊙ out)`.
pub fn layer_grad_check(backbone: Backbone, seed: u64) -> Result<GradCheckReport> {
    let mut rng = seeding::stream(seed, "check.layer", 0);
    let mut store = ParamStore::new();
    let p = LayerParams::new(&mut store, "l", backbone, 4, &mut rng);
    store.set_value(p.epsilon, Tensor::scalar(rng.random_range(-0.5..0.5)))?;
    let g = Graph::structural(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2)])?;
    let arcs = ArcIndex::from_arcs(g.arcs(), g.num_nodes());
    let random = |rows, rng: &mut rand_chacha::ChaCha8Rng| {
        Tensor::from_vec(rows, 4, (0..rows * 4).map(|_| rng.random_range(-1.0..1.0)).collect())
    };
    let h0 = random(5, &mut rng)?;
    let e0 = random(g.arcs().len(), &mut rng)?;
    finite_difference_check(
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
}

/// Full forward + discounted loss check with `m = 8, R = 2, T_H = 2,
/// T_L = 2` on a 12-node random geometric graph. The step is 1e-6: hidden
/// states reach magnitudes in the hundreds, and a wider step more often
/// straddles a ReLU, max-pool or L1 kink.
pub fn model_grad_check(backbone: Backbone, seed: u64) -> Result<GradCheckReport> {
    let g = (0..)
        .map(|k| sample_rgg(12, 12, 5.0, &mut seeding::stream(seed, "check.model", k)))
        .find(|g| g.as_ref().map_or(true, |g| g.num_nodes() == 12))
        .expect("unbounded search")?;
    let inst = SsspInstance::new(g, 0, None)?;
    let cfg = GhrConfig { m: 8, r: 2, t_high: 2, t_low: 2, backbone, ..GhrConfig::default() };
    let net = Network::new(NetworkConfig::Ghr(cfg), seed)?;
    full_model_grad_check(&net, &inst, LossKind::L1, 1e-6)
}

/// Hop distances between all node pairs.
pub fn all_pairs(g: &Graph) -> Result<Vec<Vec<Option<usize>>>> {
    (0..g.num_nodes()).map(|s| Ok(g.bfs_distances(s)?.0)).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LipschitzReport {
    pub graphs: usize,
    pub pairs: usize,
    /// Pairs with `d_H(c(u), c(v)) > d_L(u, v)`.
    pub pair_violations: usize,
    /// Graphs with `diam(G_H) > diam(G_L)`.
    pub diameter_violations: usize,
}

impl LipschitzReport {
    pub fn passed(&self) -> bool {
        self.pair_violations == 0 && self.diameter_violations == 0
    }
}

pub fn lipschitz_violations(h: &Hierarchy) -> Result<(usize, usize)> {
    let dl = all_pairs(&h.low)?;
    let dh = all_pairs(&h.high)?;
    let c = h.assignment.cluster_of();
    let mut pairs = 0;
    let mut bad = 0;
    for (u, row) in dl.iter().enumerate() {
        for (v, d) in row.iter().enumerate() {
            if let Some(d) = d {
                pairs += 1;
                match dh[c[u]][c[v]] {
                    Some(x) if x <= *d => {}
                    _ => bad += 1,
                }
            }
        }
    }
    Ok((pairs, bad))
}

/// Distance and diameter contraction over `count` random geometric graphs
/// of 10–100 nodes.
pub fn lipschitz_sweep(count: usize, seed: u64, pooling: &PoolingConfig) -> Result<LipschitzReport> {
    let mut report = LipschitzReport::default();
    for k in 0..count {
        let mut rng = seeding::stream(seed, "check.lipschitz", k as u64);
        let g = sample_rgg(10, 100, 8.0, &mut rng)?;
        let h = pooling.build(&g)?;
        let (pairs, bad) = lipschitz_violations(&h)?;
        report.graphs += 1;
        report.pairs += pairs;
        report.pair_violations += bad;
        if h.high.diameter() > h.low.diameter() {
            report.diameter_violations += 1;
        }
    }
    Ok(report)
}

/// Relabels nodes, edges and clusters of `h` by random permutations.
/// Returns the permuted hierarchy and the node permutation (`old -> new`).
pub fn permute_hierarchy<R: Rng + ?Sized>(h: &Hierarchy, rng: &mut R) -> Result<(Hierarchy, Vec<usize>)> {
    let shuffled = |n: usize, rng: &mut R| {
        let mut p: Vec<usize> = (0..n).collect();
        p.shuffle(rng);
        p
    };
    let node_perm = shuffled(h.low.num_nodes(), rng);
    let edge_order = shuffled(h.low.num_edges(), rng);
    let cluster_perm = shuffled(h.assignment.num_clusters(), rng);
    let high_edge_order = shuffled(h.high.num_edges(), rng);
    let low = h.low.permuted(&node_perm, &edge_order)?;
    let high = h.high.permuted(&cluster_perm, &high_edge_order)?;
    let assignment = h.assignment.permuted(&node_perm, &cluster_perm)?;
    Ok((Hierarchy { low, high, assignment, feature_reduce: h.feature_reduce }, node_perm))
}

/// Largest deviation between `P · f(x)` and `f(P · x)` over all per-step
/// predictions.
pub fn permutation_deviation(net: &Network, h: &Hierarchy, seed: u64) -> Result<f64> {
    let mut rng = seeding::stream(seed, "check.permutation", 0);
    let (ph, perm) = permute_hierarchy(h, &mut rng)?;
    let iters = net.training_iterations();
    let a = net.predict(h, iters)?;
    let b = net.predict(&ph, iters)?;
    let mut worst = 0.0f64;
    for (ya, yb) in a.iter().zip(&b) {
        for (old, &new) in perm.iter().enumerate() {
            for c in 0..ya.cols() {
                worst = worst.max((ya.get(old, c) - yb.get(new, c)).abs());
            }
        }
    }
    Ok(worst)
}

/// Zeroes every backbone and readout weight; predictions must then vanish.
pub fn zero_weight_predictions(net: &Network, h: &Hierarchy) -> Result<f64> {
    let mut net = net.clone();
    let ids: Vec<_> = net.store().ids().collect();
    for id in ids {
        let name = net.store().name(id).to_string();
        let zero = name == "readout"
            || [".content", ".gate", ".out", ".mlp1", ".mlp2"].iter().any(|s| name.ends_with(s));
        if zero {
            let (r, c) = net.store().value(id).shape();
            net.store_mut().set_value(id, Tensor::zeros(r, c))?;
        }
    }
    let preds = net.predict(h, net.training_iterations())?;
    Ok(preds.iter().flat_map(|t| t.data().iter()).fold(0.0f64, |m, v| m.max(v.abs())))
}
