//! Two-level graph hierarchies built by quotient pooling.
//!
//! A [`ClusterAssignment`] partitions the low-level nodes; the high-level graph
//! has one node per cluster and an edge between two clusters whenever some
//! low-level edge crosses them. Any low-level path therefore projects onto a
//! high-level walk of at most the same length, so high-level distances never
//! exceed low-level ones.
//!
//! Two partitioning schemes are provided: Graclus-style greedy matching
//! (composable over several passes) and fixed `b × b` blocks on square lattices.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::{Graph, Index};

/// Reduction applied to the members of a cluster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

impl Reduce {
    fn apply(self, values: impl Iterator<Item = f64>) -> f64 {
        let mut count = 0usize;
        let mut acc = match self {
            Reduce::Max => f64::NEG_INFINITY,
            _ => 0.0,
        };
        for v in values {
            count += 1;
            acc = match self {
                Reduce::Max => acc.max(v),
                _ => acc + v,
            };
        }
        match self {
            _ if count == 0 => 0.0,
            Reduce::Mean => acc / count as f64,
            _ => acc,
        }
    }
}

/// Partition of low-level nodes into contiguous cluster ids `0..num_clusters`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterAssignment {
    cluster_of: Index,
    num_clusters: usize,
}

impl ClusterAssignment {
    /// Checks that every id is in range and every cluster is non-empty.
    pub fn new(cluster_of: Vec<usize>, num_clusters: usize) -> Result<Self> {
        let mut hit = vec![false; num_clusters];
        for (v, &c) in cluster_of.iter().enumerate() {
            if c >= num_clusters {
                return Err(Error::InvalidAssignment(format!(
                    "node {v} mapped to cluster {c} of {num_clusters}"
                )));
            }
            hit[c] = true;
        }
        if let Some(c) = hit.iter().position(|h| !h) {
            return Err(Error::InvalidAssignment(format!("cluster {c} is empty")));
        }
        Ok(ClusterAssignment { cluster_of: cluster_of.into(), num_clusters })
    }

    /// Every node in its own cluster.
    pub fn identity(n: usize) -> Self {
        ClusterAssignment { cluster_of: (0..n).collect::<Vec<_>>().into(), num_clusters: n }
    }

    #[inline]
    pub fn cluster(&self, v: usize) -> usize {
        self.cluster_of[v]
    }

    pub fn cluster_of(&self) -> &Index {
        &self.cluster_of
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn num_nodes(&self) -> usize {
        self.cluster_of.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clusters];
        for &c in self.cluster_of.iter() {
            sizes[c] += 1;
        }
        sizes
    }

    /// Member lists per cluster, in increasing node order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.num_clusters];
        for (v, &c) in self.cluster_of.iter().enumerate() {
            members[c].push(v);
        }
        members
    }

    /// `self` followed by `next`, where `next` partitions this assignment's clusters.
    pub fn compose(&self, next: &ClusterAssignment) -> Result<ClusterAssignment> {
        if next.num_nodes() != self.num_clusters {
            return Err(Error::InvalidAssignment(format!(
                "cannot compose: {} clusters feed an assignment over {} nodes",
                self.num_clusters,
                next.num_nodes()
            )));
        }
        let composed: Vec<usize> = self.cluster_of.iter().map(|&c| next.cluster(c)).collect();
        Ok(ClusterAssignment { cluster_of: composed.into(), num_clusters: next.num_clusters })
    }

    /// Relabels low nodes (`node_perm[old] = new`) and clusters
    /// (`cluster_perm[old] = new`).
    pub fn permuted(&self, node_perm: &[usize], cluster_perm: &[usize]) -> Result<Self> {
        let mut out = vec![0; self.num_nodes()];
        for (old, &c) in self.cluster_of.iter().enumerate() {
            out[node_perm[old]] = cluster_perm[c];
        }
        ClusterAssignment::new(out, self.num_clusters)
    }
}

/// One Graclus matching pass.
///
/// Nodes are visited in a random permutation drawn from `rng`; each unmatched
/// node is paired with its unmatched neighbor of minimum degree (smallest index
/// on ties). Clusters have one or two members and are numbered in visit order.
pub fn graclus_match<R: Rng + ?Sized>(g: &Graph, rng: &mut R) -> ClusterAssignment {
    let n = g.num_nodes();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut cluster_of = vec![usize::MAX; n];
    let mut next = 0;
    for &u in &order {
        if cluster_of[u] != usize::MAX {
            continue;
        }
        let partner = g
            .neighbors(u)
            .iter()
            .copied()
            .filter(|&w| cluster_of[w] == usize::MAX)
            .min_by_key(|&w| (g.degree(w), w));
        cluster_of[u] = next;
        if let Some(w) = partner {
            cluster_of[w] = next;
        }
        next += 1;
    }
    ClusterAssignment { cluster_of: cluster_of.into(), num_clusters: next }
}

/// Quotient of `g` under `a`: one node per cluster, one edge per distinct pair
/// of clusters joined by a low-level edge (self-loops dropped). High-level
/// edges are ordered lexicographically by `(min, max)` cluster id and carry
/// `edge_reduce` over the low-level edge features mapping onto them.
///
/// Node features are left zero (`num_clusters × d_n`); use [`pool_features`]
/// to fill them. Positions, when present, become cluster centroids.
pub fn quotient_graph(g: &Graph, a: &ClusterAssignment, edge_reduce: Reduce) -> Result<Graph> {
    if a.num_nodes() != g.num_nodes() {
        return Err(Error::InvalidAssignment(format!(
            "assignment covers {} nodes, graph has {}",
            a.num_nodes(),
            g.num_nodes()
        )));
    }
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (k, &(u, v)) in g.edges().iter().enumerate() {
        let (cu, cv) = (a.cluster(u), a.cluster(v));
        if cu != cv {
            groups.entry((cu.min(cv), cu.max(cv))).or_default().push(k);
        }
    }
    let d_e = g.edge_features().cols();
    let mut ef = Tensor::zeros(groups.len(), d_e);
    for (row, members) in groups.values().enumerate() {
        for c in 0..d_e {
            let value = edge_reduce.apply(members.iter().map(|&k| g.edge_features().get(k, c)));
            ef.set(row, c, value);
        }
    }
    let high = Graph::new(
        a.num_clusters(),
        groups.keys().copied(),
        Tensor::zeros(a.num_clusters(), g.node_features().cols()),
        ef,
    )?;
    match g.positions() {
        Some(p) => {
            let centroids = a
                .members()
                .iter()
                .map(|m| {
                    let k = m.len() as f64;
                    let sx: f64 = m.iter().map(|&v| p[v][0]).sum();
                    let sy: f64 = m.iter().map(|&v| p[v][1]).sum();
                    [sx / k, sy / k]
                })
                .collect();
            high.with_positions(centroids)
        }
        None => Ok(high),
    }
}

/// Row `c` of the result is `reduce` over the rows of `x` belonging to cluster `c`.
pub fn pool_features(x: &Tensor, a: &ClusterAssignment, reduce: Reduce) -> Result<Tensor> {
    if x.rows() != a.num_nodes() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows for an assignment over {} nodes",
            x.rows(),
            a.num_nodes()
        )));
    }
    let members = a.members();
    let mut out = Tensor::zeros(a.num_clusters(), x.cols());
    for (c, m) in members.iter().enumerate() {
        for col in 0..x.cols() {
            out.set(c, col, reduce.apply(m.iter().map(|&v| x.get(v, col))));
        }
    }
    Ok(out)
}

/// Broadcasts cluster rows back to their members: row `u` copies row `cluster(u)`.
pub fn unpool_features(x_high: &Tensor, a: &ClusterAssignment) -> Result<Tensor> {
    if x_high.rows() != a.num_clusters() {
        return Err(Error::ShapeMismatch(format!(
            "{} high-level rows for {} clusters",
            x_high.rows(),
            a.num_clusters()
        )));
    }
    Ok(x_high.select_rows(a.cluster_of()))
}

/// Low-level graph, its pooled abstraction and the map between them.
#[derive(Clone, Debug)]
pub struct Hierarchy {
    pub low: Graph,
    pub high: Graph,
    pub assignment: ClusterAssignment,
    pub feature_reduce: Reduce,
}

impl Hierarchy {
    /// Builds the hierarchy induced by an arbitrary assignment.
    pub fn from_assignment(
        low: Graph,
        assignment: ClusterAssignment,
        feature_reduce: Reduce,
        edge_reduce: Reduce,
    ) -> Result<Hierarchy> {
        let high = quotient_graph(&low, &assignment, edge_reduce)?;
        let pooled = pool_features(low.node_features(), &assignment, feature_reduce)?;
        let high = high.with_node_features(pooled)?;
        Ok(Hierarchy { low, high, assignment, feature_reduce })
    }

    /// Trivial hierarchy where every node is its own cluster.
    pub fn identity(low: Graph, feature_reduce: Reduce) -> Hierarchy {
        let a = ClusterAssignment::identity(low.num_nodes());
        Hierarchy::from_assignment(low, a, feature_reduce, Reduce::Sum)
            .expect("identity assignment is valid")
    }

    /// Block-diagonal union of hierarchies sharing one feature reduction.
    pub fn disjoint_union(parts: &[&Hierarchy]) -> Result<Hierarchy> {
        let feature_reduce = parts.first().map_or(Reduce::Sum, |h| h.feature_reduce);
        if parts.iter().any(|h| h.feature_reduce != feature_reduce) {
            return Err(Error::Config("hierarchies in a batch use different reductions".into()));
        }
        let lows: Vec<&Graph> = parts.iter().map(|h| &h.low).collect();
        let highs: Vec<&Graph> = parts.iter().map(|h| &h.high).collect();
        let mut cluster_of = Vec::new();
        let mut offset = 0;
        for h in parts {
            cluster_of.extend(h.assignment.cluster_of().iter().map(|c| c + offset));
            offset += h.assignment.num_clusters();
        }
        Ok(Hierarchy {
            low: Graph::disjoint_union(&lows)?,
            high: Graph::disjoint_union(&highs)?,
            assignment: ClusterAssignment::new(cluster_of, offset)?,
            feature_reduce,
        })
    }

    /// `|V_H| / |V_L|` (1 for an empty graph).
    pub fn node_ratio(&self) -> f64 {
        if self.low.num_nodes() == 0 {
            1.0
        } else {
            self.high.num_nodes() as f64 / self.low.num_nodes() as f64
        }
    }
}

/// Applies `iterations` Graclus passes and composes them into one
/// low-to-high map. The high-level graph is the quotient of `g` under the
/// composed map, so its edge features reduce over the original edges.
pub fn build_hierarchy<R: Rng + ?Sized>(
    g: &Graph,
    iterations: usize,
    feature_reduce: Reduce,
    edge_reduce: Reduce,
    rng: &mut R,
) -> Result<Hierarchy> {
    if iterations == 0 {
        return Err(Error::Config("hierarchy needs at least one Graclus iteration".into()));
    }
    let mut total = ClusterAssignment::identity(g.num_nodes());
    let mut current = g.clone();
    for _ in 0..iterations {
        let pass = graclus_match(&current, rng);
        current = quotient_graph(&current, &pass, edge_reduce)?;
        total = total.compose(&pass)?;
    }
    Hierarchy::from_assignment(g.clone(), total, feature_reduce, edge_reduce)
}

/// 4-neighbour `side × side` lattice; node `(x, y)` has id `y * side + x`.
pub fn lattice_graph(side: usize) -> Graph {
    let mut edges = Vec::new();
    for y in 0..side {
        for x in 0..side {
            let v = y * side + x;
            if x + 1 < side {
                edges.push((v, v + 1));
            }
            if y + 1 < side {
                edges.push((v, v + side));
            }
        }
    }
    let positions = (0..side * side).map(|v| [(v % side) as f64, (v / side) as f64]).collect();
    Graph::structural(side * side, &edges)
        .and_then(|g| g.with_positions(positions))
        .expect("lattice is a valid graph")
}

/// Block partition of an `L × L` lattice into `b × b` sub-grids.
#[derive(Clone, Debug)]
pub struct BlockPooling {
    pub assignment: ClusterAssignment,
    /// Block centres at unit lattice spacing, indexed by cluster id.
    pub centers: Vec<[f64; 2]>,
    /// Quotient of the lattice; edge features are centre-to-centre distances.
    pub high: Graph,
}

/// Maps node `(x, y)` to block `(x / b, y / b)`, linearised row-major.
pub fn geometric_block_assignment(side: usize, block: usize) -> Result<BlockPooling> {
    if block == 0 || side % block != 0 {
        return Err(Error::NonDivisibleBlock { side, block });
    }
    let per_row = side / block;
    let cluster_of: Vec<usize> =
        (0..side * side).map(|v| (v / side / block) * per_row + (v % side) / block).collect();
    let assignment = ClusterAssignment::new(cluster_of, per_row * per_row)?;
    let half = (block as f64 - 1.0) / 2.0;
    let centers: Vec<[f64; 2]> = (0..per_row * per_row)
        .map(|c| [((c % per_row) * block) as f64 + half, ((c / per_row) * block) as f64 + half])
        .collect();
    let quotient = quotient_graph(&lattice_graph(side), &assignment, Reduce::Sum)?;
    let mut ef = Tensor::zeros(quotient.num_edges(), 1);
    for (k, &(a, b)) in quotient.edges().iter().enumerate() {
        let (pa, pb) = (centers[a], centers[b]);
        ef.set(k, 0, ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt());
    }
    let high = Graph::new(
        quotient.num_nodes(),
        quotient.edges().iter().copied(),
        Tensor::zeros(quotient.num_nodes(), 1),
        ef,
    )?
    .with_positions(centers.clone())?;
    Ok(BlockPooling { assignment, centers, high })
}

/// How hierarchies are built for a model.
///
/// The Graclus visit order is seeded from `seed` and the graph's structure,
/// so the same graph always receives the same hierarchy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolingConfig {
    pub iterations: usize,
    pub feature_reduce: Reduce,
    pub edge_reduce: Reduce,
    pub seed: u64,
}

impl Default for PoolingConfig {
    fn default() -> Self {
        PoolingConfig { iterations: 3, feature_reduce: Reduce::Max, edge_reduce: Reduce::Sum, seed: 0 }
    }
}

impl PoolingConfig {
    pub fn build(&self, g: &Graph) -> Result<Hierarchy> {
        let mut key = g.num_nodes() as u64;
        for &(i, j) in g.edges() {
            key = crate::seeding::derive_seed(key, "edge", ((i as u64) << 32) ^ j as u64);
        }
        let mut rng = crate::seeding::stream(self.seed, "graclus", key);
        build_hierarchy(g, self.iterations, self.feature_reduce, self.edge_reduce, &mut rng)
    }
}
