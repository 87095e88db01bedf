//! Immutable attributed graphs and the exact combinatorial algorithms used as
//! labels and oracles: BFS hop distances, connected components and diameter.

use std::collections::{HashSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Shared, immutable index vector (arc endpoints, cluster maps, ...).
pub type Index = Arc<[usize]>;

/// Directed view of an undirected edge list.
///
/// Edge `k = {i, j}` yields arc `2k` (`i -> j`) and arc `2k + 1` (`j -> i`);
/// both read edge-feature row `k`.
#[derive(Clone, Debug)]
pub struct Arcs {
    pub src: Index,
    pub dst: Index,
    pub edge: Index,
}

impl Arcs {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// Undirected attributed graph `G = (V, E, X, e)`.
#[derive(Clone, Debug)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    node_features: Tensor,
    edge_features: Tensor,
    positions: Option<Vec<[f64; 2]>>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    arcs: Arcs,
}

impl Graph {
    /// Validates and indexes a graph. Edges are stored as `(min, max)` pairs in
    /// the given order; edge-feature row `k` belongs to edge `k`.
    pub fn new(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        node_features: Tensor,
        edge_features: Tensor,
    ) -> Result<Graph> {
        let mut canonical = Vec::new();
        let mut seen = HashSet::new();
        for (i, j) in edges {
            if i >= num_nodes || j >= num_nodes {
                return Err(Error::IndexOutOfRange(format!(
                    "edge {{{i}, {j}}} in a graph with {num_nodes} nodes"
                )));
            }
            if i == j {
                return Err(Error::SelfLoop(i));
            }
            let e = (i.min(j), i.max(j));
            if !seen.insert(e) {
                return Err(Error::DuplicateEdge(e.0, e.1));
            }
            canonical.push(e);
        }
        if node_features.rows() != num_nodes {
            return Err(Error::ShapeMismatch(format!(
                "{} node-feature rows for {num_nodes} nodes",
                node_features.rows()
            )));
        }
        if edge_features.rows() != canonical.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} edge-feature rows for {} edges",
                edge_features.rows(),
                canonical.len()
            )));
        }

        let mut degree = vec![0usize; num_nodes];
        for &(i, j) in &canonical {
            degree[i] += 1;
            degree[j] += 1;
        }
        let mut offsets = vec![0usize; num_nodes + 1];
        for v in 0..num_nodes {
            offsets[v + 1] = offsets[v] + degree[v];
        }
        let mut fill = offsets.clone();
        let mut neighbors = vec![0usize; offsets[num_nodes]];
        for &(i, j) in &canonical {
            neighbors[fill[i]] = j;
            fill[i] += 1;
            neighbors[fill[j]] = i;
            fill[j] += 1;
        }
        for v in 0..num_nodes {
            neighbors[offsets[v]..offsets[v + 1]].sort_unstable();
        }

        let mut src = Vec::with_capacity(2 * canonical.len());
        let mut dst = Vec::with_capacity(2 * canonical.len());
        let mut edge = Vec::with_capacity(2 * canonical.len());
        for (k, &(i, j)) in canonical.iter().enumerate() {
            src.extend([i, j]);
            dst.extend([j, i]);
            edge.extend([k, k]);
        }

        Ok(Graph {
            num_nodes,
            edges: canonical,
            node_features,
            edge_features,
            positions: None,
            offsets,
            neighbors,
            arcs: Arcs { src: src.into(), dst: dst.into(), edge: edge.into() },
        })
    }

    /// Graph with the given edges, a single zero node feature and unit edge
    /// features. Convenient for structural tests.
    pub fn structural(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Graph> {
        Graph::new(
            num_nodes,
            edges.iter().copied(),
            Tensor::zeros(num_nodes, 1),
            Tensor::ones(edges.len(), 1),
        )
    }

    pub fn with_positions(mut self, positions: Vec<[f64; 2]>) -> Result<Graph> {
        if positions.len() != self.num_nodes {
            return Err(Error::ShapeMismatch(format!(
                "{} positions for {} nodes",
                positions.len(),
                self.num_nodes
            )));
        }
        self.positions = Some(positions);
        Ok(self)
    }

    pub fn with_node_features(mut self, node_features: Tensor) -> Result<Graph> {
        if node_features.rows() != self.num_nodes {
            return Err(Error::ShapeMismatch(format!(
                "{} node-feature rows for {} nodes",
                node_features.rows(),
                self.num_nodes
            )));
        }
        self.node_features = node_features;
        Ok(self)
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    #[inline]
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_features(&self) -> &Tensor {
        &self.node_features
    }

    pub fn edge_features(&self) -> &Tensor {
        &self.edge_features
    }

    pub fn positions(&self) -> Option<&[[f64; 2]]> {
        self.positions.as_deref()
    }

    pub fn arcs(&self) -> &Arcs {
        &self.arcs
    }

    /// Sorted neighbor list of `v`.
    #[inline]
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    #[inline]
    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.num_nodes && self.neighbors(i).binary_search(&j).is_ok()
    }

    /// Exact unweighted hop counts from `source`.
    pub fn bfs_distances(&self, source: usize) -> Result<Distances> {
        if source >= self.num_nodes {
            return Err(Error::IndexOutOfRange(format!(
                "source {source} in a graph with {} nodes",
                self.num_nodes
            )));
        }
        let mut dist = vec![None; self.num_nodes];
        let mut queue = VecDeque::new();
        dist[source] = Some(0);
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap_or(0);
            for &w in self.neighbors(u) {
                if dist[w].is_none() {
                    dist[w] = Some(du + 1);
                    queue.push_back(w);
                }
            }
        }
        Ok(Distances(dist))
    }

    /// Largest finite distance from `source`.
    pub fn eccentricity(&self, source: usize) -> Result<usize> {
        Ok(self.bfs_distances(source)?.max_finite().unwrap_or(0))
    }

    /// Maximum finite shortest-path distance over all node pairs. For
    /// disconnected graphs this is the largest per-component diameter; `None`
    /// only for the empty graph.
    pub fn diameter(&self) -> Option<usize> {
        (0..self.num_nodes)
            .map(|s| self.bfs_distances(s).map(|d| d.max_finite().unwrap_or(0)).unwrap_or(0))
            .max()
    }

    /// Connected component id per node, numbered in order of each
    /// component's smallest node.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let mut comp = vec![usize::MAX; self.num_nodes];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..self.num_nodes {
            if comp[start] != usize::MAX {
                continue;
            }
            comp[start] = count;
            stack.push(start);
            while let Some(u) = stack.pop() {
                for &w in self.neighbors(u) {
                    if comp[w] == usize::MAX {
                        comp[w] = count;
                        stack.push(w);
                    }
                }
            }
            count += 1;
        }
        (comp, count)
    }

    pub fn is_connected(&self) -> bool {
        self.components().1 <= 1
    }

    /// Induced subgraph on the largest connected component, re-indexed
    /// contiguously in original order. Ties go to the component containing
    /// the smaller node index. Returns the subgraph and `new -> original`.
    pub fn largest_component(&self) -> (Graph, Vec<usize>) {
        let (comp, count) = self.components();
        if count <= 1 {
            return (self.clone(), (0..self.num_nodes).collect());
        }
        let mut sizes = vec![0usize; count];
        for &c in &comp {
            sizes[c] += 1;
        }
        // Components are numbered by smallest member, so the first maximum wins ties.
        let best = (0..count).fold(0, |b, c| if sizes[c] > sizes[b] { c } else { b });
        let keep: Vec<usize> = (0..self.num_nodes).filter(|&v| comp[v] == best).collect();
        (self.induced_subgraph(&keep), keep)
    }

    /// Disjoint union with node ids offset in order. Feature widths must agree;
    /// positions survive only if every part has them.
    pub fn disjoint_union(parts: &[&Graph]) -> Result<Graph> {
        let dn = parts.first().map_or(1, |g| g.node_features.cols());
        let de = parts.first().map_or(1, |g| g.edge_features.cols());
        let mut edges = Vec::new();
        let mut nf = Vec::new();
        let mut ef = Vec::new();
        let mut positions = Some(Vec::new());
        let mut offset = 0;
        for g in parts {
            if g.node_features.cols() != dn || g.edge_features.cols() != de {
                return Err(Error::ShapeMismatch("feature widths differ across union parts".into()));
            }
            edges.extend(g.edges.iter().map(|&(i, j)| (i + offset, j + offset)));
            nf.extend_from_slice(g.node_features.data());
            ef.extend_from_slice(g.edge_features.data());
            positions = match (positions, &g.positions) {
                (Some(mut acc), Some(p)) => {
                    acc.extend_from_slice(p);
                    Some(acc)
                }
                _ => None,
            };
            offset += g.num_nodes;
        }
        let ne = edges.len();
        let g = Graph::new(offset, edges, Tensor::from_vec(offset, dn, nf)?, Tensor::from_vec(ne, de, ef)?)?;
        match positions {
            Some(p) if !parts.is_empty() => g.with_positions(p),
            _ => Ok(g),
        }
    }

    /// Induced subgraph on `keep` (in the given order).
    pub fn induced_subgraph(&self, keep: &[usize]) -> Graph {
        let mut new_of = vec![usize::MAX; self.num_nodes];
        for (new, &old) in keep.iter().enumerate() {
            new_of[old] = new;
        }
        let mut edges = Vec::new();
        let mut edge_rows = Vec::new();
        for (k, &(i, j)) in self.edges.iter().enumerate() {
            if new_of[i] != usize::MAX && new_of[j] != usize::MAX {
                edges.push((new_of[i], new_of[j]));
                edge_rows.push(k);
            }
        }
        let mut ef = self.edge_features.select_rows(&edge_rows);
        if edge_rows.is_empty() {
            ef = Tensor::zeros(0, self.edge_features.cols());
        }
        let g = Graph::new(keep.len(), edges, self.node_features.select_rows(keep), ef)
            .expect("induced subgraph of a valid graph is valid");
        match &self.positions {
            Some(p) => g
                .with_positions(keep.iter().map(|&v| p[v]).collect())
                .expect("positions match kept nodes"),
            None => g,
        }
    }

    /// Relabels nodes with `perm[old] = new` and reorders edges so that new
    /// edge `k` is old edge `edge_order[k]`.
    pub fn permuted(&self, perm: &[usize], edge_order: &[usize]) -> Result<Graph> {
        if perm.len() != self.num_nodes || edge_order.len() != self.num_edges() {
            return Err(Error::ShapeMismatch("permutation length".into()));
        }
        let mut inverse = vec![usize::MAX; self.num_nodes];
        for (old, &new) in perm.iter().enumerate() {
            if new >= self.num_nodes || inverse[new] != usize::MAX {
                return Err(Error::IndexOutOfRange("not a permutation".into()));
            }
            inverse[new] = old;
        }
        let edges = edge_order.iter().map(|&k| {
            let (i, j) = self.edges[k];
            (perm[i], perm[j])
        });
        let ef = if edge_order.is_empty() {
            Tensor::zeros(0, self.edge_features.cols())
        } else {
            self.edge_features.select_rows(edge_order)
        };
        let g = Graph::new(self.num_nodes, edges, self.node_features.select_rows(&inverse), ef)?;
        match &self.positions {
            Some(p) => g.with_positions(inverse.iter().map(|&o| p[o]).collect()),
            None => Ok(g),
        }
    }

    pub fn to_record(&self) -> GraphRecord {
        GraphRecord {
            num_nodes: self.num_nodes,
            edges: self.edges.iter().map(|&(i, j)| [i, j]).collect(),
            node_features: rows_of(&self.node_features),
            edge_features: rows_of(&self.edge_features),
            positions: self.positions.clone(),
        }
    }

    pub fn from_record(record: &GraphRecord) -> Result<Graph> {
        let nf = tensor_from_rows(&record.node_features, record.num_nodes)?;
        let ef = tensor_from_rows(&record.edge_features, record.edges.len())?;
        let g = Graph::new(record.num_nodes, record.edges.iter().map(|e| (e[0], e[1])), nf, ef)?;
        match &record.positions {
            Some(p) => g.with_positions(p.clone()),
            None => Ok(g),
        }
    }

    /// One-line JSON text form.
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_record())?)
    }

    pub fn from_json_line(line: &str) -> Result<Graph> {
        let record: GraphRecord = serde_json::from_str(line)?;
        Graph::from_record(&record)
    }
}

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn tensor_from_rows(rows: &[Vec<f64>], expected: usize) -> Result<Tensor> {
    if rows.len() != expected {
        return Err(Error::ShapeMismatch(format!("{} feature rows, expected {expected}", rows.len())));
    }
    Tensor::from_rows(rows)
}

/// Serialized graph: one JSON object per line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub num_nodes: usize,
    pub edges: Vec<[usize; 2]>,
    pub node_features: Vec<Vec<f64>>,
    pub edge_features: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<[f64; 2]>>,
}

/// Per-node hop counts; `None` marks an unreachable node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Distances(pub Vec<Option<usize>>);

impl Distances {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, v: usize) -> Option<usize> {
        self.0[v]
    }

    pub fn max_finite(&self) -> Option<usize> {
        self.0.iter().flatten().copied().max()
    }

    pub fn as_slice(&self) -> &[Option<usize>] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn path(n: usize) -> Graph {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Graph::structural(n, &edges).unwrap()
    }

    fn cycle(n: usize) -> Graph {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Graph::structural(n, &edges).unwrap()
    }

    fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Graph {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        Graph::structural(n, &edges).unwrap()
    }

    /// All-pairs hop distances, `u32::MAX` for unreachable.
    fn floyd_warshall(g: &Graph) -> Vec<Vec<u32>> {
        let n = g.num_nodes();
        let inf = u32::MAX;
        let mut d = vec![vec![inf; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = 0;
        }
        for &(i, j) in g.edges() {
            d[i][j] = 1;
            d[j][i] = 1;
        }
        for k in 0..n {
            for i in 0..n {
                if d[i][k] == inf {
                    continue;
                }
                for j in 0..n {
                    if d[k][j] != inf && d[i][k] + d[k][j] < d[i][j] {
                        d[i][j] = d[i][k] + d[k][j];
                    }
                }
            }
        }
        d
    }

    fn union_find_sizes(g: &Graph) -> Vec<usize> {
        fn find(p: &mut Vec<usize>, x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            let mut y = x;
            while p[y] != r {
                let next = p[y];
                p[y] = r;
                y = next;
            }
            r
        }
        let n = g.num_nodes();
        let mut parent: Vec<usize> = (0..n).collect();
        for &(i, j) in g.edges() {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a != b {
                parent[a] = b;
            }
        }
        let mut sizes = vec![0; n];
        for v in 0..n {
            let r = find(&mut parent, v);
            sizes[r] += 1;
        }
        let mut s: Vec<usize> = sizes.into_iter().filter(|&s| s > 0).collect();
        s.sort_unstable_by(|a, b| b.cmp(a));
        s
    }

    #[test]
    fn smallest_graph_has_two_arcs() {
        let g = Graph::new(2, [(0, 1)], Tensor::zeros(2, 1), Tensor::zeros(1, 1)).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.arcs().len(), 2);
        assert_eq!(&*g.arcs().src, &[0, 1]);
        assert_eq!(&*g.arcs().dst, &[1, 0]);
        assert_eq!(&*g.arcs().edge, &[0, 0]);
    }

    #[test]
    fn single_node_graph() {
        let g = Graph::new(1, [], Tensor::zeros(1, 1), Tensor::zeros(0, 1)).unwrap();
        assert_eq!(g.num_nodes(), 1);
        assert_eq!(g.num_edges(), 0);
        assert_eq!(g.bfs_distances(0).unwrap().0, vec![Some(0)]);
        assert_eq!(g.diameter(), Some(0));
    }

    #[test]
    fn construction_errors() {
        let nf = Tensor::zeros(3, 1);
        assert!(matches!(
            Graph::new(3, [(0, 1), (0, 1)], nf.clone(), Tensor::zeros(2, 1)),
            Err(Error::DuplicateEdge(0, 1))
        ));
        assert!(matches!(
            Graph::new(3, [(0, 1), (1, 0)], nf.clone(), Tensor::zeros(2, 1)),
            Err(Error::DuplicateEdge(0, 1))
        ));
        assert!(matches!(
            Graph::new(3, [(1, 1)], nf.clone(), Tensor::zeros(1, 1)),
            Err(Error::SelfLoop(1))
        ));
        assert!(matches!(
            Graph::new(3, [(0, 3)], nf.clone(), Tensor::zeros(1, 1)),
            Err(Error::IndexOutOfRange(_))
        ));
        assert!(matches!(
            Graph::new(3, [(0, 1)], nf, Tensor::zeros(2, 1)),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            Graph::new(3, [(0, 1)], Tensor::zeros(2, 1), Tensor::zeros(1, 1)),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn bfs_on_path() {
        let d = path(4).bfs_distances(0).unwrap();
        assert_eq!(d.0, vec![Some(0), Some(1), Some(2), Some(3)]);
        assert!(matches!(path(4).bfs_distances(4), Err(Error::IndexOutOfRange(_))));
    }

    #[test]
    fn unreachable_is_none() {
        let g = Graph::structural(3, &[(0, 1)]).unwrap();
        assert_eq!(g.bfs_distances(0).unwrap().0, vec![Some(0), Some(1), None]);
    }

    #[test]
    fn diameter_small_cases() {
        assert_eq!(cycle(6).diameter(), Some(3));
        assert_eq!(path(5).diameter(), Some(4));
        let empty = Graph::new(0, [], Tensor::zeros(0, 1), Tensor::zeros(0, 1)).unwrap();
        assert_eq!(empty.diameter(), None);
        // Disconnected: per-component maximum.
        let g = Graph::structural(5, &[(0, 1), (1, 2), (3, 4)]).unwrap();
        assert_eq!(g.diameter(), Some(2));
    }

    #[test]
    fn bfs_matches_floyd_warshall_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.random_range(1..40);
            let p = rng.random_range(0.02..0.3);
            let g = random_graph(&mut rng, n, p);
            let fw = floyd_warshall(&g);
            let mut brute_diam = 0;
            for s in 0..n {
                let d = g.bfs_distances(s).unwrap();
                for t in 0..n {
                    let expected = (fw[s][t] != u32::MAX).then_some(fw[s][t] as usize);
                    assert_eq!(d.get(t), expected);
                    if let Some(v) = expected {
                        brute_diam = brute_diam.max(v);
                    }
                }
                // Adjacent finite distances differ by at most one.
                for &(i, j) in g.edges() {
                    if let (Some(a), Some(b)) = (d.get(i), d.get(j)) {
                        assert!(a.abs_diff(b) <= 1);
                    }
                }
            }
            assert_eq!(g.diameter(), Some(brute_diam));
        }
    }

    #[test]
    fn largest_component_cases() {
        let g = path(4);
        let (sub, map) = g.largest_component();
        assert_eq!(map, vec![0, 1, 2, 3]);
        assert_eq!(sub.edges(), g.edges());

        let g = Graph::structural(5, &[(0, 1), (2, 3), (3, 4)]).unwrap();
        let (sub, map) = g.largest_component();
        assert_eq!(map, vec![2, 3, 4]);
        assert_eq!(sub.num_nodes(), 3);
        assert_eq!(sub.edges(), &[(0, 1), (1, 2)]);

        // Tie: two components of size 2, the one holding node 0 wins.
        let g = Graph::structural(4, &[(2, 3), (0, 1)]).unwrap();
        assert_eq!(g.largest_component().1, vec![0, 1]);
    }

    #[test]
    fn largest_component_matches_union_find() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let n = rng.random_range(5..80);
            let g = random_graph(&mut rng, n, 0.03);
            let sizes = union_find_sizes(&g);
            let (sub, map) = g.largest_component();
            assert_eq!(sub.num_nodes(), sizes[0]);
            assert!(sub.is_connected());
            assert_eq!(map.len(), sizes[0]);
            let (_, count) = g.components();
            assert_eq!(count, sizes.len());
        }
    }

    #[test]
    fn edge_order_does_not_change_adjacency() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_graph(&mut rng, 30, 0.2);
        let mut edges: Vec<_> = g.edges().iter().map(|&(i, j)| (j, i)).collect();
        edges.shuffle(&mut rng);
        let h = Graph::structural(30, &edges).unwrap();
        for v in 0..30 {
            assert_eq!(g.neighbors(v), h.neighbors(v));
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let nf = Tensor::from_vec(3, 2, vec![0.1, 1.0 / 3.0, -2.5e-300, 7.0, f64::MAX, 1e-17])
            .unwrap();
        let ef = Tensor::from_vec(2, 1, vec![std::f64::consts::PI, 0.0]).unwrap();
        let g = Graph::new(3, [(0, 1), (2, 1)], nf, ef)
            .unwrap()
            .with_positions(vec![[0.25, 0.5], [0.1, 0.9], [1.0 / 7.0, 0.0]])
            .unwrap();
        let line = g.to_json_line().unwrap();
        assert!(!line.contains('\n'));
        let h = Graph::from_json_line(&line).unwrap();
        assert_eq!(h.to_record(), g.to_record());
        assert_eq!(h.to_json_line().unwrap(), line);
    }
}
