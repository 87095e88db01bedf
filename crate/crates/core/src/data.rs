//! Random geometric graphs with single-source shortest-path labels.
//!
//! Points are uniform on the unit square and joined when within radius
//! `r = sqrt(k / (π (n - 1)))`, which gives about `k` neighbours per node away
//! from the border. Only the largest connected component is kept.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::{Graph, GraphRecord};
use crate::seeding;

/// How the source node of an instance is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourcePolicy {
    /// Uniform draws until the source's eccentricity is within the cap.
    ResampleWithinCap,
    /// A node of maximum eccentricity (smallest index on ties); graphs whose
    /// maximum eccentricity exceeds the ceiling are rejected.
    MaxEccentricity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RggConfig {
    pub n_min: usize,
    pub n_max: usize,
    pub avg_degree: f64,
    /// Largest labelled distance in the training and validation splits.
    pub distance_cap: Option<usize>,
    pub test_n_min: usize,
    pub test_n_max: usize,
    /// Largest labelled distance in the test split.
    pub test_ceiling: Option<usize>,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
    pub source_policy: SourcePolicy,
    pub test_source_policy: SourcePolicy,
    pub source_tries: usize,
    pub max_regenerations: usize,
}

impl Default for RggConfig {
    fn default() -> Self {
        RggConfig {
            n_min: 40,
            n_max: 60,
            avg_degree: 12.0,
            distance_cap: Some(5),
            test_n_min: 40,
            test_n_max: 60,
            test_ceiling: Some(8),
            train: 6000,
            val: 1000,
            test: 1000,
            seed: 0,
            source_policy: SourcePolicy::ResampleWithinCap,
            test_source_policy: SourcePolicy::MaxEccentricity,
            source_tries: 20,
            max_regenerations: 1000,
        }
    }
}

impl RggConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_min == 0 || self.n_min > self.n_max {
            return Err(Error::Config(format!("need 1 <= n_min <= n_max, got {}..{}", self.n_min, self.n_max)));
        }
        if self.test_n_min == 0 || self.test_n_min > self.test_n_max {
            return Err(Error::Config(format!(
                "need 1 <= test_n_min <= test_n_max, got {}..{}",
                self.test_n_min, self.test_n_max
            )));
        }
        if !(self.avg_degree >= 1.0) {
            return Err(Error::Config(format!("avg_degree must be at least 1, got {}", self.avg_degree)));
        }
        if self.source_tries == 0 || self.max_regenerations == 0 {
            return Err(Error::Config("source_tries and max_regenerations must be positive".into()));
        }
        Ok(())
    }
}

/// Connection radius for `n` points and target mean degree `k`.
pub fn connection_radius(n: usize, k: f64) -> f64 {
    if n <= 1 {
        0.0
    } else {
        (k / (std::f64::consts::PI * (n - 1) as f64)).sqrt()
    }
}

/// Samples an RGG with `n` uniform in `[n_min, n_max]` and returns its largest
/// component. Node features are one zero column; edge features are one unit
/// column.
pub fn sample_rgg<R: Rng + ?Sized>(n_min: usize, n_max: usize, avg_degree: f64, rng: &mut R) -> Result<Graph> {
    let n = rng.random_range(n_min..=n_max);
    let positions: Vec<[f64; 2]> = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    let r = connection_radius(n, avg_degree);
    let r2 = r * r;
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let dx = positions[i][0] - positions[j][0];
            let dy = positions[i][1] - positions[j][1];
            if dx * dx + dy * dy <= r2 {
                edges.push((i, j));
            }
        }
    }
    let ne = edges.len();
    let g = Graph::new(n, edges, Tensor::zeros(n, 1), Tensor::ones(ne, 1))?.with_positions(positions)?;
    Ok(g.largest_component().0)
}

/// A graph, its source and exact hop-distance labels.
#[derive(Clone, Debug)]
pub struct SsspInstance {
    pub graph: Graph,
    pub source: usize,
    pub labels: Vec<Option<usize>>,
    /// Nodes included in loss and metrics.
    pub mask: Vec<bool>,
}

impl SsspInstance {
    /// Labels the graph from `source` and sets the source indicator feature.
    /// Nodes that are unreachable or farther than `cap` are masked out.
    pub fn new(graph: Graph, source: usize, cap: Option<usize>) -> Result<Self> {
        let n = graph.num_nodes();
        let labels = graph.bfs_distances(source)?.0;
        let mut x = Tensor::zeros(n, 1);
        x.set(source, 0, 1.0);
        let graph = graph.with_node_features(x)?;
        let mask = labels.iter().map(|d| d.is_some_and(|d| cap.is_none_or(|c| d <= c))).collect();
        Ok(SsspInstance { graph, source, labels, mask })
    }

    pub fn num_masked(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn max_label(&self) -> Option<usize> {
        self.labels.iter().zip(&self.mask).filter(|(_, &m)| m).filter_map(|(l, _)| *l).max()
    }

    /// Labels as a column, with masked-out entries set to 0.
    pub fn target_column(&self) -> Tensor {
        let v: Vec<f64> = self
            .labels
            .iter()
            .zip(&self.mask)
            .map(|(l, &m)| if m { l.map_or(0.0, |d| d as f64) } else { 0.0 })
            .collect();
        Tensor::column(&v)
    }

    pub fn to_record(&self) -> InstanceRecord {
        InstanceRecord {
            graph: self.graph.to_record(),
            source: self.source,
            labels: self.labels.clone(),
            mask: self.mask.clone(),
        }
    }

    pub fn from_record(r: &InstanceRecord) -> Result<Self> {
        let graph = Graph::from_record(&r.graph)?;
        let n = graph.num_nodes();
        if r.source >= n.max(1) || r.labels.len() != n || r.mask.len() != n {
            return Err(Error::Format(format!(
                "instance with {n} nodes has source {}, {} labels, {} mask entries",
                r.source,
                r.labels.len(),
                r.mask.len()
            )));
        }
        Ok(SsspInstance { graph, source: r.source, labels: r.labels.clone(), mask: r.mask.clone() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    #[serde(flatten)]
    pub graph: GraphRecord,
    pub source: usize,
    pub labels: Vec<Option<usize>>,
    pub mask: Vec<bool>,
}

/// Picks a source under `policy`; `Ok(None)` asks for a fresh graph.
pub fn make_instance<R: Rng + ?Sized>(
    g: Graph,
    rng: &mut R,
    policy: SourcePolicy,
    cap: Option<usize>,
    tries: usize,
) -> Result<Option<SsspInstance>> {
    let n = g.num_nodes();
    if n == 0 {
        return Ok(None);
    }
    let source = match policy {
        SourcePolicy::ResampleWithinCap => {
            let mut found = None;
            for _ in 0..tries {
                let s = rng.random_range(0..n);
                if cap.is_none_or(|c| g.eccentricity(s).is_ok_and(|e| e <= c)) {
                    found = Some(s);
                    break;
                }
            }
            match found {
                Some(s) => s,
                None => return Ok(None),
            }
        }
        SourcePolicy::MaxEccentricity => {
            let mut best = (0, 0);
            for s in 0..n {
                let e = g.eccentricity(s)?;
                if e > best.0 {
                    best = (e, s);
                }
            }
            if cap.is_some_and(|c| best.0 > c) {
                return Ok(None);
            }
            best.1
        }
    };
    SsspInstance::new(g, source, cap).map(Some)
}

/// Draws graphs until one admits a source; fails after `max_regenerations`.
#[allow(clippy::too_many_arguments)]
pub fn generate_instance<R: Rng + ?Sized>(
    n_min: usize,
    n_max: usize,
    avg_degree: f64,
    policy: SourcePolicy,
    cap: Option<usize>,
    tries: usize,
    max_regenerations: usize,
    rng: &mut R,
) -> Result<SsspInstance> {
    for _ in 0..max_regenerations {
        let g = sample_rgg(n_min, n_max, avg_degree, rng)?;
        if let Some(inst) = make_instance(g, rng, policy, cap, tries)? {
            return Ok(inst);
        }
    }
    Err(Error::GenerationExhausted(max_regenerations))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Generates one split; instance `i` uses its own stream so any index can be
/// regenerated independently. `attempt` selects an alternative family of
/// streams for whole-split regeneration.
pub fn generate_split(cfg: &RggConfig, split: Split, attempt: u64) -> Result<Vec<SsspInstance>> {
    let (count, n_min, n_max, policy, cap) = match split {
        Split::Train => (cfg.train, cfg.n_min, cfg.n_max, cfg.source_policy, cfg.distance_cap),
        Split::Val => (cfg.val, cfg.n_min, cfg.n_max, cfg.source_policy, cfg.distance_cap),
        Split::Test => (cfg.test, cfg.test_n_min, cfg.test_n_max, cfg.test_source_policy, cfg.test_ceiling),
    };
    let label = format!("data.{}.{attempt}", split.name());
    (0..count)
        .map(|i| {
            let mut rng = seeding::stream(cfg.seed, &label, i as u64);
            generate_instance(n_min, n_max, cfg.avg_degree, policy, cap, cfg.source_tries, cfg.max_regenerations, &mut rng)
        })
        .collect()
}

/// Count of masked-in labels per distance.
pub fn label_histogram(instances: &[SsspInstance]) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for inst in instances {
        for (l, &m) in inst.labels.iter().zip(&inst.mask) {
            if let (Some(d), true) = (l, m) {
                *h.entry(*d).or_insert(0) += 1;
            }
        }
    }
    h
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub instances: usize,
    pub nodes: usize,
    pub max_label: Option<usize>,
    pub histogram: BTreeMap<usize, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub description: String,
    pub test_source_rule: String,
    pub seed: u64,
    pub test_attempt: u64,
    pub config: RggConfig,
    pub train: SplitSummary,
    pub val: SplitSummary,
    pub test: SplitSummary,
}

fn summarize(instances: &[SsspInstance]) -> SplitSummary {
    SplitSummary {
        instances: instances.len(),
        nodes: instances.iter().map(|i| i.graph.num_nodes()).sum(),
        max_label: instances.iter().filter_map(SsspInstance::max_label).max(),
        histogram: label_histogram(instances),
    }
}

fn describe(cfg: &RggConfig) -> String {
    let cap = cfg.distance_cap.map_or("uncapped".to_string(), |c| format!("capped at {c}"));
    let ceiling = cfg.test_ceiling.map_or("unbounded".to_string(), |c| format!("up to {c} hops"));
    format!(
        "RGG single-source shortest paths; train/val: {}-{} nodes, distances {cap}; test: {}-{} nodes, distances {ceiling}; mean degree {}",
        cfg.n_min, cfg.n_max, cfg.test_n_min, cfg.test_n_max, cfg.avg_degree
    )
}

/// All three splits plus their manifest.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<SsspInstance>,
    pub val: Vec<SsspInstance>,
    pub test: Vec<SsspInstance>,
    pub manifest: Manifest,
}

/// Builds train, validation and test splits. When the test ceiling exceeds
/// the cap, the test split is regenerated until it holds at least one label
/// beyond the cap.
pub fn build_splits(cfg: &RggConfig) -> Result<Dataset> {
    cfg.validate()?;
    let train = generate_split(cfg, Split::Train, 0)?;
    let val = generate_split(cfg, Split::Val, 0)?;
    let needs_oor = match (cfg.distance_cap, cfg.test_ceiling) {
        (Some(c), Some(t)) => t > c && cfg.test > 0,
        (Some(_), None) => cfg.test > 0,
        _ => false,
    };
    let mut attempt = 0;
    let test = loop {
        let test = generate_split(cfg, Split::Test, attempt)?;
        let beyond = cfg.distance_cap.is_some_and(|c| test.iter().any(|i| i.max_label().is_some_and(|m| m > c)));
        if !needs_oor || beyond {
            break test;
        }
        attempt += 1;
        if attempt as usize >= cfg.max_regenerations {
            return Err(Error::GenerationExhausted(attempt as usize));
        }
    };
    let manifest = Manifest {
        description: describe(cfg),
        test_source_rule: match cfg.test_source_policy {
            SourcePolicy::MaxEccentricity => "max_eccentricity: a node of maximum eccentricity, graphs above the ceiling redrawn".into(),
            SourcePolicy::ResampleWithinCap => "resample_within_cap: uniform sources within the ceiling".into(),
        },
        seed: cfg.seed,
        test_attempt: attempt,
        config: cfg.clone(),
        train: summarize(&train),
        val: summarize(&val),
        test: summarize(&test),
    };
    Ok(Dataset { train, val, test, manifest })
}

pub fn write_instances(path: &Path, instances: &[SsspInstance]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for inst in instances {
        serde_json::to_writer(&mut w, &inst.to_record())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_instances(path: &Path) -> Result<Vec<SsspInstance>> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstanceRecord =
            serde_json::from_str(&line).map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), k + 1)))?;
        out.push(SsspInstance::from_record(&rec)?);
    }
    Ok(out)
}

/// Writes `train.jsonl`, `val.jsonl`, `test.jsonl` and `manifest.json`.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_instances(&dir.join("train.jsonl"), &ds.train)?;
    write_instances(&dir.join("val.jsonl"), &ds.val)?;
    write_instances(&dir.join("test.jsonl"), &ds.test)?;
    let text = serde_json::to_string_pretty(&ds.manifest)?;
    fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

pub fn read_split(dir: &Path, split: Split) -> Result<Vec<SsspInstance>> {
    read_instances(&dir.join(format!("{}.jsonl", split.name())))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", dir.join("manifest.json").display())))
}
