//! Labeled graphs, datasets, the line-delimited JSON dataset format, the
//! synthetic cycles-versus-cliques generator and client partitioning.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::{substream, Stream};

/// One simple undirected graph with node features and multi-task binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInstance {
    id: u64,
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Tensor,
    labels: Vec<u8>,
    label_mask: Vec<bool>,
}

impl GraphInstance {
    /// Validates and normalizes a graph. Edges may be given in either
    /// orientation; they are stored as sorted `(i, j)` pairs with `i < j`.
    pub fn new(
        id: u64,
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Tensor,
        labels: Vec<u8>,
        label_mask: Vec<bool>,
    ) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::arg(format!("graph {id}: no nodes")));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::arg(format!(
                    "graph {id}: edge ({a}, {b}) references a node outside [0, {num_nodes})"
                )));
            }
            if a == b {
                return Err(Error::arg(format!("graph {id}: self-loop on node {a}")));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return Err(Error::arg(format!("graph {id}: duplicate edge ({a}, {b})")));
            }
        }
        if features.rows() != num_nodes || features.cols() == 0 {
            return Err(Error::arg(format!(
                "graph {id}: feature matrix is {}x{} for {num_nodes} nodes",
                features.rows(),
                features.cols()
            )));
        }
        if !features.all_finite() {
            return Err(Error::arg(format!("graph {id}: non-finite feature")));
        }
        if labels.len() != label_mask.len() || labels.is_empty() {
            return Err(Error::arg(format!(
                "graph {id}: {} labels but {} mask entries",
                labels.len(),
                label_mask.len()
            )));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::arg(format!("graph {id}: labels must be 0 or 1")));
        }
        Ok(GraphInstance {
            id,
            num_nodes,
            edges: set.into_iter().collect(),
            features,
            labels,
            label_mask,
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Sorted `(i, j)` pairs with `i < j`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.binary_search(&(i.min(j), i.max(j))).is_ok()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label_mask(&self) -> &[bool] {
        &self.label_mask
    }

    pub fn task_count(&self) -> usize {
        self.labels.len()
    }

    /// Symmetric 0/1 adjacency with a zero diagonal.
    pub fn adjacency(&self) -> Tensor {
        let mut a = Tensor::zeros(self.num_nodes, self.num_nodes);
        for &(i, j) in &self.edges {
            a.set(i, j, 1.0);
            a.set(j, i, 1.0);
        }
        a
    }
}

/// An ordered collection of graphs sharing feature and task dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    graphs: Vec<GraphInstance>,
    feature_dim: usize,
    task_count: usize,
}

impl Dataset {
    pub fn new(graphs: Vec<GraphInstance>, feature_dim: usize, task_count: usize) -> Result<Self> {
        let mut ids = HashSet::new();
        for g in &graphs {
            if g.feature_dim() != feature_dim || g.task_count() != task_count {
                return Err(Error::Schema(format!(
                    "graph {} has q={}, T={}; dataset declares q={feature_dim}, T={task_count}",
                    g.id(),
                    g.feature_dim(),
                    g.task_count()
                )));
            }
            if !ids.insert(g.id()) {
                return Err(Error::Schema(format!("duplicate graph id {}", g.id())));
            }
        }
        Ok(Dataset {
            graphs,
            feature_dim,
            task_count,
        })
    }

    pub fn graphs(&self) -> &[GraphInstance] {
        &self.graphs
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn task_count(&self) -> usize {
        self.task_count
    }

    pub fn get(&self, id: u64) -> Option<&GraphInstance> {
        self.graphs.iter().find(|g| g.id() == id)
    }

    /// Copies of the graphs with the given ids, in the given order.
    pub fn subset(&self, ids: &[u64]) -> Result<Dataset> {
        let index: BTreeMap<u64, &GraphInstance> = self.graphs.iter().map(|g| (g.id(), g)).collect();
        let graphs = ids
            .iter()
            .map(|id| {
                index
                    .get(id)
                    .map(|g| (*g).clone())
                    .ok_or_else(|| Error::arg(format!("unknown graph id {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(graphs, self.feature_dim, self.task_count)
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        read_dataset(BufReader::new(file))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        write_dataset(self, &mut w).and_then(|_| w.flush().map_err(|e| Error::io(path, e)))
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    q: usize,
    t: usize,
}

#[derive(Serialize, Deserialize)]
struct GraphRecord {
    id: u64,
    p: usize,
    edges: Vec<[usize; 2]>,
    x: Vec<Vec<f64>>,
    y: Vec<u8>,
    mask: Vec<u8>,
}

/// Reads the line-delimited JSON dataset format: a `{"q", "t"}` header line
/// followed by one graph object per line. Blank lines are ignored.
pub fn read_dataset<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut header: Option<Header> = None;
    let mut graphs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let Some(h) = &header else {
            let h: Header = serde_json::from_str(&line)
                .map_err(|e| parse_err(format!("bad header: {e}")))?;
            if h.q == 0 || h.t == 0 {
                return Err(parse_err("header q and t must be positive".into()));
            }
            header = Some(h);
            continue;
        };
        let rec: GraphRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(format!("bad graph record: {e}")))?;
        if rec.x.len() != rec.p {
            return Err(parse_err(format!(
                "graph {}: {} feature rows for p={}",
                rec.id,
                rec.x.len(),
                rec.p
            )));
        }
        if rec.x.iter().any(|r| r.len() != h.q) {
            return Err(Error::Schema(format!(
                "line {line_no}, graph {}: feature width differs from q={}",
                rec.id, h.q
            )));
        }
        if rec.y.len() != h.t || rec.mask.len() != h.t {
            return Err(Error::Schema(format!(
                "line {line_no}, graph {}: label/mask length differs from t={}",
                rec.id, h.t
            )));
        }
        if rec.mask.iter().any(|&m| m > 1) {
            return Err(parse_err(format!("graph {}: mask must be 0 or 1", rec.id)));
        }
        let features = Tensor::from_rows(&rec.x).map_err(|e| parse_err(e.to_string()))?;
        let g = GraphInstance::new(
            rec.id,
            rec.p,
            rec.edges.iter().map(|e| (e[0], e[1])),
            features,
            rec.y,
            rec.mask.iter().map(|&m| m == 1).collect(),
        )
        .map_err(|e| parse_err(e.to_string()))?;
        graphs.push(g);
    }
    let h = header.ok_or(Error::Parse {
        line: 1,
        message: "missing header".into(),
    })?;
    Dataset::new(graphs, h.q, h.t)
}

pub fn write_dataset<W: Write>(d: &Dataset, w: &mut W) -> Result<()> {
    let io = |e| Error::io("<dataset writer>", e);
    serde_json::to_writer(
        &mut *w,
        &Header {
            q: d.feature_dim,
            t: d.task_count,
        },
    )?;
    writeln!(w).map_err(io)?;
    for g in &d.graphs {
        let rec = GraphRecord {
            id: g.id,
            p: g.num_nodes,
            edges: g.edges.iter().map(|&(i, j)| [i, j]).collect(),
            x: (0..g.num_nodes).map(|r| g.features.row_slice(r).to_vec()).collect(),
            y: g.labels.clone(),
            mask: g.label_mask.iter().map(|&m| u8::from(m)).collect(),
        };
        serde_json::to_writer(&mut *w, &rec)?;
        writeln!(w).map_err(io)?;
    }
    Ok(())
}

/// Parameters of the synthetic cycles-versus-cliques task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_graphs: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub feature_dim: usize,
    pub noise_sd: f64,
    /// Distance between the two class feature means along the first axis.
    pub feature_gap: f64,
    /// Value shared by every coordinate of both class means.
    pub feature_offset: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_graphs: 200,
            min_nodes: 6,
            max_nodes: 14,
            feature_dim: 8,
            noise_sd: 0.5,
            feature_gap: DEFAULT_FEATURE_GAP,
            feature_offset: 0.0,
        }
    }
}

pub const DEFAULT_FEATURE_GAP: f64 = 0.25;

impl SyntheticSpec {
    pub fn node_range(&self) -> RangeInclusive<usize> {
        self.min_nodes..=self.max_nodes
    }

    /// Constant feature vector shared by every node of a class.
    pub fn class_mean(&self, class: u8) -> Vec<f64> {
        let mut mean = vec![self.feature_offset; self.feature_dim];
        let half = self.feature_gap / 2.0;
        mean[0] += if class == 1 { half } else { -half };
        mean
    }
}

/// Single-task dataset: class 0 graphs are cycles, class 1 graphs are
/// complete graphs. Classes alternate by index, so they are balanced within
/// one. Node features are the class mean plus `N(0, noise_sd^2)` noise.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    if spec.n_graphs < 2 {
        return Err(Error::arg("generate_synthetic: need at least 2 graphs"));
    }
    if spec.feature_dim == 0 {
        return Err(Error::arg("generate_synthetic: feature_dim must be at least 1"));
    }
    if spec.min_nodes > spec.max_nodes {
        return Err(Error::arg(format!(
            "generate_synthetic: empty node range {}..={}",
            spec.min_nodes, spec.max_nodes
        )));
    }
    if spec.min_nodes < 3 {
        return Err(Error::arg("generate_synthetic: cycles need at least 3 nodes"));
    }
    if !(spec.noise_sd >= 0.0 && spec.noise_sd.is_finite()) {
        return Err(Error::arg("generate_synthetic: noise_sd must be finite and >= 0"));
    }
    let mut rng = substream(seed, Stream::Dataset, &[]);
    let mut graphs = Vec::with_capacity(spec.n_graphs);
    for i in 0..spec.n_graphs {
        let class = (i % 2) as u8;
        let p = rng.random_range(spec.node_range());
        let edges: Vec<(usize, usize)> = if class == 0 {
            (0..p).map(|v| (v, (v + 1) % p)).collect()
        } else {
            (0..p).flat_map(|a| (a + 1..p).map(move |b| (a, b))).collect()
        };
        let mean = spec.class_mean(class);
        let mut x = Tensor::zeros(p, spec.feature_dim);
        for r in 0..p {
            for (c, m) in mean.iter().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                x.set(r, c, m + spec.noise_sd * z);
            }
        }
        graphs.push(GraphInstance::new(i as u64, p, edges, x, vec![class], vec![true])?);
    }
    Dataset::new(graphs, spec.feature_dim, 1)
}

/// Assignment of graph ids to simulated clients; index = client id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientPartition {
    pub assignments: Vec<Vec<u64>>,
}

impl ClientPartition {
    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }
}

/// Shuffles graph ids with `seed` and deals them round-robin to `num_clients`.
pub fn partition(d: &Dataset, num_clients: usize, seed: u64) -> Result<ClientPartition> {
    if num_clients == 0 {
        return Err(Error::arg("partition: need at least one client"));
    }
    if d.is_empty() {
        return Err(Error::arg("partition: empty dataset"));
    }
    if num_clients > d.len() {
        return Err(Error::arg(format!(
            "partition: {num_clients} clients for {} graphs",
            d.len()
        )));
    }
    let mut ids: Vec<u64> = d.graphs().iter().map(GraphInstance::id).collect();
    ids.shuffle(&mut substream(seed, Stream::Partition, &[]));
    let mut assignments = vec![Vec::new(); num_clients];
    for (i, id) in ids.into_iter().enumerate() {
        assignments[i % num_clients].push(id);
    }
    Ok(ClientPartition { assignments })
}

/// Splits off a test set stratified on the first task's label (graphs whose
/// first task is unobserved form their own stratum). Both halves keep the
/// dataset's original order.
pub fn stratified_split(d: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::arg("test_fraction must lie in [0, 1)"));
    }
    let mut strata: BTreeMap<Option<u8>, Vec<usize>> = BTreeMap::new();
    for (i, g) in d.graphs().iter().enumerate() {
        let key = g.label_mask()[0].then(|| g.labels()[0]);
        strata.entry(key).or_default().push(i);
    }
    let mut rng = substream(seed, Stream::Split, &[]);
    let mut test_idx = BTreeSet::new();
    for members in strata.values_mut() {
        members.shuffle(&mut rng);
        let n_test = (members.len() as f64 * test_fraction).round() as usize;
        test_idx.extend(members.iter().take(n_test).copied());
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, g) in d.graphs().iter().enumerate() {
        if test_idx.contains(&i) {
            test.push(g.clone());
        } else {
            train.push(g.clone());
        }
    }
    Ok((
        Dataset::new(train, d.feature_dim, d.task_count)?,
        Dataset::new(test, d.feature_dim, d.task_count)?,
    ))
}
