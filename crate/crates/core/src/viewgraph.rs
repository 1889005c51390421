//! View graph: cameras as nodes, relative-rotation measurements as edges.
//!
//! An edge `(i, j, R_ij)` states `R_ij ≈ R_i R_jᵀ`; walking it from `j` to
//! `i` uses `R_ijᵀ`. Nodes are kept sorted by id and edges by `(i, j)`, which
//! fixes every traversal and summation order downstream.
//!
//! JSON layout:
//!
//! ```json
//! { "nodes": [ { "id": 0, "gt_qwxyz": [1, 0, 0, 0] } ],
//!   "edges": [ { "i": 0, "j": 1, "qwxyz": [1, 0, 0, 0],
//!                "cov": [1, 0, 0, 0, 1, 0, 0, 0, 1], "inliers": 120 } ] }
//! ```

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::Rotation;
use crate::uncertainty::whitener_of;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct ViewNode {
    pub id: NodeId,
    pub gt_rotation: Option<Rotation>,
}

impl ViewNode {
    pub fn new(id: NodeId) -> Self {
        ViewNode {
            id,
            gt_rotation: None,
        }
    }

    pub fn with_gt(id: NodeId, gt: Rotation) -> Self {
        ViewNode {
            id,
            gt_rotation: Some(gt),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMeasurement {
    pub i: NodeId,
    pub j: NodeId,
    pub rotation: Rotation,
    pub inlier_count: Option<u64>,
    covariance: Option<Matrix3<f64>>,
    whitener: Option<Matrix3<f64>>,
}

impl EdgeMeasurement {
    pub fn new(i: NodeId, j: NodeId, rotation: Rotation) -> Self {
        EdgeMeasurement {
            i,
            j,
            rotation,
            inlier_count: None,
            covariance: None,
            whitener: None,
        }
    }

    /// Attaches a covariance (radians²) and caches its whitener `D` with
    /// `D Dᵀ = C⁻¹`. Fails unless `C` is symmetric positive definite.
    pub fn with_covariance(mut self, covariance: Matrix3<f64>) -> Result<Self> {
        let whitener = whitener_of(&covariance)?;
        self.covariance = Some(covariance);
        self.whitener = Some(whitener);
        Ok(self)
    }

    pub fn with_inliers(mut self, n: u64) -> Self {
        self.inlier_count = Some(n);
        self
    }

    pub fn covariance(&self) -> Option<&Matrix3<f64>> {
        self.covariance.as_ref()
    }

    pub fn whitener(&self) -> Option<&Matrix3<f64>> {
        self.whitener.as_ref()
    }

    pub fn key(&self) -> (NodeId, NodeId) {
        (self.i, self.j)
    }

    fn unordered_key(&self) -> (NodeId, NodeId) {
        (self.i.min(self.j), self.i.max(self.j))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ViewGraph {
    nodes: Vec<ViewNode>,
    edges: Vec<EdgeMeasurement>,
}

impl ViewGraph {
    pub fn new(mut nodes: Vec<ViewNode>, mut edges: Vec<EdgeMeasurement>) -> Result<Self> {
        nodes.sort_by_key(|n| n.id);
        for pair in nodes.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::schema(
                    format!("node id {}", pair[0].id),
                    "duplicate node id",
                ));
            }
        }
        edges.sort_by_key(|e| e.key());
        let mut seen = HashSet::new();
        let graph = ViewGraph { nodes, edges };
        for e in &graph.edges {
            let record = format!("edge ({}, {})", e.i, e.j);
            if e.i == e.j {
                return Err(Error::schema(record, "self-loop"));
            }
            if graph.index_of(e.i).is_none() || graph.index_of(e.j).is_none() {
                return Err(Error::schema(record, "endpoint is not a node"));
            }
            if !seen.insert(e.unordered_key()) {
                return Err(Error::schema(record, "duplicate measurement for this pair"));
            }
        }
        Ok(graph)
    }

    pub fn nodes(&self) -> &[ViewNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[EdgeMeasurement] {
        &self.edges
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().map(|n| n.id)
    }

    /// Dense index of a node id in [`ViewGraph::nodes`].
    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.nodes.binary_search_by_key(&id, |n| n.id).ok()
    }

    pub fn ground_truth(&self) -> BTreeMap<NodeId, Rotation> {
        self.nodes
            .iter()
            .filter_map(|n| n.gt_rotation.map(|r| (n.id, r)))
            .collect()
    }

    pub fn is_connected(&self) -> bool {
        connected_components(self).len() <= 1
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json { source, .. } => Error::json(path, source),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text).map_err(|source| Error::Json {
            path: "<input>".into(),
            source,
        })?;
        file.into_graph()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&GraphFile::from_graph(self))
            .expect("view graph serialization cannot fail");
        s.push('\n');
        s
    }
}

pub fn load_graph(path: &Path) -> Result<ViewGraph> {
    ViewGraph::load(path)
}

pub fn save_graph(g: &ViewGraph, path: &Path) -> Result<()> {
    g.save(path)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    id: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_qwxyz: Option<[f64; 4]>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeRecord {
    i: NodeId,
    j: NodeId,
    qwxyz: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cov: Option<[f64; 9]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inliers: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    nodes: Vec<NodeRecord>,
    edges: Vec<EdgeRecord>,
}

impl GraphFile {
    fn from_graph(g: &ViewGraph) -> Self {
        GraphFile {
            nodes: g
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    id: n.id,
                    gt_qwxyz: n.gt_rotation.map(|r| r.wxyz()),
                })
                .collect(),
            edges: g
                .edges
                .iter()
                .map(|e| EdgeRecord {
                    i: e.i,
                    j: e.j,
                    qwxyz: e.rotation.wxyz(),
                    cov: e.covariance.map(|c| {
                        let t = c.transpose();
                        std::array::from_fn(|k| t.as_slice()[k])
                    }),
                    inliers: e.inlier_count,
                })
                .collect(),
        }
    }

    fn into_graph(self) -> Result<ViewGraph> {
        let mut nodes = Vec::with_capacity(self.nodes.len());
        for (idx, n) in self.nodes.into_iter().enumerate() {
            let gt = match n.gt_qwxyz {
                Some([w, x, y, z]) => Some(Rotation::from_wxyz(w, x, y, z).map_err(|e| {
                    Error::schema(format!("nodes[{idx}] (id {})", n.id), e.to_string())
                })?),
                None => None,
            };
            nodes.push(ViewNode {
                id: n.id,
                gt_rotation: gt,
            });
        }
        let mut edges = Vec::with_capacity(self.edges.len());
        for (idx, e) in self.edges.into_iter().enumerate() {
            let record = format!("edges[{idx}] (i={}, j={})", e.i, e.j);
            let [w, x, y, z] = e.qwxyz;
            let rotation = Rotation::from_wxyz(w, x, y, z)
                .map_err(|err| Error::schema(&record, err.to_string()))?;
            let mut edge = EdgeMeasurement::new(e.i, e.j, rotation);
            edge.inlier_count = e.inliers;
            if let Some(c) = e.cov {
                let m = Matrix3::from_row_slice(&c);
                edge = edge
                    .with_covariance(m)
                    .map_err(|err| Error::schema(&record, err.to_string()))?;
            }
            edges.push(edge);
        }
        ViewGraph::new(nodes, edges)
    }
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Splits the graph into connected components, ordered by smallest node id.
pub fn connected_components(g: &ViewGraph) -> Vec<ViewGraph> {
    let n = g.nodes.len();
    let mut dsu = DisjointSet::new(n);
    for e in &g.edges {
        let (a, b) = (g.index_of(e.i).unwrap(), g.index_of(e.j).unwrap());
        dsu.union(a, b);
    }
    let mut slot_of_root: BTreeMap<usize, usize> = BTreeMap::new();
    let mut groups: Vec<(Vec<ViewNode>, Vec<EdgeMeasurement>)> = Vec::new();
    let mut component_of = vec![0; n];
    for (idx, node) in g.nodes.iter().enumerate() {
        let root = dsu.find(idx);
        let slot = *slot_of_root.entry(root).or_insert_with(|| {
            groups.push((Vec::new(), Vec::new()));
            groups.len() - 1
        });
        component_of[idx] = slot;
        groups[slot].0.push(node.clone());
    }
    for e in &g.edges {
        let slot = component_of[g.index_of(e.i).unwrap()];
        groups[slot].1.push(e.clone());
    }
    groups
        .into_iter()
        .map(|(nodes, edges)| ViewGraph { nodes, edges })
        .collect()
}

/// Edge weight used to pick the maximum spanning tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanningTreeCriterion {
    InlierCount,
    InverseCovTrace,
    Unit,
}

impl SpanningTreeCriterion {
    /// Inlier counts when every edge has one, else inverse covariance trace
    /// when every edge has a covariance, else unit weights.
    pub fn auto(g: &ViewGraph) -> Self {
        if !g.edges.is_empty() && g.edges.iter().all(|e| e.inlier_count.is_some()) {
            SpanningTreeCriterion::InlierCount
        } else if !g.edges.is_empty() && g.edges.iter().all(|e| e.covariance.is_some()) {
            SpanningTreeCriterion::InverseCovTrace
        } else {
            SpanningTreeCriterion::Unit
        }
    }

    pub fn weight(self, e: &EdgeMeasurement) -> f64 {
        match self {
            SpanningTreeCriterion::InlierCount => e.inlier_count.unwrap_or(0) as f64,
            SpanningTreeCriterion::InverseCovTrace => {
                e.covariance.map(|c| 1.0 / c.trace()).unwrap_or(0.0)
            }
            SpanningTreeCriterion::Unit => 1.0,
        }
    }
}

/// Kruskal maximum spanning forest; returns indices into `g.edges()`.
/// Ties keep edge order.
pub fn maximum_spanning_tree(g: &ViewGraph, criterion: SpanningTreeCriterion) -> Vec<usize> {
    let mut order: Vec<usize> = (0..g.edges.len()).collect();
    let weights: Vec<f64> = g.edges.iter().map(|e| criterion.weight(e)).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));
    let mut dsu = DisjointSet::new(g.nodes.len());
    let mut tree = Vec::with_capacity(g.nodes.len().saturating_sub(1));
    for idx in order {
        let e = &g.edges[idx];
        if dsu.union(g.index_of(e.i).unwrap(), g.index_of(e.j).unwrap()) {
            tree.push(idx);
        }
    }
    tree.sort_unstable();
    tree
}

/// Initial absolute rotations composed along a maximum spanning tree rooted
/// at the smallest node id (which gets the identity).
pub fn spanning_tree_init(
    g: &ViewGraph,
    criterion: SpanningTreeCriterion,
) -> Result<BTreeMap<NodeId, Rotation>> {
    let components = connected_components(g).len();
    if components > 1 {
        return Err(Error::Disconnected { components });
    }
    let mut result = BTreeMap::new();
    let Some(root) = g.nodes.first() else {
        return Ok(result);
    };
    let tree = maximum_spanning_tree(g, criterion);
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); g.nodes.len()];
    for &idx in &tree {
        let e = &g.edges[idx];
        adjacency[g.index_of(e.i).unwrap()].push(idx);
        adjacency[g.index_of(e.j).unwrap()].push(idx);
    }
    let mut rotations: Vec<Option<Rotation>> = vec![None; g.nodes.len()];
    rotations[0] = Some(Rotation::identity());
    let mut queue = VecDeque::from([0usize]);
    while let Some(at) = queue.pop_front() {
        let here = rotations[at].unwrap();
        for &idx in &adjacency[at] {
            let e = &g.edges[idx];
            let (other_id, other_rot) = if g.nodes[at].id == e.i {
                // R_j = R_ijᵀ R_i
                (e.j, e.rotation.inverse() * here)
            } else {
                // R_i = R_ij R_j
                (e.i, e.rotation * here)
            };
            let other = g.index_of(other_id).unwrap();
            if rotations[other].is_none() {
                rotations[other] = Some(other_rot);
                queue.push_back(other);
            }
        }
    }
    debug_assert_eq!(g.nodes[0].id, root.id);
    for (node, rot) in g.nodes.iter().zip(rotations) {
        result.insert(node.id, rot.expect("connected graph reaches every node"));
    }
    Ok(result)
}
