//! Problem instances and solutions of the minimum-cost subgraph multicut problem.
//!
//! A [`ProblemGraph`] holds the body-part proposals (nodes), typed weighted
//! edges, retention costs and hard must-link / must-cut constraints. A
//! [`Solution`] is a partial partition: the selected nodes together with the
//! cluster each one belongs to. Edge labels are derived from the partition, so
//! the cycle consistency constraints hold by construction; [`validate`] checks
//! the remaining conditions (cluster connectivity and the hard constraints).

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = usize;
pub type PartId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn offset_to(&self, other: &Point) -> Point {
        Point::new(other.x - self.x, other.y - self.y)
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartType {
    pub id: PartId,
    pub name: String,
    pub is_root: bool,
}

/// The ordered set of body-part types of a data set.
///
/// At most one root pair may be configured. The second root part is the
/// *anchor*: its detections act as person nodes in the top-down/bottom-up
/// model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartVocabulary {
    parts: Vec<PartType>,
    roots: Option<[PartId; 2]>,
}

/// Part names of the 14-joint layout used by the default configuration.
pub const MPII_PARTS: [&str; 14] = [
    "head_top",
    "neck",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_hip",
    "r_knee",
    "r_ankle",
    "l_hip",
    "l_knee",
    "l_ankle",
];

impl PartVocabulary {
    pub fn new<S: AsRef<str>>(names: &[S], roots: Option<[&str; 2]>) -> Result<Self> {
        let mut parts: Vec<PartType> = Vec::with_capacity(names.len());
        for (id, name) in names.iter().enumerate() {
            let name = name.as_ref();
            if name.is_empty() {
                return Err(Error::config("empty part name"));
            }
            if parts.iter().any(|p| p.name == name) {
                return Err(Error::config(format!("duplicate part name `{name}`")));
            }
            parts.push(PartType {
                id,
                name: name.to_string(),
                is_root: false,
            });
        }
        let mut vocab = PartVocabulary { parts, roots: None };
        if let Some([a, b]) = roots {
            let ia = vocab.require(a)?;
            let ib = vocab.require(b)?;
            if ia == ib {
                return Err(Error::config("root pair must name two distinct parts"));
            }
            vocab.parts[ia].is_root = true;
            vocab.parts[ib].is_root = true;
            vocab.roots = Some([ia, ib]);
        }
        Ok(vocab)
    }

    /// 14 MPII-style joints with `head_top` and `neck` as the root pair.
    pub fn mpii() -> Self {
        Self::new(&MPII_PARTS, Some(["head_top", "neck"])).expect("static vocabulary is valid")
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn parts(&self) -> &[PartType] {
        &self.parts
    }

    pub fn get(&self, id: PartId) -> Option<&PartType> {
        self.parts.get(id)
    }

    pub fn name(&self, id: PartId) -> &str {
        &self.parts[id].name
    }

    pub fn id_of(&self, name: &str) -> Option<PartId> {
        self.parts.iter().position(|p| p.name == name)
    }

    pub fn require(&self, name: &str) -> Result<PartId> {
        self.id_of(name)
            .ok_or_else(|| Error::config(format!("unknown part type `{name}`")))
    }

    pub fn roots(&self) -> Option<[PartId; 2]> {
        self.roots
    }

    pub fn is_root(&self, id: PartId) -> bool {
        self.parts.get(id).is_some_and(|p| p.is_root)
    }

    /// Root part whose detections serve as person nodes.
    pub fn anchor(&self) -> Option<PartId> {
        self.roots.map(|r| r[1])
    }
}

/// One body-part proposal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub node_id: NodeId,
    pub frame: usize,
    pub pos: Point,
    pub score: f64,
    pub part: PartId,
}

/// All proposals of one clip. Node ids equal indices into `detections`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub parts: PartVocabulary,
    pub detections: Vec<Detection>,
    pub num_frames: usize,
}

impl Sequence {
    pub fn new(
        parts: PartVocabulary,
        detections: Vec<Detection>,
        num_frames: usize,
    ) -> Result<Self> {
        for (i, d) in detections.iter().enumerate() {
            if d.node_id != i {
                return Err(Error::structure(format!(
                    "detection at index {i} has node_id {}",
                    d.node_id
                )));
            }
            if d.part >= parts.len() {
                return Err(Error::structure(format!(
                    "detection {i} has unknown part {}",
                    d.part
                )));
            }
            if d.frame >= num_frames {
                return Err(Error::structure(format!(
                    "detection {i} in frame {} of a {num_frames}-frame sequence",
                    d.frame
                )));
            }
            log_odds(d.score)?;
        }
        Ok(Sequence {
            parts,
            detections,
            num_frames,
        })
    }

    /// Node ids grouped by frame.
    pub fn frames(&self) -> Vec<Vec<NodeId>> {
        let mut out = vec![Vec::new(); self.num_frames];
        for d in &self.detections {
            out[d.frame].push(d.node_id);
        }
        out
    }

    pub fn detection(&self, id: NodeId) -> &Detection {
        &self.detections[id]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    CrossType,
    SameType,
    Temporal,
    RootAttachment,
}

impl EdgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::CrossType => "cross_type",
            EdgeKind::SameType => "same_type",
            EdgeKind::Temporal => "temporal",
            EdgeKind::RootAttachment => "root_attachment",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: NodeId,
    pub v: NodeId,
    pub kind: EdgeKind,
    pub cost: f64,
}

impl Edge {
    /// Endpoints are stored in ascending order.
    pub fn new(a: NodeId, b: NodeId, kind: EdgeKind, cost: f64) -> Self {
        let (u, v) = ordered(a, b);
        Edge { u, v, kind, cost }
    }

    pub fn endpoints(&self) -> (NodeId, NodeId) {
        (self.u, self.v)
    }
}

pub(crate) fn ordered(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Which orientation of the log-odds is used for costs.
///
/// `Negated` (the default) gives confident detections and likely links a
/// negative cost under minimization. `Literal` keeps `log(p / (1 - p))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostSign {
    #[default]
    Negated,
    Literal,
}

impl CostSign {
    pub fn apply(self, log_odds: f64) -> f64 {
        match self {
            CostSign::Negated => -log_odds,
            CostSign::Literal => log_odds,
        }
    }
}

pub fn log_odds(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain {
            what: "probability",
            value: p,
            domain: "(0, 1)",
        });
    }
    Ok((p / (1.0 - p)).ln())
}

/// Retention cost of a detection with the given score: `-log(s / (1 - s))`.
pub fn node_cost(score: f64) -> Result<f64> {
    node_cost_with(score, CostSign::Negated)
}

pub fn node_cost_with(score: f64, sign: CostSign) -> Result<f64> {
    Ok(sign.apply(log_odds(score)?))
}

/// A multicut instance: nodes with retention costs, weighted edges and hard
/// pairwise constraints. Node ids equal their index in `detections`.
#[derive(Debug, Clone)]
pub struct ProblemGraph {
    detections: Vec<Detection>,
    node_costs: Vec<f64>,
    edges: Vec<Edge>,
    must_link: BTreeSet<(NodeId, NodeId)>,
    must_cut: BTreeSet<(NodeId, NodeId)>,
    adjacency: Vec<Vec<(NodeId, usize)>>,
    edge_index: HashMap<(NodeId, NodeId), usize>,
}

impl ProblemGraph {
    pub fn new(
        detections: Vec<Detection>,
        node_costs: Vec<f64>,
        edges: Vec<Edge>,
        must_link: impl IntoIterator<Item = (NodeId, NodeId)>,
        must_cut: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Result<Self> {
        let n = detections.len();
        for (i, d) in detections.iter().enumerate() {
            if d.node_id != i {
                return Err(Error::structure(format!(
                    "detection at index {i} has node_id {}",
                    d.node_id
                )));
            }
        }
        if node_costs.len() != n {
            return Err(Error::structure(format!(
                "{} node costs for {n} nodes",
                node_costs.len()
            )));
        }
        if let Some(c) = node_costs.iter().find(|c| !c.is_finite()) {
            return Err(Error::structure(format!("non-finite node cost {c}")));
        }

        let mut adjacency = vec![Vec::new(); n];
        let mut edge_index = HashMap::with_capacity(edges.len());
        for (idx, e) in edges.iter().enumerate() {
            if e.u >= n || e.v >= n {
                return Err(Error::structure(format!(
                    "edge ({}, {}) references a missing node",
                    e.u, e.v
                )));
            }
            if e.u == e.v {
                return Err(Error::structure(format!("self-loop on node {}", e.u)));
            }
            if e.u > e.v {
                return Err(Error::structure(format!(
                    "edge ({}, {}) is not canonicalized",
                    e.u, e.v
                )));
            }
            if !e.cost.is_finite() {
                return Err(Error::structure(format!(
                    "edge ({}, {}) has non-finite cost",
                    e.u, e.v
                )));
            }
            if edge_index.insert((e.u, e.v), idx).is_some() {
                return Err(Error::structure(format!(
                    "duplicate edge ({}, {})",
                    e.u, e.v
                )));
            }
            adjacency[e.u].push((e.v, idx));
            adjacency[e.v].push((e.u, idx));
        }

        let canon = |pairs: &mut dyn Iterator<Item = (NodeId, NodeId)>,
                     what: &str|
         -> Result<BTreeSet<(NodeId, NodeId)>> {
            let mut out = BTreeSet::new();
            for (a, b) in pairs {
                if a >= n || b >= n {
                    return Err(Error::structure(format!(
                        "{what} pair ({a}, {b}) references a missing node"
                    )));
                }
                if a == b {
                    return Err(Error::structure(format!(
                        "{what} pair ({a}, {a}) is a self-pair"
                    )));
                }
                out.insert(ordered(a, b));
            }
            Ok(out)
        };
        let must_link = canon(&mut must_link.into_iter(), "must-link")?;
        let must_cut = canon(&mut must_cut.into_iter(), "must-cut")?;
        if let Some(&(a, b)) = must_link.intersection(&must_cut).next() {
            return Err(Error::Infeasible {
                reason: "pair is both must-link and must-cut".into(),
                chain: vec![a, b],
            });
        }

        Ok(ProblemGraph {
            detections,
            node_costs,
            edges,
            must_link,
            must_cut,
            adjacency,
            edge_index,
        })
    }

    /// An instance without detection geometry; every node is a placeholder
    /// proposal in frame 0. Used for solver experiments on raw costs.
    pub fn from_costs(
        node_costs: Vec<f64>,
        edges: Vec<Edge>,
        must_link: impl IntoIterator<Item = (NodeId, NodeId)>,
        must_cut: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Result<Self> {
        let detections = (0..node_costs.len())
            .map(|i| Detection {
                node_id: i,
                frame: 0,
                pos: Point::default(),
                score: 0.5,
                part: 0,
            })
            .collect();
        Self::new(detections, node_costs, edges, must_link, must_cut)
    }

    pub fn num_nodes(&self) -> usize {
        self.detections.len()
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn detection(&self, id: NodeId) -> &Detection {
        &self.detections[id]
    }

    pub fn node_costs(&self) -> &[f64] {
        &self.node_costs
    }

    pub fn node_cost(&self, id: NodeId) -> f64 {
        self.node_costs[id]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn must_link(&self) -> &BTreeSet<(NodeId, NodeId)> {
        &self.must_link
    }

    pub fn must_cut(&self) -> &BTreeSet<(NodeId, NodeId)> {
        &self.must_cut
    }

    pub fn edge_between(&self, a: NodeId, b: NodeId) -> Option<&Edge> {
        self.edge_index.get(&ordered(a, b)).map(|&i| &self.edges[i])
    }

    /// Neighbors of `v` with the cost of the connecting edge.
    pub fn neighbors(&self, v: NodeId) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.adjacency[v]
            .iter()
            .map(move |&(w, idx)| (w, self.edges[idx].cost))
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adjacency[v].len()
    }

    pub fn count_edges(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }

    /// Checks the semantic rules of each edge kind against the part vocabulary.
    pub fn check_edge_kinds(&self, vocab: &PartVocabulary) -> Result<()> {
        for e in &self.edges {
            let a = &self.detections[e.u];
            let b = &self.detections[e.v];
            if a.part >= vocab.len() || b.part >= vocab.len() {
                return Err(Error::structure(format!(
                    "edge ({}, {}) touches an unknown part type",
                    e.u, e.v
                )));
            }
            let ok = match e.kind {
                EdgeKind::Temporal => a.part == b.part && a.frame.abs_diff(b.frame) == 1,
                EdgeKind::SameType => a.part == b.part && a.frame == b.frame,
                EdgeKind::CrossType => a.part != b.part && a.frame == b.frame,
                EdgeKind::RootAttachment => {
                    a.frame == b.frame
                        && a.part != b.part
                        && (vocab.is_root(a.part) || vocab.is_root(b.part))
                }
            };
            if !ok {
                return Err(Error::structure(format!(
                    "edge ({}, {}) violates the {} edge rules",
                    e.u,
                    e.v,
                    e.kind.as_str()
                )));
            }
        }
        Ok(())
    }
}

/// Selected nodes and their cluster ids. Nodes absent from the map are not
/// selected. Two selected nodes are *joined* iff they share a cluster id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Solution {
    cluster_of: BTreeMap<NodeId, usize>,
}

impl Solution {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_assignment(cluster_of: BTreeMap<NodeId, usize>) -> Self {
        Solution { cluster_of }
    }

    /// Builds a solution from explicit clusters; cluster ids follow input order.
    /// Empty clusters are skipped.
    pub fn from_clusters<I, C>(clusters: I) -> Self
    where
        I: IntoIterator<Item = C>,
        C: IntoIterator<Item = NodeId>,
    {
        let mut cluster_of = BTreeMap::new();
        let mut next = 0;
        for c in clusters {
            let mut any = false;
            for v in c {
                cluster_of.insert(v, next);
                any = true;
            }
            if any {
                next += 1;
            }
        }
        Solution { cluster_of }
    }

    pub fn is_selected(&self, v: NodeId) -> bool {
        self.cluster_of.contains_key(&v)
    }

    pub fn cluster_of(&self, v: NodeId) -> Option<usize> {
        self.cluster_of.get(&v).copied()
    }

    pub fn assignment(&self) -> &BTreeMap<NodeId, usize> {
        &self.cluster_of
    }

    pub fn selected(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.cluster_of.keys().copied()
    }

    pub fn num_selected(&self) -> usize {
        self.cluster_of.len()
    }

    pub fn is_joined(&self, a: NodeId, b: NodeId) -> bool {
        match (self.cluster_of.get(&a), self.cluster_of.get(&b)) {
            (Some(x), Some(y)) => x == y,
            _ => false,
        }
    }

    /// Clusters with sorted members, ordered by their smallest member.
    pub fn clusters(&self) -> Vec<Vec<NodeId>> {
        let mut by_id: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
        for (&v, &c) in &self.cluster_of {
            by_id.entry(c).or_default().push(v);
        }
        let mut out: Vec<Vec<NodeId>> = by_id.into_values().collect();
        out.sort();
        out
    }

    /// Same partition with cluster ids renumbered in canonical order.
    pub fn canonical(&self) -> Solution {
        Solution::from_clusters(self.clusters())
    }

    /// Canonical text encoding, e.g. `0,1|3|5,6`; `-` for the empty solution.
    pub fn encode(&self) -> String {
        let clusters = self.clusters();
        if clusters.is_empty() {
            return "-".into();
        }
        clusters
            .iter()
            .map(|c| {
                c.iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect::<Vec<_>>()
            .join("|")
    }

    /// Induced edge labels `y_e` (true = joined) in graph edge order.
    pub fn edge_labels(&self, graph: &ProblemGraph) -> Vec<bool> {
        graph
            .edges()
            .iter()
            .map(|e| self.is_joined(e.u, e.v))
            .collect()
    }

    /// Induced node labels `x_d`.
    pub fn node_labels(&self, graph: &ProblemGraph) -> Vec<bool> {
        (0..graph.num_nodes())
            .map(|v| self.is_selected(v))
            .collect()
    }
}

/// Objective value: retention costs of selected nodes plus costs of joined edges.
pub fn objective(graph: &ProblemGraph, sol: &Solution) -> Result<f64> {
    let n = graph.num_nodes();
    let mut total = 0.0;
    for v in sol.selected() {
        if v >= n {
            return Err(Error::structure(format!(
                "solution references unknown node {v}"
            )));
        }
        total += graph.node_cost(v);
    }
    for e in graph.edges() {
        if sol.is_joined(e.u, e.v) {
            total += e.cost;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    UnknownNode(NodeId),
    /// A cluster whose members are not connected through joined edges.
    DisconnectedCluster {
        cluster: usize,
        components: Vec<Vec<NodeId>>,
    },
    MustLinkUnselected(NodeId, NodeId),
    MustLinkSeparated(NodeId, NodeId),
    MustCutJoined(NodeId, NodeId),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownNode(v) => write!(f, "unknown node {v}"),
            Violation::DisconnectedCluster {
                cluster,
                components,
            } => write!(
                f,
                "connectivity: cluster {cluster} splits into components {components:?}"
            ),
            Violation::MustLinkUnselected(a, b) => {
                write!(f, "must-link: pair ({a}, {b}) is not fully selected")
            }
            Violation::MustLinkSeparated(a, b) => {
                write!(f, "must-link: pair ({a}, {b}) lies in different clusters")
            }
            Violation::MustCutJoined(a, b) => {
                write!(f, "must-cut: pair ({a}, {b}) shares a cluster")
            }
        }
    }
}

/// Lists every violated feasibility condition of `sol` on `graph`.
///
/// Edge/node consistency holds by construction (an edge is joined only when
/// both endpoints are selected), so the checks are: known nodes, connected
/// clusters, and the hard pairwise constraints.
pub fn validate(graph: &ProblemGraph, sol: &Solution) -> Vec<Violation> {
    let n = graph.num_nodes();
    let mut out = Vec::new();
    for v in sol.selected() {
        if v >= n {
            out.push(Violation::UnknownNode(v));
        }
    }
    if !out.is_empty() {
        return out;
    }

    let mut members: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
    for (&v, &c) in sol.assignment() {
        members.entry(c).or_default().push(v);
    }
    for (&cluster, nodes) in &members {
        let components = joined_components(graph, sol, nodes);
        if components.len() > 1 {
            out.push(Violation::DisconnectedCluster {
                cluster,
                components,
            });
        }
    }

    for &(a, b) in graph.must_link() {
        if !sol.is_selected(a) || !sol.is_selected(b) {
            out.push(Violation::MustLinkUnselected(a, b));
        } else if !sol.is_joined(a, b) {
            out.push(Violation::MustLinkSeparated(a, b));
        }
    }
    for &(a, b) in graph.must_cut() {
        if sol.is_joined(a, b) {
            out.push(Violation::MustCutJoined(a, b));
        }
    }
    out
}

/// Connected components of `nodes` using only edges joined in `sol`.
fn joined_components(graph: &ProblemGraph, sol: &Solution, nodes: &[NodeId]) -> Vec<Vec<NodeId>> {
    let inside: BTreeSet<NodeId> = nodes.iter().copied().collect();
    let mut seen = BTreeSet::new();
    let mut components = Vec::new();
    for &start in nodes {
        if !seen.insert(start) {
            continue;
        }
        let mut comp = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for (w, _) in graph.neighbors(v) {
                if inside.contains(&w) && sol.is_joined(v, w) && seen.insert(w) {
                    comp.push(w);
                    queue.push_back(w);
                }
            }
        }
        comp.sort_unstable();
        components.push(comp);
    }
    components.sort();
    components
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(ca: f64, cb: f64, w: f64) -> ProblemGraph {
        ProblemGraph::from_costs(
            vec![ca, cb],
            vec![Edge::new(0, 1, EdgeKind::SameType, w)],
            [],
            [],
        )
        .unwrap()
    }

    #[test]
    fn node_cost_values() {
        assert_eq!(node_cost(0.5).unwrap(), 0.0);
        // -ln(9)
        assert!((node_cost(0.9).unwrap() + 2.197_224_577_336_219_6).abs() < 1e-12);
        assert!((node_cost(0.1).unwrap() - 2.197_224_577_336_219_6).abs() < 1e-12);
        assert!(node_cost(0.99).unwrap() < node_cost(0.6).unwrap());
    }

    #[test]
    fn node_cost_domain() {
        for s in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(matches!(node_cost(s), Err(Error::Domain { .. })), "{s}");
        }
    }

    #[test]
    fn literal_sign_flips() {
        assert!(node_cost_with(0.9, CostSign::Literal).unwrap() > 0.0);
    }

    #[test]
    fn objective_examples() {
        let g = pair(-1.0, -2.0, -0.5);
        assert_eq!(objective(&g, &Solution::empty()).unwrap(), 0.0);
        let joined = Solution::from_clusters([vec![0, 1]]);
        assert!((objective(&g, &joined).unwrap() + 3.5).abs() < 1e-12);
        let split = Solution::from_clusters([vec![0], vec![1]]);
        assert!((objective(&g, &split).unwrap() + 3.0).abs() < 1e-12);
    }

    #[test]
    fn objective_rejects_unknown_node() {
        let g = pair(-1.0, -2.0, -0.5);
        let sol = Solution::from_clusters([vec![0, 7]]);
        assert!(matches!(objective(&g, &sol), Err(Error::Structure(_))));
    }

    #[test]
    fn validate_triangle_and_path() {
        let tri = ProblemGraph::from_costs(
            vec![0.0; 3],
            vec![
                Edge::new(0, 1, EdgeKind::SameType, 1.0),
                Edge::new(1, 2, EdgeKind::SameType, 1.0),
                Edge::new(0, 2, EdgeKind::SameType, 1.0),
            ],
            [],
            [],
        )
        .unwrap();
        let all = Solution::from_clusters([vec![0, 1, 2]]);
        assert!(validate(&tri, &all).is_empty());

        let path = ProblemGraph::from_costs(
            vec![0.0; 3],
            vec![
                Edge::new(0, 1, EdgeKind::SameType, 1.0),
                Edge::new(1, 2, EdgeKind::SameType, 1.0),
            ],
            [],
            [],
        )
        .unwrap();
        assert!(validate(&path, &all).is_empty());
    }

    #[test]
    fn validate_flags_disconnected_cluster() {
        let g = ProblemGraph::from_costs(vec![0.0; 2], vec![], [], []).unwrap();
        let sol = Solution::from_clusters([vec![0, 1]]);
        let v = validate(&g, &sol);
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], Violation::DisconnectedCluster { .. }));
        assert!(v[0].to_string().starts_with("connectivity"));
    }

    #[test]
    fn validate_constraints() {
        let g = ProblemGraph::from_costs(
            vec![0.0; 3],
            vec![
                Edge::new(0, 1, EdgeKind::SameType, 1.0),
                Edge::new(1, 2, EdgeKind::SameType, 1.0),
            ],
            [(0, 1)],
            [(1, 2)],
        )
        .unwrap();
        let v = validate(&g, &Solution::from_clusters([vec![0], vec![1, 2]]));
        assert_eq!(
            v,
            vec![
                Violation::MustLinkSeparated(0, 1),
                Violation::MustCutJoined(1, 2)
            ]
        );
        let v = validate(&g, &Solution::from_clusters([vec![1]]));
        assert_eq!(v, vec![Violation::MustLinkUnselected(0, 1)]);
    }

    #[test]
    fn graph_rejects_bad_structure() {
        let e = |a, b| Edge::new(a, b, EdgeKind::SameType, 0.0);
        assert!(ProblemGraph::from_costs(vec![0.0; 2], vec![e(0, 0)], [], []).is_err());
        assert!(ProblemGraph::from_costs(vec![0.0; 2], vec![e(0, 5)], [], []).is_err());
        assert!(ProblemGraph::from_costs(vec![0.0; 2], vec![e(0, 1), e(1, 0)], [], []).is_err());
        assert!(matches!(
            ProblemGraph::from_costs(vec![0.0; 2], vec![], [(0, 1)], [(1, 0)]),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn canonical_encoding_ignores_ids() {
        let a = Solution::from_assignment(BTreeMap::from([(3, 9), (0, 4), (1, 4)]));
        let b = Solution::from_assignment(BTreeMap::from([(3, 0), (0, 1), (1, 1)]));
        assert_eq!(a.encode(), "0,1|3");
        assert_eq!(a.encode(), b.encode());
        assert_eq!(a.canonical(), b.canonical());
        assert_eq!(Solution::empty().encode(), "-");
    }

    #[test]
    fn edge_kind_rules() {
        let vocab = PartVocabulary::mpii();
        let det = |id, frame, part| Detection {
            node_id: id,
            frame,
            pos: Point::default(),
            score: 0.9,
            part,
        };
        let dets = vec![det(0, 0, 4), det(1, 1, 4), det(2, 2, 4)];
        let ok = ProblemGraph::new(
            dets.clone(),
            vec![0.0; 3],
            vec![Edge::new(0, 1, EdgeKind::Temporal, 0.0)],
            [],
            [],
        )
        .unwrap();
        assert!(ok.check_edge_kinds(&vocab).is_ok());
        let bad = ProblemGraph::new(
            dets,
            vec![0.0; 3],
            vec![Edge::new(0, 2, EdgeKind::Temporal, 0.0)],
            [],
            [],
        )
        .unwrap();
        assert!(bad.check_edge_kinds(&vocab).is_err());
    }

    #[test]
    fn vocabulary_roots() {
        let v = PartVocabulary::mpii();
        assert_eq!(v.len(), 14);
        assert_eq!(v.roots(), Some([0, 1]));
        assert_eq!(v.anchor(), Some(1));
        assert!(v.is_root(0) && !v.is_root(4));
        assert!(PartVocabulary::new(&["a", "a"], None).is_err());
        assert!(PartVocabulary::new(&["a", "b"], Some(["a", "c"])).is_err());
    }
}
