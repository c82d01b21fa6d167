//! End-to-end tracking: head-track seeding, the constrained full-body
//! problem, and conversion of clusters to person tracks.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::builder::{
    build_bu, build_tdbu, estimate_head_size, train_cost_models, BuildOptions,
    ConditionalAttachment, Connectivity, CostModels, ModelTrainingOptions, SparsityPattern,
    TemporalInputs,
};
use crate::error::{Error, Result};
use crate::model::{
    objective, ordered, CostSign, Detection, Edge, EdgeKind, NodeId, PartId, Point, ProblemGraph,
    Sequence, Solution,
};
use crate::solver::{solve_exact, solve_local_search, SolverParams};
use crate::synth::{generate_scene, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub pos: Point,
    pub score: f64,
}

pub type Pose = BTreeMap<PartId, Joint>;

/// Person id → frame → part → joint.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackSet {
    tracks: BTreeMap<usize, BTreeMap<usize, Pose>>,
}

impl TrackSet {
    pub fn insert(
        &mut self,
        person: usize,
        frame: usize,
        part: PartId,
        joint: Joint,
    ) -> Result<()> {
        let pose = self
            .tracks
            .entry(person)
            .or_default()
            .entry(frame)
            .or_default();
        if pose.contains_key(&part) {
            return Err(Error::structure(format!(
                "person {person} has two entries for part {part} in frame {frame}"
            )));
        }
        pose.insert(part, joint);
        Ok(())
    }

    pub fn tracks(&self) -> &BTreeMap<usize, BTreeMap<usize, Pose>> {
        &self.tracks
    }

    pub fn persons(&self) -> impl Iterator<Item = usize> + '_ {
        self.tracks.keys().copied()
    }

    pub fn num_persons(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn num_joints(&self) -> usize {
        self.tracks
            .values()
            .flat_map(|f| f.values())
            .map(|p| p.len())
            .sum()
    }

    pub fn pose(&self, person: usize, frame: usize) -> Option<&Pose> {
        self.tracks.get(&person)?.get(&frame)
    }

    /// Poses grouped by frame, persons in id order.
    pub fn by_frame(&self) -> BTreeMap<usize, Vec<(usize, &Pose)>> {
        let mut out: BTreeMap<usize, Vec<(usize, &Pose)>> = BTreeMap::new();
        for (&person, frames) in &self.tracks {
            for (&t, pose) in frames {
                if !pose.is_empty() {
                    out.entry(t).or_default().push((person, pose));
                }
            }
        }
        out
    }

    /// Keeps joints with score strictly above `threshold`.
    pub fn retain_score_above(&mut self, threshold: f64) {
        for frames in self.tracks.values_mut() {
            for pose in frames.values_mut() {
                pose.retain(|_, j| j.score > threshold);
            }
            frames.retain(|_, p| !p.is_empty());
        }
        self.tracks.retain(|_, f| !f.is_empty());
    }

    pub fn remove_person(&mut self, person: usize) -> bool {
        self.tracks.remove(&person).is_some()
    }

    pub fn check_frames(&self, num_frames: usize) -> Result<()> {
        for (p, frames) in &self.tracks {
            if let Some(&t) = frames.keys().next_back().filter(|&&t| t >= num_frames) {
                return Err(Error::structure(format!(
                    "person {p} has a pose in frame {t} of a {num_frames}-frame sequence"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ModelVariant {
    #[serde(rename = "bu-full")]
    BuFull,
    #[default]
    #[serde(rename = "bu-sparse")]
    BuSparse,
    #[serde(rename = "tdbu")]
    Tdbu,
}

impl ModelVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelVariant::BuFull => "bu-full",
            ModelVariant::BuSparse => "bu-sparse",
            ModelVariant::Tdbu => "tdbu",
        }
    }

    /// Score below or at which detections are dropped before tracking.
    pub fn default_score_threshold(self) -> f64 {
        match self {
            ModelVariant::BuFull | ModelVariant::BuSparse => 0.65,
            ModelVariant::Tdbu => 0.7,
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bu-full" => Ok(ModelVariant::BuFull),
            "bu-sparse" => Ok(ModelVariant::BuSparse),
            "tdbu" => Ok(ModelVariant::Tdbu),
            other => Err(Error::config(format!(
                "unknown model `{other}` (expected bu-full, bu-sparse or tdbu)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequenceConfig {
    pub variant: ModelVariant,
    /// Frames solved jointly; longer inputs are cut into overlapping windows.
    pub window: usize,
    pub overlap: usize,
    pub solver: SolverParams,
    /// Defaults to the variant's threshold.
    pub score_threshold: Option<f64>,
    /// Defaults to twice the estimated head size.
    pub temporal_gate: Option<f64>,
    pub sign: CostSign,
    /// Cross-type part pairs of the sparse model; defaults to the kinematic tree.
    pub sparsity: Option<Vec<(String, String)>>,
    /// Head tracks spanning fewer frames are discarded.
    pub min_head_track: usize,
    /// Retention cost of every node in the top-down/bottom-up model.
    pub tdbu_unary: f64,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        SequenceConfig {
            variant: ModelVariant::BuSparse,
            window: 41,
            overlap: 10,
            solver: SolverParams::default(),
            score_threshold: None,
            temporal_gate: None,
            sign: CostSign::Negated,
            sparsity: None,
            min_head_track: 1,
            tdbu_unary: 0.0,
        }
    }
}

impl SequenceConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if self.window == 0 {
            return Err(Error::config("window must be at least 1 frame"));
        }
        if self.overlap >= self.window {
            return Err(Error::config("overlap must be smaller than the window"));
        }
        if let Some(t) = self.score_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::config(format!("score threshold {t} outside [0, 1]")));
            }
        }
        if let Some(g) = self.temporal_gate {
            if !(g > 0.0) || !g.is_finite() {
                return Err(Error::config(format!("temporal gate {g} must be positive")));
            }
        }
        if !self.tdbu_unary.is_finite() {
            return Err(Error::config("tdbu_unary must be finite"));
        }
        Ok(())
    }

    pub fn score_threshold(&self) -> f64 {
        self.score_threshold
            .unwrap_or_else(|| self.variant.default_score_threshold())
    }

    fn connectivity(&self, seq: &Sequence) -> Result<Connectivity> {
        Ok(match self.variant {
            ModelVariant::BuFull => Connectivity::Full,
            _ => Connectivity::Sparse(match &self.sparsity {
                Some(pairs) => SparsityPattern::from_names(&seq.parts, pairs)?,
                None => SparsityPattern::kinematic_tree(&seq.parts)?,
            }),
        })
    }

    fn build_options(&self, seq: &Sequence) -> BuildOptions {
        BuildOptions {
            temporal_gate: self
                .temporal_gate
                .unwrap_or_else(|| 2.0 * estimate_head_size(seq, 30.0)),
            sign: self.sign,
        }
    }
}

/// Keeps detections with score strictly greater than `threshold`.
pub fn filter_by_score(detections: &[Detection], threshold: f64) -> Vec<Detection> {
    detections
        .iter()
        .filter(|d| d.score > threshold)
        .copied()
        .collect()
}

/// A renumbered part of a sequence together with its side inputs.
#[derive(Debug, Clone)]
pub struct SubSequence {
    pub sequence: Sequence,
    pub inputs: TemporalInputs,
    pub attachments: Vec<ConditionalAttachment>,
    /// Original node id of every new node.
    pub original: Vec<NodeId>,
    /// Original index of the first frame.
    pub first_frame: usize,
}

/// Restricts a sequence to the nodes in `keep` that lie in `frames`,
/// renumbering nodes and frames from zero.
pub fn restrict(
    seq: &Sequence,
    inputs: &TemporalInputs,
    attachments: &[ConditionalAttachment],
    keep: impl Fn(&Detection) -> bool,
    frames: std::ops::Range<usize>,
) -> Result<SubSequence> {
    let mut new_id = vec![None; seq.detections.len()];
    let mut dets = Vec::new();
    let mut original = Vec::new();
    for d in &seq.detections {
        if frames.contains(&d.frame) && keep(d) {
            new_id[d.node_id] = Some(dets.len());
            dets.push(Detection {
                node_id: dets.len(),
                frame: d.frame - frames.start,
                ..*d
            });
            original.push(d.node_id);
        }
    }
    let num_frames = frames.end.min(seq.num_frames).saturating_sub(frames.start);
    let sequence = Sequence::new(seq.parts.clone(), dets, num_frames)?;

    let mut sub = TemporalInputs::default();
    for (&old, set) in &inputs.descriptors {
        if let Some(Some(n)) = new_id.get(old) {
            let mut set = set.clone();
            set.node = *n;
            sub.descriptors.insert(*n, set);
        }
    }
    for map in [&inputs.forward, &inputs.reverse] {
        for (&t, set) in map {
            if t >= frames.start && t + 1 < frames.end {
                let mut set = set.clone();
                set.frame = t - frames.start;
                sub.insert_correspondences(set);
            }
        }
    }
    let attachments = attachments
        .iter()
        .filter_map(|a| {
            Some(ConditionalAttachment {
                root: (*new_id.get(a.root)?)?,
                node: (*new_id.get(a.node)?)?,
                p: a.p,
            })
        })
        .collect();
    Ok(SubSequence {
        sequence,
        inputs: sub,
        attachments,
        original,
        first_frame: frames.start,
    })
}

/// Tracks of the root parts only.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HeadTracks {
    /// Sorted node ids of each track; tracks ordered by their first node.
    pub tracks: Vec<Vec<NodeId>>,
    /// Edges of a spanning tree of each track in the head graph.
    pub links: Vec<Vec<(NodeId, NodeId, EdgeKind)>>,
}

impl HeadTracks {
    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn to_trackset(&self, seq: &Sequence) -> TrackSet {
        let mut out = TrackSet::default();
        for (id, nodes) in self.tracks.iter().enumerate() {
            for (frame, pose) in poses_of(seq, nodes) {
                for (part, v) in pose {
                    let d = seq.detection(v);
                    out.insert(
                        id,
                        frame,
                        part,
                        Joint {
                            pos: d.pos,
                            score: d.score,
                        },
                    )
                    .expect("one node per part and frame");
                }
            }
        }
        out
    }
}

/// Per-frame, per-part highest-score node; ties go to the lowest node id.
fn poses_of(seq: &Sequence, nodes: &[NodeId]) -> BTreeMap<usize, BTreeMap<PartId, NodeId>> {
    let mut out: BTreeMap<usize, BTreeMap<PartId, NodeId>> = BTreeMap::new();
    for &v in nodes {
        let d = seq.detection(v);
        let slot = out.entry(d.frame).or_default().entry(d.part).or_insert(v);
        let cur = seq.detection(*slot);
        if d.score > cur.score || (d.score == cur.score && v < *slot) {
            *slot = v;
        }
    }
    out
}

/// Pose of a cluster in one frame: the highest-score detection of each part
/// type, ties broken by the lowest node id.
pub fn extract_pose(seq: &Sequence, cluster: &[NodeId], frame: usize) -> Pose {
    poses_of(seq, cluster)
        .remove(&frame)
        .unwrap_or_default()
        .into_iter()
        .map(|(part, v)| {
            let d = seq.detection(v);
            (
                part,
                Joint {
                    pos: d.pos,
                    score: d.score,
                },
            )
        })
        .collect()
}

fn solve(graph: &ProblemGraph, params: &SolverParams) -> Result<Solution> {
    if graph.num_nodes() <= params.max_exact_nodes {
        solve_exact(graph, params)
    } else {
        solve_local_search(graph, params)
    }
}

/// Tracks of the two head joints alone: the bottom-up problem on root-part
/// detections with same-type, temporal and head-top/neck edges.
pub fn seed_head_tracks(
    seq: &Sequence,
    models: &CostModels,
    inputs: &TemporalInputs,
    cfg: &SequenceConfig,
) -> Result<HeadTracks> {
    let Some([top, anchor]) = seq.parts.roots() else {
        return Err(Error::config("the part vocabulary declares no root parts"));
    };
    let sub = restrict(
        seq,
        inputs,
        &[],
        |d| seq.parts.is_root(d.part),
        0..seq.num_frames,
    )?;
    if sub.sequence.detections.is_empty() {
        return Ok(HeadTracks::default());
    }
    let pattern = SparsityPattern::from_ids(&seq.parts, [(top, anchor)])?;
    let graph = build_bu(
        &sub.sequence,
        models,
        &Connectivity::Sparse(pattern),
        &sub.inputs,
        &cfg.build_options(seq),
    )?;
    let sol = solve(&graph, &cfg.solver)?;

    let mut tracks = Vec::new();
    let mut links = Vec::new();
    for cluster in sol.clusters() {
        let frames: BTreeSet<usize> = cluster
            .iter()
            .map(|&v| sub.sequence.detection(v).frame)
            .collect();
        if frames.len() < cfg.min_head_track.max(1) {
            continue;
        }
        let tree = spanning_tree(&graph, &cluster);
        let mut nodes: Vec<NodeId> = cluster.iter().map(|&v| sub.original[v]).collect();
        nodes.sort_unstable();
        tracks.push(nodes);
        links.push(
            tree.into_iter()
                .map(|(a, b, k)| {
                    let (a, b) = ordered(sub.original[a], sub.original[b]);
                    (a, b, k)
                })
                .collect::<Vec<_>>(),
        );
    }
    let mut order: Vec<usize> = (0..tracks.len()).collect();
    order.sort_by_key(|&i| tracks[i][0]);
    Ok(HeadTracks {
        tracks: order.iter().map(|&i| tracks[i].clone()).collect(),
        links: order.iter().map(|&i| links[i].clone()).collect(),
    })
}

fn spanning_tree(graph: &ProblemGraph, cluster: &[NodeId]) -> Vec<(NodeId, NodeId, EdgeKind)> {
    let inside: BTreeSet<NodeId> = cluster.iter().copied().collect();
    let mut seen = BTreeSet::from([cluster[0]]);
    let mut queue = VecDeque::from([cluster[0]]);
    let mut out = Vec::new();
    while let Some(v) = queue.pop_front() {
        let mut next: Vec<NodeId> = graph
            .neighbors(v)
            .map(|(w, _)| w)
            .filter(|w| inside.contains(w) && !seen.contains(w))
            .collect();
        next.sort_unstable();
        for w in next {
            if seen.insert(w) {
                let kind = graph.edge_between(v, w).expect("neighbor edge").kind;
                out.push((v, w, kind));
                queue.push_back(w);
            }
        }
    }
    out
}

/// Per-stage wall time in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub seed: f64,
    pub build: f64,
    pub solve: f64,
}

impl Timings {
    fn add(&mut self, o: &Timings) {
        self.seed += o.seed;
        self.build += o.build;
        self.solve += o.solve;
    }

    /// Time spent on graph construction and partitioning.
    pub fn graph(&self) -> f64 {
        self.seed + self.build + self.solve
    }
}

/// Result of the full-body problem on one window.
#[derive(Debug, Clone, PartialEq)]
pub struct FullTracking {
    /// Head track index → frame → part → node id.
    pub persons: BTreeMap<usize, BTreeMap<usize, BTreeMap<PartId, NodeId>>>,
    pub objective: f64,
    pub nodes: usize,
    pub edges: usize,
    pub timings: Timings,
}

impl FullTracking {
    pub fn to_trackset(&self, seq: &Sequence) -> TrackSet {
        let mut out = TrackSet::default();
        for (&p, frames) in &self.persons {
            for (&t, pose) in frames {
                for (&part, &v) in pose {
                    let d = seq.detection(v);
                    out.insert(
                        p,
                        t,
                        part,
                        Joint {
                            pos: d.pos,
                            score: d.score,
                        },
                    )
                    .expect("one node per part and frame");
                }
            }
        }
        out
    }
}

fn link_kind(seq: &Sequence, a: NodeId, b: NodeId, tdbu: bool) -> EdgeKind {
    let (da, db) = (seq.detection(a), seq.detection(b));
    if da.frame != db.frame {
        EdgeKind::Temporal
    } else if da.part == db.part {
        EdgeKind::SameType
    } else if tdbu {
        EdgeKind::RootAttachment
    } else {
        EdgeKind::CrossType
    }
}

/// The full-body problem of the configured variant, constrained by the head
/// tracks: each track is must-linked along its spanning tree and different
/// tracks are must-cut. Clusters without a head track are dropped; the others
/// become persons keyed by their head track's index.
pub fn track_full(
    seq: &Sequence,
    inputs: &TemporalInputs,
    attachments: &[ConditionalAttachment],
    heads: &HeadTracks,
    models: &CostModels,
    cfg: &SequenceConfig,
) -> Result<FullTracking> {
    cfg.validate()?;
    let n = seq.detections.len();
    let mut track_of = vec![None; n];
    for (k, nodes) in heads.tracks.iter().enumerate() {
        for &v in nodes {
            if v >= n {
                return Err(Error::structure(format!(
                    "head track {k} references node {v}"
                )));
            }
            if let Some(other) = track_of[v].replace(k) {
                return Err(Error::Infeasible {
                    reason: format!("node {v} is seeded by head tracks {other} and {k}"),
                    chain: vec![v],
                });
            }
        }
    }

    let opts = cfg.build_options(seq);
    let started = Instant::now();
    let base = match cfg.variant {
        ModelVariant::Tdbu => {
            let anchor = seq
                .parts
                .anchor()
                .ok_or_else(|| Error::config("the part vocabulary declares no root parts"))?;
            let candidates: BTreeSet<NodeId> = attachments.iter().map(|a| a.root).collect();
            let mut roots = Vec::new();
            for nodes in &heads.tracks {
                let mut best: BTreeMap<usize, NodeId> = BTreeMap::new();
                for &v in nodes {
                    let d = seq.detection(v);
                    if d.part != anchor || !candidates.contains(&v) {
                        continue;
                    }
                    let slot = best.entry(d.frame).or_insert(v);
                    if d.score > seq.detection(*slot).score {
                        *slot = v;
                    }
                }
                roots.extend(best.into_values());
            }
            roots.sort_unstable();
            let root_set: BTreeSet<NodeId> = roots.iter().copied().collect();
            let kept: Vec<ConditionalAttachment> = attachments
                .iter()
                .filter(|a| root_set.contains(&a.root) && !root_set.contains(&a.node))
                .copied()
                .collect();
            build_tdbu(seq, &roots, &kept, models, inputs, &opts, cfg.tdbu_unary)?
        }
        _ => build_bu(seq, models, &cfg.connectivity(seq)?, inputs, &opts)?,
    };

    let tdbu = cfg.variant == ModelVariant::Tdbu;
    let mut edges: Vec<Edge> = base.edges().to_vec();
    let mut must_link = Vec::new();
    for links in &heads.links {
        for &(a, b, _) in links {
            if base.edge_between(a, b).is_none() {
                edges.push(Edge::new(a, b, link_kind(seq, a, b, tdbu), 0.0));
            }
            must_link.push((a, b));
        }
    }
    let mut must_cut: Vec<(NodeId, NodeId)> = base.must_cut().iter().copied().collect();
    for i in 0..heads.tracks.len() {
        for j in i + 1..heads.tracks.len() {
            must_cut.push((heads.tracks[i][0], heads.tracks[j][0]));
        }
    }
    let graph = ProblemGraph::new(
        base.detections().to_vec(),
        base.node_costs().to_vec(),
        edges,
        must_link,
        must_cut,
    )?;
    let build = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let sol = solve(&graph, &cfg.solver)?;
    let solve_time = started.elapsed().as_secs_f64();

    let mut persons = BTreeMap::new();
    for cluster in sol.clusters() {
        let owners: BTreeSet<usize> = cluster.iter().filter_map(|&v| track_of[v]).collect();
        let Some(&owner) = owners.iter().next() else {
            continue;
        };
        if owners.len() > 1 {
            return Err(Error::Infeasible {
                reason: format!("head tracks {owners:?} ended up in one cluster"),
                chain: cluster,
            });
        }
        // head joints come from the seeding track only
        let body: Vec<NodeId> = cluster
            .iter()
            .copied()
            .filter(|&v| !seq.parts.is_root(seq.detection(v).part) || track_of[v] == Some(owner))
            .collect();
        persons.insert(owner, poses_of(seq, &body));
    }
    Ok(FullTracking {
        persons,
        objective: objective(&graph, &sol)?,
        nodes: graph.num_nodes(),
        edges: graph.edges().len(),
        timings: Timings {
            seed: 0.0,
            build,
            solve: solve_time,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutput {
    pub tracks: TrackSet,
    /// Sum of the window objectives.
    pub objective: f64,
    pub nodes: usize,
    pub edges: usize,
    pub windows: usize,
    pub timings: Timings,
}

/// Window `[start, end)` ranges covering `n` frames.
pub fn windows(n: usize, window: usize, overlap: usize) -> Vec<std::ops::Range<usize>> {
    if n <= window {
        return vec![0..n];
    }
    let step = window - overlap;
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + window).min(n);
        out.push(start..end);
        if end == n {
            return out;
        }
        start += step;
    }
}

/// Full tracking of one sequence: score filtering, then per window head-track
/// seeding and the constrained full-body problem. Windows are stitched by
/// the detections their persons share in the overlap.
pub fn track_sequence(
    seq: &Sequence,
    inputs: &TemporalInputs,
    attachments: &[ConditionalAttachment],
    models: &CostModels,
    cfg: &SequenceConfig,
) -> Result<TrackOutput> {
    cfg.validate()?;
    let threshold = cfg.score_threshold();
    let mut stitched: BTreeMap<usize, BTreeMap<usize, BTreeMap<PartId, NodeId>>> = BTreeMap::new();
    let mut out = TrackOutput {
        tracks: TrackSet::default(),
        objective: 0.0,
        nodes: 0,
        edges: 0,
        windows: 0,
        timings: Timings::default(),
    };
    let mut covered = 0;
    let mut next_id = 0;
    for range in windows(seq.num_frames, cfg.window, cfg.overlap) {
        let sub = restrict(
            seq,
            inputs,
            attachments,
            |d| d.score > threshold,
            range.clone(),
        )?;
        let started = Instant::now();
        let heads = seed_head_tracks(&sub.sequence, models, &sub.inputs, cfg)?;
        let seed_time = started.elapsed().as_secs_f64();
        let full = track_full(
            &sub.sequence,
            &sub.inputs,
            &sub.attachments,
            &heads,
            models,
            cfg,
        )?;
        out.objective += full.objective;
        out.nodes += full.nodes;
        out.edges += full.edges;
        out.windows += 1;
        out.timings.add(&Timings {
            seed: seed_time,
            ..full.timings
        });

        // back to original node ids and frames
        let local: BTreeMap<usize, BTreeMap<usize, BTreeMap<PartId, NodeId>>> = full
            .persons
            .into_iter()
            .map(|(p, frames)| {
                let frames = frames
                    .into_iter()
                    .map(|(t, pose)| {
                        (
                            t + sub.first_frame,
                            pose.into_iter()
                                .map(|(k, v)| (k, sub.original[v]))
                                .collect(),
                        )
                    })
                    .collect();
                (p, frames)
            })
            .collect();

        let mut mapping = BTreeMap::new();
        let mut used = BTreeSet::new();
        let mut scored = Vec::new();
        for (&p, frames) in &local {
            let mine: BTreeSet<NodeId> = frames
                .range(..covered)
                .flat_map(|(_, pose)| pose.values().copied())
                .collect();
            for (&g, gframes) in &stitched {
                let shared = gframes
                    .range(range.start..covered)
                    .flat_map(|(_, pose)| pose.values())
                    .filter(|v| mine.contains(v))
                    .count();
                if shared > 0 {
                    scored.push((shared, p, g));
                }
            }
        }
        scored.sort_by(|a, b| b.0.cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        for (_, p, g) in scored {
            if !mapping.contains_key(&p) && used.insert(g) {
                mapping.insert(p, g);
            }
        }
        for (p, frames) in local {
            let id = *mapping.entry(p).or_insert_with(|| {
                next_id += 1;
                next_id - 1
            });
            let slot = stitched.entry(id).or_default();
            for (t, pose) in frames.into_iter().filter(|(t, _)| *t >= covered) {
                slot.insert(t, pose);
            }
        }
        covered = range.end;
    }

    for (p, frames) in stitched {
        for (t, pose) in frames {
            for (part, v) in pose {
                let d = seq.detection(v);
                out.tracks.insert(
                    p,
                    t,
                    part,
                    Joint {
                        pos: d.pos,
                        score: d.score,
                    },
                )?;
            }
        }
    }
    Ok(out)
}

/// Synthetic scenes used to fit default cost models.
pub fn default_training_config(seed: u64) -> SynthConfig {
    SynthConfig {
        noise_sigma: 4.0,
        miss_rate: 0.1,
        clutter_rate: 0.1,
        seed,
        ..SynthConfig::default()
    }
}

/// Cost models fitted on a fixed suite of noisy synthetic scenes.
pub fn train_default_models(opts: &ModelTrainingOptions) -> Result<CostModels> {
    let scenes = (0..4)
        .map(|k| generate_scene(&default_training_config(9000 + k)))
        .collect::<Result<Vec<_>>>()?;
    let batch: Vec<_> = scenes
        .iter()
        .map(|s| (&s.sequence, s.labels.as_slice(), &s.inputs))
        .collect();
    train_cost_models(&batch, opts)
}
