//! Line-delimited JSON files. Each file starts with a header record naming
//! the format and its version; every following non-empty line is one record.
//! The field layout of every format is listed in `FORMATS.md`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::builder::{
    ConditionalAttachment, CostModels, CrossTypeModel, FeatureSchema, FeatureSet, LogisticModel,
    TemporalInputs,
};
use crate::error::{Error, Result};
use crate::eval::{GroundTruth, GtFrame, GtPerson, Rect};
use crate::model::{
    Detection, Edge, EdgeKind, NodeId, PartId, PartVocabulary, Point, ProblemGraph, Sequence,
    Solution,
};
use crate::pipeline::{Joint, TrackSet};
use crate::temporal::{CorrespondenceSet, DescriptorSet, Direction, RegionSpec};

pub const FORMAT_VERSION: u32 = 1;

pub const DETECTIONS: &str = "posetrack.detections";
pub const DESCRIPTORS: &str = "posetrack.descriptors";
pub const CORRESPONDENCES: &str = "posetrack.correspondences";
pub const ATTACHMENTS: &str = "posetrack.attachments";
pub const GROUND_TRUTH: &str = "posetrack.groundtruth";
pub const TRACKS: &str = "posetrack.tracks";
pub const GRAPH: &str = "posetrack.graph";
pub const SOLUTION: &str = "posetrack.solution";
pub const MODELS: &str = "posetrack.models";
pub const OVERLAY: &str = "posetrack.overlay";

// ---------------------------------------------------------------------------
// Reading and writing lines
// ---------------------------------------------------------------------------

fn push_line<T: Serialize>(out: &mut String, value: &T) {
    out.push_str(&serde_json::to_string(value).expect("records serialize"));
    out.push('\n');
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Numbered non-empty lines of a file being decoded.
struct Lines<'a> {
    path: &'a Path,
    lines: Vec<(usize, &'a str)>,
}

impl<'a> Lines<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        Lines { path, lines }
    }

    fn error(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    fn parse<T: DeserializeOwned>(&self, line: usize, text: &str) -> Result<T> {
        serde_json::from_str(text).map_err(|e| self.error(line, e.to_string()))
    }

    /// Parses the header, checking its format name and version, and returns
    /// it with the remaining record lines.
    fn header<H: DeserializeOwned>(&self, format: &str) -> Result<(H, &[(usize, &'a str)])> {
        let Some(&(line, text)) = self.lines.first() else {
            return Err(self.error(1, format!("missing `{format}` header")));
        };
        let tag: Tag = self.parse(line, text)?;
        if tag.format != format {
            return Err(self.error(
                line,
                format!("expected format `{format}`, found `{}`", tag.format),
            ));
        }
        if tag.version != FORMAT_VERSION {
            return Err(self.error(
                line,
                format!(
                    "unsupported version {} (this build reads {FORMAT_VERSION})",
                    tag.version
                ),
            ));
        }
        Ok((self.parse(line, text)?, &self.lines[1..]))
    }
}

#[derive(Deserialize)]
struct Tag {
    format: String,
    version: u32,
}

fn decode_all<H: DeserializeOwned, R: DeserializeOwned>(
    path: &Path,
    text: &str,
    format: &str,
) -> Result<(H, Vec<(usize, R)>)> {
    let lines = Lines::new(path, text);
    let (header, rest) = lines.header::<H>(format)?;
    let records = rest
        .iter()
        .map(|&(n, l)| lines.parse::<R>(n, l).map(|r| (n, r)))
        .collect::<Result<Vec<_>>>()?;
    Ok((header, records))
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Header with just the format tag.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlainHeader {
    format: String,
    version: u32,
}

impl PlainHeader {
    fn new(format: &str) -> Self {
        PlainHeader {
            format: format.into(),
            version: FORMAT_VERSION,
        }
    }
}

// ---------------------------------------------------------------------------
// Part vocabularies in headers
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartsHeader {
    format: String,
    version: u32,
    parts: Vec<String>,
    #[serde(default)]
    roots: Option<[String; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frames: Option<usize>,
}

impl PartsHeader {
    fn new(format: &str, vocab: &PartVocabulary, frames: Option<usize>) -> Self {
        PartsHeader {
            format: format.into(),
            version: FORMAT_VERSION,
            parts: vocab.parts().iter().map(|p| p.name.clone()).collect(),
            roots: vocab
                .roots()
                .map(|[a, b]| [vocab.name(a).to_string(), vocab.name(b).to_string()]),
            frames,
        }
    }

    fn vocabulary(&self, path: &Path) -> Result<PartVocabulary> {
        let roots = self.roots.as_ref().map(|[a, b]| [a.as_str(), b.as_str()]);
        PartVocabulary::new(&self.parts, roots).map_err(|e| parse_error(path, 1, e.to_string()))
    }
}

fn part_id(vocab: &PartVocabulary, name: &str, path: &Path, line: usize) -> Result<PartId> {
    vocab
        .id_of(name)
        .ok_or_else(|| parse_error(path, line, format!("unknown part `{name}`")))
}

// ---------------------------------------------------------------------------
// Detections
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionRecord {
    frame: usize,
    part: String,
    x: f64,
    y: f64,
    score: f64,
}

pub fn encode_detections(seq: &Sequence) -> String {
    let mut out = String::new();
    push_line(
        &mut out,
        &PartsHeader::new(DETECTIONS, &seq.parts, Some(seq.num_frames)),
    );
    for d in &seq.detections {
        push_line(
            &mut out,
            &DetectionRecord {
                frame: d.frame,
                part: seq.parts.name(d.part).to_string(),
                x: d.pos.x,
                y: d.pos.y,
                score: d.score,
            },
        );
    }
    out
}

/// Node ids follow file order. Without a `frames` field in the header the
/// sequence ends at the last frame that has a detection.
pub fn decode_detections(path: &Path, text: &str) -> Result<Sequence> {
    let (header, records) = decode_all::<PartsHeader, DetectionRecord>(path, text, DETECTIONS)?;
    let vocab = header.vocabulary(path)?;
    let mut dets = Vec::with_capacity(records.len());
    for (line, r) in records {
        let part = part_id(&vocab, &r.part, path, line)?;
        if !(r.score > 0.0 && r.score < 1.0) {
            return Err(parse_error(
                path,
                line,
                format!("score {} outside (0, 1)", r.score),
            ));
        }
        if !r.x.is_finite() || !r.y.is_finite() {
            return Err(parse_error(path, line, "non-finite position"));
        }
        if let Some(n) = header.frames.filter(|&n| r.frame >= n) {
            return Err(parse_error(
                path,
                line,
                format!("frame {} of a {n}-frame sequence", r.frame),
            ));
        }
        dets.push(Detection {
            node_id: dets.len(),
            frame: r.frame,
            pos: Point::new(r.x, r.y),
            score: r.score,
            part,
        });
    }
    let frames = header
        .frames
        .unwrap_or_else(|| dets.iter().map(|d| d.frame + 1).max().unwrap_or(0));
    Sequence::new(vocab, dets, frames).map_err(|e| parse_error(path, 1, e.to_string()))
}

// ---------------------------------------------------------------------------
// Descriptors and correspondences
// ---------------------------------------------------------------------------

pub fn encode_descriptors(descriptors: &BTreeMap<NodeId, DescriptorSet>) -> String {
    let mut out = String::new();
    push_line(&mut out, &PlainHeader::new(DESCRIPTORS));
    for d in descriptors.values() {
        push_line(&mut out, d);
    }
    out
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DescriptorRecord {
    node: NodeId,
    vectors: Vec<Vec<f64>>,
}

pub fn decode_descriptors(path: &Path, text: &str) -> Result<BTreeMap<NodeId, DescriptorSet>> {
    let (_, records) = decode_all::<PlainHeader, DescriptorRecord>(path, text, DESCRIPTORS)?;
    let mut out = BTreeMap::new();
    for (line, r) in records {
        let set = DescriptorSet::new(r.node, r.vectors)
            .map_err(|e| parse_error(path, line, e.to_string()))?;
        if out.insert(r.node, set).is_some() {
            return Err(parse_error(
                path,
                line,
                format!("second descriptor record for node {}", r.node),
            ));
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorrespondenceRecord {
    frame: usize,
    direction: Direction,
    /// `[x1, y1, x2, y2]` per pair.
    pairs: Vec<[f64; 4]>,
}

pub fn encode_correspondences(inputs: &TemporalInputs) -> String {
    let mut out = String::new();
    push_line(&mut out, &PlainHeader::new(CORRESPONDENCES));
    let mut sets: Vec<&CorrespondenceSet> = inputs
        .forward
        .values()
        .chain(inputs.reverse.values())
        .collect();
    sets.sort_by_key(|s| (s.frame, s.direction == Direction::Reverse));
    for s in sets {
        push_line(
            &mut out,
            &CorrespondenceRecord {
                frame: s.frame,
                direction: s.direction,
                pairs: s.pairs.iter().map(|(a, b)| [a.x, a.y, b.x, b.y]).collect(),
            },
        );
    }
    out
}

/// Adds the correspondence sets of a file to `inputs`.
pub fn decode_correspondences(path: &Path, text: &str, inputs: &mut TemporalInputs) -> Result<()> {
    let (_, records) =
        decode_all::<PlainHeader, CorrespondenceRecord>(path, text, CORRESPONDENCES)?;
    let mut seen = BTreeSet::new();
    for (line, r) in records {
        if !seen.insert((r.frame, r.direction == Direction::Reverse)) {
            return Err(parse_error(
                path,
                line,
                format!("second {:?} record for frame {}", r.direction, r.frame),
            ));
        }
        if r.pairs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(parse_error(path, line, "non-finite coordinate"));
        }
        inputs.insert_correspondences(CorrespondenceSet {
            frame: r.frame,
            direction: r.direction,
            pairs: r
                .pairs
                .iter()
                .map(|p| (Point::new(p[0], p[1]), Point::new(p[2], p[3])))
                .collect(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Attachments
// ---------------------------------------------------------------------------

pub fn encode_attachments(attachments: &[ConditionalAttachment]) -> String {
    let mut out = String::new();
    push_line(&mut out, &PlainHeader::new(ATTACHMENTS));
    for a in attachments {
        push_line(&mut out, a);
    }
    out
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AttachmentRecord {
    root: NodeId,
    node: NodeId,
    p: f64,
}

pub fn decode_attachments(path: &Path, text: &str) -> Result<Vec<ConditionalAttachment>> {
    let (_, records) = decode_all::<PlainHeader, AttachmentRecord>(path, text, ATTACHMENTS)?;
    records
        .into_iter()
        .map(|(line, r)| {
            if !(r.p > 0.0 && r.p < 1.0) {
                return Err(parse_error(
                    path,
                    line,
                    format!("probability {} outside (0, 1)", r.p),
                ));
            }
            Ok(ConditionalAttachment {
                root: r.root,
                node: r.node,
                p: r.p,
            })
        })
        .collect()
}

/// Checks that side files only reference detections that exist, and that
/// attachments start at root detections in the proposal's frame.
pub fn check_sidecars(
    seq: &Sequence,
    inputs: &TemporalInputs,
    attachments: &[ConditionalAttachment],
) -> Result<()> {
    let n = seq.detections.len();
    if let Some(v) = inputs.descriptors.keys().find(|&&v| v >= n) {
        return Err(Error::structure(format!(
            "descriptors reference missing node {v}"
        )));
    }
    for a in attachments {
        if a.root >= n || a.node >= n {
            return Err(Error::structure(format!(
                "attachment ({}, {}) references a missing node",
                a.root, a.node
            )));
        }
        let (r, d) = (seq.detection(a.root), seq.detection(a.node));
        if !seq.parts.is_root(r.part) {
            return Err(Error::structure(format!(
                "attachment root {} is not a root part",
                a.root
            )));
        }
        if r.frame != d.frame {
            return Err(Error::structure(format!(
                "attachment ({}, {}) crosses frames",
                a.root, a.node
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Ground truth
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum GtRecord {
    Person {
        frame: usize,
        person: usize,
        head_size: f64,
        joints: BTreeMap<String, [f64; 2]>,
    },
    Ignore {
        frame: usize,
        rect: [f64; 4],
    },
}

pub fn encode_ground_truth(gt: &GroundTruth, vocab: &PartVocabulary) -> String {
    let mut out = String::new();
    push_line(
        &mut out,
        &PartsHeader::new(GROUND_TRUTH, vocab, Some(gt.frames.len())),
    );
    for (t, f) in gt.frames.iter().enumerate() {
        for p in &f.persons {
            push_line(
                &mut out,
                &GtRecord::Person {
                    frame: t,
                    person: p.id,
                    head_size: p.head_size,
                    joints: p
                        .joints
                        .iter()
                        .map(|(&k, j)| (vocab.name(k).to_string(), [j.x, j.y]))
                        .collect(),
                },
            );
        }
        for r in &f.ignore {
            push_line(
                &mut out,
                &GtRecord::Ignore {
                    frame: t,
                    rect: [r.x0, r.y0, r.x1, r.y1],
                },
            );
        }
    }
    out
}

pub fn decode_ground_truth(path: &Path, text: &str) -> Result<(GroundTruth, PartVocabulary)> {
    let (header, records) = decode_all::<PartsHeader, GtRecord>(path, text, GROUND_TRUTH)?;
    let vocab = header.vocabulary(path)?;
    let mut frames: Vec<GtFrame> = vec![GtFrame::default(); header.frames.unwrap_or(0)];
    for (line, r) in records {
        let frame = match &r {
            GtRecord::Person { frame, .. } | GtRecord::Ignore { frame, .. } => *frame,
        };
        if let Some(n) = header.frames.filter(|&n| frame >= n) {
            return Err(parse_error(
                path,
                line,
                format!("frame {frame} of a {n}-frame annotation"),
            ));
        }
        if frames.len() <= frame {
            frames.resize(frame + 1, GtFrame::default());
        }
        match r {
            GtRecord::Person {
                person,
                head_size,
                joints,
                ..
            } => {
                let mut map = BTreeMap::new();
                for (name, [x, y]) in joints {
                    map.insert(part_id(&vocab, &name, path, line)?, Point::new(x, y));
                }
                frames[frame].persons.push(GtPerson {
                    id: person,
                    head_size,
                    joints: map,
                });
            }
            GtRecord::Ignore { rect, .. } => frames[frame].ignore.push(Rect {
                x0: rect[0],
                y0: rect[1],
                x1: rect[2],
                y1: rect[3],
            }),
        }
    }
    let gt = GroundTruth::new(frames).map_err(|e| parse_error(path, 1, e.to_string()))?;
    Ok((gt, vocab))
}

// ---------------------------------------------------------------------------
// Tracks
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackRecord {
    person: usize,
    frame: usize,
    part: String,
    x: f64,
    y: f64,
    score: f64,
}

pub fn encode_tracks(tracks: &TrackSet, vocab: &PartVocabulary) -> String {
    let mut out = String::new();
    push_line(&mut out, &PartsHeader::new(TRACKS, vocab, None));
    for (&person, frames) in tracks.tracks() {
        for (&frame, pose) in frames {
            for (&part, j) in pose {
                push_line(
                    &mut out,
                    &TrackRecord {
                        person,
                        frame,
                        part: vocab.name(part).to_string(),
                        x: j.pos.x,
                        y: j.pos.y,
                        score: j.score,
                    },
                );
            }
        }
    }
    out
}

pub fn decode_tracks(path: &Path, text: &str) -> Result<(TrackSet, PartVocabulary)> {
    let (header, records) = decode_all::<PartsHeader, TrackRecord>(path, text, TRACKS)?;
    let vocab = header.vocabulary(path)?;
    let mut out = TrackSet::default();
    for (line, r) in records {
        let part = part_id(&vocab, &r.part, path, line)?;
        out.insert(
            r.person,
            r.frame,
            part,
            Joint {
                pos: Point::new(r.x, r.y),
                score: r.score,
            },
        )
        .map_err(|e| parse_error(path, line, e.to_string()))?;
    }
    Ok((out, vocab))
}

// ---------------------------------------------------------------------------
// Problem graphs and solutions
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphHeader {
    format: String,
    version: u32,
    nodes: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum GraphRecord {
    Node {
        id: NodeId,
        frame: usize,
        part: PartId,
        x: f64,
        y: f64,
        score: f64,
        cost: f64,
    },
    Edge {
        u: NodeId,
        v: NodeId,
        #[serde(rename = "type")]
        kind: EdgeKind,
        cost: f64,
    },
    MustLink {
        u: NodeId,
        v: NodeId,
    },
    MustCut {
        u: NodeId,
        v: NodeId,
    },
}

pub fn encode_graph(g: &ProblemGraph) -> String {
    let mut out = String::new();
    push_line(
        &mut out,
        &GraphHeader {
            format: GRAPH.into(),
            version: FORMAT_VERSION,
            nodes: g.num_nodes(),
        },
    );
    for d in g.detections() {
        push_line(
            &mut out,
            &GraphRecord::Node {
                id: d.node_id,
                frame: d.frame,
                part: d.part,
                x: d.pos.x,
                y: d.pos.y,
                score: d.score,
                cost: g.node_cost(d.node_id),
            },
        );
    }
    for e in g.edges() {
        push_line(
            &mut out,
            &GraphRecord::Edge {
                u: e.u,
                v: e.v,
                kind: e.kind,
                cost: e.cost,
            },
        );
    }
    for &(u, v) in g.must_link() {
        push_line(&mut out, &GraphRecord::MustLink { u, v });
    }
    for &(u, v) in g.must_cut() {
        push_line(&mut out, &GraphRecord::MustCut { u, v });
    }
    out
}

/// Node records must come first, in id order.
pub fn decode_graph(path: &Path, text: &str) -> Result<ProblemGraph> {
    let (header, records) = decode_all::<GraphHeader, GraphRecord>(path, text, GRAPH)?;
    let mut dets = Vec::with_capacity(header.nodes);
    let mut costs = Vec::with_capacity(header.nodes);
    let mut edges = Vec::new();
    let mut must_link = Vec::new();
    let mut must_cut = Vec::new();
    for (line, r) in records {
        match r {
            GraphRecord::Node {
                id,
                frame,
                part,
                x,
                y,
                score,
                cost,
            } => {
                if id != dets.len()
                    || !edges.is_empty()
                    || !must_link.is_empty()
                    || !must_cut.is_empty()
                {
                    return Err(parse_error(path, line, format!("node {id} out of order")));
                }
                dets.push(Detection {
                    node_id: id,
                    frame,
                    pos: Point::new(x, y),
                    score,
                    part,
                });
                costs.push(cost);
            }
            GraphRecord::Edge { u, v, kind, cost } => {
                if u >= v {
                    return Err(parse_error(
                        path,
                        line,
                        format!("edge ({u}, {v}) must have u < v"),
                    ));
                }
                edges.push(Edge::new(u, v, kind, cost));
            }
            GraphRecord::MustLink { u, v } => must_link.push((u, v)),
            GraphRecord::MustCut { u, v } => must_cut.push((u, v)),
        }
    }
    if dets.len() != header.nodes {
        return Err(parse_error(
            path,
            1,
            format!(
                "header declares {} nodes, file has {}",
                header.nodes,
                dets.len()
            ),
        ));
    }
    ProblemGraph::new(dets, costs, edges, must_link, must_cut).map_err(|e| match e {
        Error::Infeasible { .. } => e,
        other => parse_error(path, 1, other.to_string()),
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolutionRecord {
    node: NodeId,
    cluster: usize,
}

pub fn encode_solution(sol: &Solution) -> String {
    let mut out = String::new();
    push_line(&mut out, &PlainHeader::new(SOLUTION));
    for (&node, &cluster) in sol.assignment() {
        push_line(&mut out, &SolutionRecord { node, cluster });
    }
    out
}

pub fn decode_solution(path: &Path, text: &str) -> Result<Solution> {
    let (_, records) = decode_all::<PlainHeader, SolutionRecord>(path, text, SOLUTION)?;
    let mut map = BTreeMap::new();
    for (line, r) in records {
        if map.insert(r.node, r.cluster).is_some() {
            return Err(parse_error(
                path,
                line,
                format!("node {} assigned twice", r.node),
            ));
        }
    }
    Ok(Solution::from_assignment(map))
}

// ---------------------------------------------------------------------------
// Cost models
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelsHeader {
    format: String,
    version: u32,
    parts: Vec<String>,
    #[serde(default)]
    roots: Option<[String; 2]>,
    region_side: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ModelRecord {
    SameType {
        weights: Vec<f64>,
        #[serde(default)]
        medians: Vec<f64>,
    },
    Temporal {
        features: Vec<String>,
        weights: Vec<f64>,
        #[serde(default)]
        medians: Vec<f64>,
    },
    CrossType {
        first: String,
        second: String,
        offset: [f64; 2],
        back_offset: [f64; 2],
        weights: Vec<f64>,
        #[serde(default)]
        medians: Vec<f64>,
    },
}

fn feature_names(f: FeatureSet) -> Vec<String> {
    f.label().split(',').map(str::to_string).collect()
}

pub fn encode_models(models: &CostModels, vocab: &PartVocabulary) -> String {
    let mut out = String::new();
    let vh = PartsHeader::new(MODELS, vocab, None);
    push_line(
        &mut out,
        &ModelsHeader {
            format: vh.format,
            version: vh.version,
            parts: vh.parts,
            roots: vh.roots,
            region_side: models.region.side,
        },
    );
    push_line(
        &mut out,
        &ModelRecord::SameType {
            weights: models.same_type.weights.clone(),
            medians: models.same_type.medians.clone(),
        },
    );
    let features = models.temporal_features().unwrap_or(FeatureSet::ALL);
    push_line(
        &mut out,
        &ModelRecord::Temporal {
            features: feature_names(features),
            weights: models.temporal.weights.clone(),
            medians: models.temporal.medians.clone(),
        },
    );
    for m in models.cross_type.values() {
        push_line(
            &mut out,
            &ModelRecord::CrossType {
                first: vocab.name(m.first).to_string(),
                second: vocab.name(m.second).to_string(),
                offset: [m.offset.x, m.offset.y],
                back_offset: [m.back_offset.x, m.back_offset.y],
                weights: m.logistic.weights.clone(),
                medians: m.logistic.medians.clone(),
            },
        );
    }
    out
}

fn logistic(
    schema: FeatureSchema,
    weights: Vec<f64>,
    medians: Vec<f64>,
    path: &Path,
    line: usize,
) -> Result<LogisticModel> {
    let mut m =
        LogisticModel::new(schema, weights).map_err(|e| parse_error(path, line, e.to_string()))?;
    if !medians.is_empty() && medians.len() != schema.dim() {
        return Err(parse_error(
            path,
            line,
            format!("{} medians for {} features", medians.len(), schema.dim()),
        ));
    }
    if m.weights.iter().chain(&medians).any(|w| !w.is_finite()) {
        return Err(parse_error(path, line, "non-finite weight"));
    }
    m.medians = medians;
    Ok(m)
}

pub fn decode_models(path: &Path, text: &str) -> Result<(CostModels, PartVocabulary)> {
    let (header, records) = decode_all::<ModelsHeader, ModelRecord>(path, text, MODELS)?;
    let vocab = PartsHeader {
        format: header.format,
        version: header.version,
        parts: header.parts,
        roots: header.roots,
        frames: None,
    }
    .vocabulary(path)?;
    let region =
        RegionSpec::new(header.region_side).map_err(|e| parse_error(path, 1, e.to_string()))?;
    let mut same_type = None;
    let mut temporal = None;
    let mut cross_type = BTreeMap::new();
    for (line, r) in records {
        match r {
            ModelRecord::SameType { weights, medians } => {
                let m = logistic(FeatureSchema::SameType, weights, medians, path, line)?;
                if same_type.replace(m).is_some() {
                    return Err(parse_error(path, line, "second same_type record"));
                }
            }
            ModelRecord::Temporal {
                features,
                weights,
                medians,
            } => {
                let set = FeatureSet::parse(&features.join(","))
                    .map_err(|e| parse_error(path, line, e.to_string()))?;
                let m = logistic(
                    FeatureSchema::Temporal { features: set },
                    weights,
                    medians,
                    path,
                    line,
                )?;
                if temporal.replace(m).is_some() {
                    return Err(parse_error(path, line, "second temporal record"));
                }
            }
            ModelRecord::CrossType {
                first,
                second,
                offset,
                back_offset,
                weights,
                medians,
            } => {
                let a = part_id(&vocab, &first, path, line)?;
                let b = part_id(&vocab, &second, path, line)?;
                if a >= b {
                    return Err(parse_error(
                        path,
                        line,
                        format!("cross_type pair ({first}, {second}) must follow vocabulary order"),
                    ));
                }
                let logistic = logistic(FeatureSchema::CrossType, weights, medians, path, line)?;
                let m = CrossTypeModel {
                    first: a,
                    second: b,
                    offset: Point::new(offset[0], offset[1]),
                    back_offset: Point::new(back_offset[0], back_offset[1]),
                    logistic,
                };
                if cross_type.insert((a, b), m).is_some() {
                    return Err(parse_error(
                        path,
                        line,
                        format!("second model for ({first}, {second})"),
                    ));
                }
            }
        }
    }
    let same_type = same_type.ok_or_else(|| parse_error(path, 1, "missing same_type record"))?;
    let temporal = temporal.ok_or_else(|| parse_error(path, 1, "missing temporal record"))?;
    Ok((
        CostModels {
            same_type,
            temporal,
            cross_type,
            region,
        },
        vocab,
    ))
}

// ---------------------------------------------------------------------------
// Overlay geometry
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct OverlayRecord<'a> {
    frame: usize,
    person: usize,
    joints: BTreeMap<&'a str, [f64; 3]>,
    /// `[x1, y1, x2, y2]` per drawn bone.
    bones: Vec<[f64; 4]>,
}

/// Per-frame, per-person joint positions and the bones between joint pairs
/// of `bones` that are both present.
pub fn encode_overlay(
    tracks: &TrackSet,
    vocab: &PartVocabulary,
    bones: &[(PartId, PartId)],
) -> String {
    let mut out = String::new();
    push_line(&mut out, &PartsHeader::new(OVERLAY, vocab, None));
    for (frame, persons) in tracks.by_frame() {
        for (person, pose) in persons {
            push_line(
                &mut out,
                &OverlayRecord {
                    frame,
                    person,
                    joints: pose
                        .iter()
                        .map(|(&k, j)| (vocab.name(k), [j.pos.x, j.pos.y, j.score]))
                        .collect(),
                    bones: bones
                        .iter()
                        .filter_map(|(a, b)| {
                            let (ja, jb) = (pose.get(a)?, pose.get(b)?);
                            Some([ja.pos.x, ja.pos.y, jb.pos.x, jb.pos.y])
                        })
                        .collect(),
                },
            );
        }
    }
    out
}

// ---------------------------------------------------------------------------
// File helpers
// ---------------------------------------------------------------------------

macro_rules! file_pair {
    ($read:ident, $decode:ident, $out:ty) => {
        pub fn $read(path: &Path) -> Result<$out> {
            $decode(path, &read_text(path)?)
        }
    };
}

file_pair!(read_detections, decode_detections, Sequence);
file_pair!(read_descriptors, decode_descriptors, BTreeMap<NodeId, DescriptorSet>);
file_pair!(
    read_attachments,
    decode_attachments,
    Vec<ConditionalAttachment>
);
file_pair!(
    read_ground_truth,
    decode_ground_truth,
    (GroundTruth, PartVocabulary)
);
file_pair!(read_tracks, decode_tracks, (TrackSet, PartVocabulary));
file_pair!(read_graph, decode_graph, ProblemGraph);
file_pair!(read_solution, decode_solution, Solution);
file_pair!(read_models, decode_models, (CostModels, PartVocabulary));

pub fn read_correspondences(path: &Path, inputs: &mut TemporalInputs) -> Result<()> {
    decode_correspondences(path, &read_text(path)?, inputs)
}

/// Paths of the files describing one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePaths {
    pub detections: PathBuf,
    pub descriptors: PathBuf,
    pub correspondences: PathBuf,
    pub attachments: PathBuf,
    pub ground_truth: PathBuf,
}

impl ScenePaths {
    /// Conventional file names inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        ScenePaths {
            detections: dir.join("detections.jsonl"),
            descriptors: dir.join("descriptors.jsonl"),
            correspondences: dir.join("correspondences.jsonl"),
            attachments: dir.join("attachments.jsonl"),
            ground_truth: dir.join("groundtruth.jsonl"),
        }
    }
}
