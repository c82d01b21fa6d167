//! Construction of problem graphs for the bottom-up (full and sparse) and
//! top-down/bottom-up models, and the logistic models that price their edges.
//!
//! Every edge cost is the (sign-adjusted) log-odds of a logistic probability,
//! so for an edge with probability `p` the cost is `-log(p / (1 - p))` under
//! the default sign convention.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    log_odds, node_cost_with, ordered, CostSign, Detection, Edge, EdgeKind, NodeId, PartId,
    PartVocabulary, Point, ProblemGraph, Sequence,
};
use crate::temporal::{
    assemble_g, CorrespondenceSet, DescriptorSet, Direction, RegionSpec, TemporalEvidence,
};

/// Which temporal features feed the temporal model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSet {
    pub l2: bool,
    pub sift: bool,
    /// Both the forward and the reverse correspondence ratio.
    pub dm: bool,
}

impl FeatureSet {
    pub const ALL: FeatureSet = FeatureSet {
        l2: true,
        sift: true,
        dm: true,
    };

    /// Parses a comma-separated subset of `l2`, `sift`, `dm`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut set = FeatureSet {
            l2: false,
            sift: false,
            dm: false,
        };
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match tok {
                "l2" => set.l2 = true,
                "sift" => set.sift = true,
                "dm" => set.dm = true,
                other => return Err(Error::config(format!("unknown temporal feature `{other}`"))),
            }
        }
        if set.indices().is_empty() {
            return Err(Error::config("empty temporal feature set"));
        }
        Ok(set)
    }

    /// Positions in the full `(l2, sift, dm, dm_rev)` vector.
    pub fn indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        if self.l2 {
            out.push(0);
        }
        if self.sift {
            out.push(1);
        }
        if self.dm {
            out.extend([2, 3]);
        }
        out
    }

    pub fn label(&self) -> String {
        let mut names = Vec::new();
        if self.l2 {
            names.push("l2");
        }
        if self.sift {
            names.push("sift");
        }
        if self.dm {
            names.push("dm");
        }
        names.join(",")
    }
}

impl Default for FeatureSet {
    fn default() -> Self {
        FeatureSet::ALL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "schema", rename_all = "snake_case")]
pub enum FeatureSchema {
    /// `[distance]`
    SameType,
    /// `[fwd_offset, fwd_angle, bwd_offset, bwd_angle]`
    CrossType,
    Temporal {
        features: FeatureSet,
    },
    /// Unnamed features, for experiments.
    Generic {
        dim: usize,
    },
}

impl FeatureSchema {
    pub fn dim(&self) -> usize {
        match self {
            FeatureSchema::SameType => 1,
            FeatureSchema::CrossType => 4,
            FeatureSchema::Temporal { features } => features.indices().len(),
            FeatureSchema::Generic { dim } => *dim,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            FeatureSchema::SameType => "same_type".into(),
            FeatureSchema::CrossType => "cross_type".into(),
            FeatureSchema::Temporal { features } => format!("temporal[{}]", features.label()),
            FeatureSchema::Generic { dim } => format!("generic[{dim}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeFeatureVector {
    pub schema: FeatureSchema,
    pub values: Vec<f64>,
}

impl EdgeFeatureVector {
    pub fn new(schema: FeatureSchema, values: Vec<f64>) -> Result<Self> {
        if values.len() != schema.dim() {
            return Err(Error::Schema {
                expected: format!("{} ({} features)", schema.describe(), schema.dim()),
                got: format!("{} features", values.len()),
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::structure(format!("non-finite feature value {v}")));
        }
        Ok(EdgeFeatureVector { schema, values })
    }

    /// Restricts a full temporal vector to the given feature subset.
    pub fn select(&self, features: FeatureSet) -> Result<Self> {
        if self.schema
            != (FeatureSchema::Temporal {
                features: FeatureSet::ALL,
            })
        {
            return Err(Error::Schema {
                expected: "temporal[l2,sift,dm]".into(),
                got: self.schema.describe(),
            });
        }
        EdgeFeatureVector::new(
            FeatureSchema::Temporal { features },
            features.indices().iter().map(|&i| self.values[i]).collect(),
        )
    }
}

/// Logistic model `p = 1 / (1 + exp(-(w . f + b)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub schema: FeatureSchema,
    /// Feature weights followed by the bias.
    pub weights: Vec<f64>,
    /// Per-feature medians of the training sample, used to impute missing
    /// inputs. Empty when unknown.
    #[serde(default)]
    pub medians: Vec<f64>,
}

impl LogisticModel {
    pub fn new(schema: FeatureSchema, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != schema.dim() + 1 {
            return Err(Error::Schema {
                expected: format!("{} weights for {}", schema.dim() + 1, schema.describe()),
                got: format!("{} weights", weights.len()),
            });
        }
        Ok(LogisticModel {
            schema,
            weights,
            medians: Vec::new(),
        })
    }

    /// Same-type model that is attractive below `crossover` pixels and
    /// repulsive above it.
    pub fn same_type_default(crossover: f64, slope: f64) -> Self {
        LogisticModel::new(FeatureSchema::SameType, vec![-slope, slope * crossover])
            .expect("two weights for one feature")
    }

    pub fn logit(&self, f: &EdgeFeatureVector) -> Result<f64> {
        if f.schema != self.schema {
            return Err(Error::Schema {
                expected: self.schema.describe(),
                got: f.schema.describe(),
            });
        }
        let d = self.schema.dim();
        Ok(linear(&self.weights[..d], self.weights[d], &f.values))
    }

    pub fn probability(&self, f: &EdgeFeatureVector) -> Result<f64> {
        self.logit(f).map(sigmoid)
    }

    /// Edge cost; equal to `edge_cost_from_probability(probability(f))` but
    /// computed from the logit so extreme probabilities stay finite.
    pub fn cost(&self, f: &EdgeFeatureVector, sign: CostSign) -> Result<f64> {
        self.logit(f).map(|z| sign.apply(z))
    }

    /// Medians padded to a full temporal vector.
    fn temporal_medians(&self) -> [f64; 4] {
        let mut out = [0.0; 4];
        if let FeatureSchema::Temporal { features } = self.schema {
            for (k, &i) in features.indices().iter().enumerate() {
                out[i] = self.medians.get(k).copied().unwrap_or(0.0);
            }
        }
        out
    }
}

fn linear(w: &[f64], bias: f64, x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Edge cost of a link with probability `p`: `-log(p / (1 - p))`.
pub fn edge_cost_from_probability(p: f64) -> Result<f64> {
    edge_cost_with(p, CostSign::Negated)
}

pub fn edge_cost_with(p: f64, sign: CostSign) -> Result<f64> {
    Ok(sign.apply(log_odds(p)?))
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub l2: f64,
    pub steps: usize,
    pub lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            l2: 1e-3,
            steps: 500,
            lr: 0.5,
        }
    }
}

/// Mean cross-entropy plus `l2 / 2 * |w|^2` (bias excluded) and its gradient.
/// `weights` holds the feature weights followed by the bias.
pub fn loss_and_gradient(
    weights: &[f64],
    rows: &[Vec<f64>],
    labels: &[bool],
    l2: f64,
) -> (f64, Vec<f64>) {
    let d = weights.len() - 1;
    let n = rows.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; d + 1];
    for (x, &y) in rows.iter().zip(labels) {
        let z = linear(&weights[..d], weights[d], x);
        let y = if y { 1.0 } else { 0.0 };
        loss += softplus(z) - y * z;
        let r = sigmoid(z) - y;
        for j in 0..d {
            grad[j] += r * x[j];
        }
        grad[d] += r;
    }
    loss /= n;
    for g in &mut grad {
        *g /= n;
    }
    for j in 0..d {
        loss += 0.5 * l2 * weights[j] * weights[j];
        grad[j] += l2 * weights[j];
    }
    (loss, grad)
}

/// Fits a logistic model by full-batch gradient descent on standardized
/// features. The step size is halved whenever a step would raise the loss, so
/// the recorded loss never increases. Weights are mapped back to raw feature
/// units before returning.
pub fn train_logistic(
    samples: &[EdgeFeatureVector],
    labels: &[bool],
    l2: f64,
    steps: usize,
    lr: f64,
) -> Result<LogisticModel> {
    train_logistic_with_history(samples, labels, &TrainConfig { l2, steps, lr }).map(|(m, _)| m)
}

pub fn train_logistic_with_history(
    samples: &[EdgeFeatureVector],
    labels: &[bool],
    cfg: &TrainConfig,
) -> Result<(LogisticModel, Vec<f64>)> {
    let Some(first) = samples.first() else {
        return Err(Error::config("no training samples"));
    };
    if samples.len() != labels.len() {
        return Err(Error::config(format!(
            "{} samples but {} labels",
            samples.len(),
            labels.len()
        )));
    }
    let schema = first.schema;
    if let Some(bad) = samples.iter().find(|s| s.schema != schema) {
        return Err(Error::Schema {
            expected: schema.describe(),
            got: bad.schema.describe(),
        });
    }
    if !(cfg.lr > 0.0) || !(cfg.l2 >= 0.0) {
        return Err(Error::config(
            "learning rate must be positive and l2 non-negative",
        ));
    }
    let d = schema.dim();
    let n = samples.len() as f64;

    let mut mean = vec![0.0; d];
    for s in samples {
        for j in 0..d {
            mean[j] += s.values[j] / n;
        }
    }
    let mut scale = vec![0.0; d];
    for s in samples {
        for j in 0..d {
            scale[j] += (s.values[j] - mean[j]).powi(2) / n;
        }
    }
    for s in &mut scale {
        *s = s.sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    let rows: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| (0..d).map(|j| (s.values[j] - mean[j]) / scale[j]).collect())
        .collect();

    let mut w = vec![0.0; d + 1];
    let (mut loss, mut grad) = loss_and_gradient(&w, &rows, labels, cfg.l2);
    let mut history = vec![loss];
    let mut lr = cfg.lr;
    for _ in 0..cfg.steps {
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = w.iter().zip(&grad).map(|(a, g)| a - lr * g).collect();
            let (cl, cg) = loss_and_gradient(&cand, &rows, labels, cfg.l2);
            if cl <= loss {
                w = cand;
                loss = cl;
                grad = cg;
                accepted = true;
                break;
            }
            lr *= 0.5;
        }
        history.push(loss);
        if !accepted {
            break;
        }
    }

    // z = sum_j w_j (x_j - m_j) / s_j + b
    let mut raw = vec![0.0; d + 1];
    raw[d] = w[d];
    for j in 0..d {
        raw[j] = w[j] / scale[j];
        raw[d] -= w[j] * mean[j] / scale[j];
    }
    let medians = (0..d)
        .map(|j| median(samples.iter().map(|s| s.values[j]).collect()))
        .collect();
    let mut model = LogisticModel::new(schema, raw)?;
    model.medians = medians;
    Ok((model, history))
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

// ---------------------------------------------------------------------------
// Edge costs
// ---------------------------------------------------------------------------

pub fn same_type_cost(distance: f64, model: &LogisticModel, sign: CostSign) -> Result<f64> {
    if !(distance >= 0.0) {
        return Err(Error::Domain {
            what: "distance",
            value: distance,
            domain: "[0, inf)",
        });
    }
    model.cost(
        &EdgeFeatureVector::new(FeatureSchema::SameType, vec![distance])?,
        sign,
    )
}

pub fn cross_type_cost(
    features: &EdgeFeatureVector,
    model: &LogisticModel,
    sign: CostSign,
) -> Result<f64> {
    model.cost(features, sign)
}

/// Pairwise model for one unordered pair of part types `(first, second)`.
///
/// `offset` is the expected displacement from a `first` part to its `second`
/// partner of the same person; `back_offset` the displacement the other way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTypeModel {
    pub first: PartId,
    pub second: PartId,
    pub offset: Point,
    pub back_offset: Point,
    pub logistic: LogisticModel,
}

fn angle_between(a: &Point, b: &Point) -> f64 {
    if a.norm() == 0.0 || b.norm() == 0.0 {
        return 0.0;
    }
    let cross = a.x * b.y - a.y * b.x;
    let dot = a.x * b.x + a.y * b.y;
    cross.abs().atan2(dot)
}

/// Offset magnitude and angle between predicted and actual partner location,
/// in both directions.
pub fn cross_type_features(
    a: &Detection,
    b: &Detection,
    offset: Point,
    back_offset: Point,
) -> EdgeFeatureVector {
    let actual = a.pos.offset_to(&b.pos);
    let back = b.pos.offset_to(&a.pos);
    let values = vec![
        Point::new(actual.x - offset.x, actual.y - offset.y).norm(),
        angle_between(&actual, &offset),
        Point::new(back.x - back_offset.x, back.y - back_offset.y).norm(),
        angle_between(&back, &back_offset),
    ];
    EdgeFeatureVector {
        schema: FeatureSchema::CrossType,
        values,
    }
}

impl CrossTypeModel {
    /// Features for a detection pair, oriented so that `first` comes first.
    pub fn features(&self, a: &Detection, b: &Detection) -> Result<EdgeFeatureVector> {
        let (x, y) = if a.part == self.first && b.part == self.second {
            (a, b)
        } else if a.part == self.second && b.part == self.first {
            (b, a)
        } else {
            return Err(Error::Schema {
                expected: format!("parts ({}, {})", self.first, self.second),
                got: format!("parts ({}, {})", a.part, b.part),
            });
        };
        Ok(cross_type_features(x, y, self.offset, self.back_offset))
    }
}

/// All edge cost models of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModels {
    pub same_type: LogisticModel,
    pub temporal: LogisticModel,
    /// Keyed by the ordered part pair `(low, high)`.
    pub cross_type: BTreeMap<(PartId, PartId), CrossTypeModel>,
    pub region: RegionSpec,
}

impl CostModels {
    pub fn temporal_features(&self) -> Result<FeatureSet> {
        match self.temporal.schema {
            FeatureSchema::Temporal { features } => Ok(features),
            other => Err(Error::Schema {
                expected: "temporal".into(),
                got: other.describe(),
            }),
        }
    }

    pub fn cross_model(&self, a: PartId, b: PartId) -> Result<&CrossTypeModel> {
        self.cross_type
            .get(&ordered(a, b))
            .ok_or_else(|| Error::config(format!("no cross-type model for parts ({a}, {b})")))
    }

    fn check(&self) -> Result<()> {
        if self.same_type.schema != FeatureSchema::SameType {
            return Err(Error::Schema {
                expected: "same_type".into(),
                got: self.same_type.schema.describe(),
            });
        }
        self.temporal_features()?;
        Ok(())
    }
}

/// Unordered part-type pairs that carry cross-type edges in the sparse model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    pairs: BTreeSet<(PartId, PartId)>,
}

/// Kinematic-tree pairs of the 14-joint layout.
pub const KINEMATIC_TREE: [(&str, &str); 13] = [
    ("head_top", "neck"),
    ("neck", "r_shoulder"),
    ("neck", "l_shoulder"),
    ("r_shoulder", "r_elbow"),
    ("r_elbow", "r_wrist"),
    ("l_shoulder", "l_elbow"),
    ("l_elbow", "l_wrist"),
    ("neck", "r_hip"),
    ("neck", "l_hip"),
    ("r_hip", "r_knee"),
    ("r_knee", "r_ankle"),
    ("l_hip", "l_knee"),
    ("l_knee", "l_ankle"),
];

impl SparsityPattern {
    pub fn from_names<S: AsRef<str>>(vocab: &PartVocabulary, pairs: &[(S, S)]) -> Result<Self> {
        let mut out = BTreeSet::new();
        for (a, b) in pairs {
            let ia = vocab.require(a.as_ref())?;
            let ib = vocab.require(b.as_ref())?;
            if ia == ib {
                return Err(Error::config(format!(
                    "sparsity pair ({}, {}) repeats a part",
                    a.as_ref(),
                    b.as_ref()
                )));
            }
            out.insert(ordered(ia, ib));
        }
        Ok(SparsityPattern { pairs: out })
    }

    pub fn from_ids(
        vocab: &PartVocabulary,
        pairs: impl IntoIterator<Item = (PartId, PartId)>,
    ) -> Result<Self> {
        let mut out = BTreeSet::new();
        for (a, b) in pairs {
            if a >= vocab.len() || b >= vocab.len() || a == b {
                return Err(Error::config(format!("invalid sparsity pair ({a}, {b})")));
            }
            out.insert(ordered(a, b));
        }
        Ok(SparsityPattern { pairs: out })
    }

    pub fn kinematic_tree(vocab: &PartVocabulary) -> Result<Self> {
        Self::from_names(vocab, &KINEMATIC_TREE)
    }

    pub fn contains(&self, a: PartId, b: PartId) -> bool {
        self.pairs.contains(&ordered(a, b))
    }

    pub fn pairs(&self) -> impl Iterator<Item = (PartId, PartId)> + '_ {
        self.pairs.iter().copied()
    }

    fn check(&self, vocab: &PartVocabulary) -> Result<()> {
        match self
            .pairs
            .iter()
            .find(|(a, b)| *a >= vocab.len() || *b >= vocab.len())
        {
            Some((a, b)) => Err(Error::config(format!(
                "sparsity pair ({a}, {b}) references an unknown part type"
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Connectivity {
    Full,
    Sparse(SparsityPattern),
}

impl Connectivity {
    fn allows(&self, a: PartId, b: PartId) -> bool {
        match self {
            Connectivity::Full => true,
            Connectivity::Sparse(p) => p.contains(a, b),
        }
    }
}

/// Descriptors and correspondences available for temporal edges.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TemporalInputs {
    pub descriptors: BTreeMap<NodeId, DescriptorSet>,
    /// Keyed by the earlier frame of the pair.
    pub forward: BTreeMap<usize, CorrespondenceSet>,
    pub reverse: BTreeMap<usize, CorrespondenceSet>,
}

impl TemporalInputs {
    pub fn insert_correspondences(&mut self, set: CorrespondenceSet) {
        match set.direction {
            Direction::Forward => self.forward.insert(set.frame, set),
            Direction::Reverse => self.reverse.insert(set.frame, set),
        };
    }

    /// Full `(l2, sift, dm, dm_rev)` features of a temporal candidate.
    pub fn features(
        &self,
        a: &Detection,
        b: &Detection,
        region: &RegionSpec,
        medians: &[f64; 4],
    ) -> Result<EdgeFeatureVector> {
        let t = a.frame.min(b.frame);
        assemble_g(
            a,
            b,
            TemporalEvidence {
                desc_a: self.descriptors.get(&a.node_id),
                desc_b: self.descriptors.get(&b.node_id),
                forward: self.forward.get(&t),
                reverse: self.reverse.get(&t),
            },
            region,
            medians,
        )
    }
}

/// Attachment probability of a proposal to a person node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalAttachment {
    pub root: NodeId,
    pub node: NodeId,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildOptions {
    /// Maximum displacement in pixels for a temporal candidate edge.
    pub temporal_gate: f64,
    pub sign: CostSign,
}

/// Median distance from each anchor detection to the nearest detection of the
/// other root part in its frame; `fallback` when the sequence has none.
pub fn estimate_head_size(seq: &Sequence, fallback: f64) -> f64 {
    let Some([top, anchor]) = seq.parts.roots() else {
        return fallback;
    };
    let frames = seq.frames();
    let mut sizes = Vec::new();
    for ids in &frames {
        for &a in ids {
            let da = seq.detection(a);
            if da.part != anchor {
                continue;
            }
            let nearest = ids
                .iter()
                .map(|&b| seq.detection(b))
                .filter(|db| db.part == top)
                .map(|db| da.pos.distance(&db.pos))
                .fold(f64::INFINITY, f64::min);
            if nearest.is_finite() && nearest > 0.0 {
                sizes.push(nearest);
            }
        }
    }
    if sizes.is_empty() {
        fallback
    } else {
        median(sizes)
    }
}

fn node_costs(seq: &Sequence, sign: CostSign) -> Result<Vec<f64>> {
    seq.detections
        .iter()
        .map(|d| node_cost_with(d.score, sign))
        .collect()
}

fn same_type_and_temporal_edges(
    seq: &Sequence,
    frames: &[Vec<NodeId>],
    models: &CostModels,
    inputs: &TemporalInputs,
    opts: &BuildOptions,
    edges: &mut Vec<Edge>,
) -> Result<()> {
    for ids in frames {
        for (k, &a) in ids.iter().enumerate() {
            for &b in &ids[k + 1..] {
                let (da, db) = (seq.detection(a), seq.detection(b));
                if da.part == db.part {
                    let cost =
                        same_type_cost(da.pos.distance(&db.pos), &models.same_type, opts.sign)?;
                    edges.push(Edge::new(a, b, EdgeKind::SameType, cost));
                }
            }
        }
    }
    temporal_edges(seq, frames, models, inputs, opts, edges)
}

fn temporal_edges(
    seq: &Sequence,
    frames: &[Vec<NodeId>],
    models: &CostModels,
    inputs: &TemporalInputs,
    opts: &BuildOptions,
    edges: &mut Vec<Edge>,
) -> Result<()> {
    let features = models.temporal_features()?;
    let medians = models.temporal.temporal_medians();
    for t in 1..frames.len() {
        for &a in &frames[t - 1] {
            let da = seq.detection(a);
            for &b in &frames[t] {
                let db = seq.detection(b);
                if da.part != db.part || da.pos.distance(&db.pos) > opts.temporal_gate {
                    continue;
                }
                let g = inputs
                    .features(da, db, &models.region, &medians)?
                    .select(features)?;
                let cost = models.temporal.cost(&g, opts.sign)?;
                edges.push(Edge::new(a, b, EdgeKind::Temporal, cost));
            }
        }
    }
    Ok(())
}

/// Bottom-up graph: cross-type edges inside each frame (all part pairs, or the
/// pattern's pairs), same-type edges between every same-type pair of a frame,
/// and temporal edges between same-type detections of adjacent frames within
/// the gate.
pub fn build_bu(
    seq: &Sequence,
    models: &CostModels,
    connectivity: &Connectivity,
    inputs: &TemporalInputs,
    opts: &BuildOptions,
) -> Result<ProblemGraph> {
    models.check()?;
    if let Connectivity::Sparse(p) = connectivity {
        p.check(&seq.parts)?;
    }
    let frames = seq.frames();
    let mut edges = Vec::new();
    for ids in &frames {
        for (k, &a) in ids.iter().enumerate() {
            for &b in &ids[k + 1..] {
                let (da, db) = (seq.detection(a), seq.detection(b));
                if da.part != db.part && connectivity.allows(da.part, db.part) {
                    let m = models.cross_model(da.part, db.part)?;
                    let cost = m.logistic.cost(&m.features(da, db)?, opts.sign)?;
                    edges.push(Edge::new(a, b, EdgeKind::CrossType, cost));
                }
            }
        }
    }
    same_type_and_temporal_edges(seq, &frames, models, inputs, opts, &mut edges)?;
    ProblemGraph::new(
        seq.detections.clone(),
        node_costs(seq, opts.sign)?,
        edges,
        [],
        [],
    )
}

/// Top-down/bottom-up graph.
///
/// `roots` are the person nodes. Every pair of roots in one frame is
/// must-cut; proposals connect to roots through attachment edges priced by
/// the conditional probabilities, never to each other across types. Same-type
/// and temporal edges are as in [`build_bu`]. All retention costs equal
/// `unary_cost`.
pub fn build_tdbu(
    seq: &Sequence,
    roots: &[NodeId],
    attachments: &[ConditionalAttachment],
    models: &CostModels,
    inputs: &TemporalInputs,
    opts: &BuildOptions,
    unary_cost: f64,
) -> Result<ProblemGraph> {
    models.check()?;
    let n = seq.detections.len();
    let root_set: BTreeSet<NodeId> = roots.iter().copied().collect();
    for &r in &root_set {
        if r >= n {
            return Err(Error::structure(format!("root {r} is not a detection")));
        }
        if !seq.parts.is_root(seq.detection(r).part) {
            return Err(Error::structure(format!(
                "root {r} is not a root-part detection"
            )));
        }
    }

    let frames = seq.frames();
    let mut must_cut = Vec::new();
    for ids in &frames {
        let frame_roots: Vec<NodeId> = ids
            .iter()
            .copied()
            .filter(|v| root_set.contains(v))
            .collect();
        for (k, &a) in frame_roots.iter().enumerate() {
            for &b in &frame_roots[k + 1..] {
                must_cut.push((a, b));
            }
        }
    }

    let mut edges = Vec::new();
    let mut seen = BTreeSet::new();
    for att in attachments {
        if !root_set.contains(&att.root) {
            return Err(Error::structure(format!(
                "attachment references {} which is not a root",
                att.root
            )));
        }
        if att.node >= n || root_set.contains(&att.node) {
            return Err(Error::structure(format!(
                "attachment target {} is not a non-root detection",
                att.node
            )));
        }
        let (dr, dn) = (seq.detection(att.root), seq.detection(att.node));
        if dr.frame != dn.frame {
            return Err(Error::structure(format!(
                "attachment ({}, {}) crosses frames {} and {}",
                att.root, att.node, dr.frame, dn.frame
            )));
        }
        if dr.part == dn.part {
            return Err(Error::structure(format!(
                "attachment ({}, {}) joins two detections of the same type",
                att.root, att.node
            )));
        }
        if !seen.insert(ordered(att.root, att.node)) {
            return Err(Error::structure(format!(
                "duplicate attachment ({}, {})",
                att.root, att.node
            )));
        }
        let cost = edge_cost_with(att.p, opts.sign)?;
        edges.push(Edge::new(
            att.root,
            att.node,
            EdgeKind::RootAttachment,
            cost,
        ));
    }
    same_type_and_temporal_edges(seq, &frames, models, inputs, opts, &mut edges)?;
    ProblemGraph::new(
        seq.detections.clone(),
        vec![unary_cost; n],
        edges,
        [],
        must_cut,
    )
}

// ---------------------------------------------------------------------------
// Fitting all models from labeled detections
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ModelTrainingOptions {
    pub features: FeatureSet,
    pub temporal_gate: f64,
    pub region: RegionSpec,
    pub train: TrainConfig,
    /// Fallback when a class is missing from the same-type sample.
    pub same_type_default: LogisticModel,
    /// Minimum examples of each class before a model is fitted.
    pub min_class_count: usize,
}

impl Default for ModelTrainingOptions {
    fn default() -> Self {
        ModelTrainingOptions {
            features: FeatureSet::ALL,
            temporal_gate: 60.0,
            region: RegionSpec::default(),
            train: TrainConfig::default(),
            same_type_default: LogisticModel::same_type_default(12.0, 0.3),
            min_class_count: 3,
        }
    }
}

fn has_both_classes(labels: &[bool], min: usize) -> bool {
    let pos = labels.iter().filter(|&&l| l).count();
    pos >= min && labels.len() - pos >= min
}

/// Fits same-type, temporal and cross-type models from detections labeled
/// with person ids (`None` for clutter). Two detections are a positive pair
/// iff both carry the same person id.
pub fn train_cost_models(
    seqs: &[(&Sequence, &[Option<usize>], &TemporalInputs)],
    opts: &ModelTrainingOptions,
) -> Result<CostModels> {
    let same = |labels: &[Option<usize>], a: NodeId, b: NodeId| matches!((labels[a], labels[b]), (Some(x), Some(y)) if x == y);
    let Some((first, _, _)) = seqs.first() else {
        return Err(Error::config("no training sequences"));
    };
    let vocab = &first.parts;

    let mut st_x = Vec::new();
    let mut st_y = Vec::new();
    let mut tp_x = Vec::new();
    let mut tp_y = Vec::new();
    let mut ct: BTreeMap<(PartId, PartId), Vec<(Detection, Detection, bool)>> = BTreeMap::new();

    for (seq, labels, inputs) in seqs {
        if seq.parts != *vocab {
            return Err(Error::config(
                "training sequences use different part vocabularies",
            ));
        }
        if labels.len() != seq.detections.len() {
            return Err(Error::config("label count does not match detection count"));
        }
        let frames = seq.frames();
        for ids in &frames {
            for (k, &a) in ids.iter().enumerate() {
                for &b in &ids[k + 1..] {
                    let (da, db) = (seq.detection(a), seq.detection(b));
                    let y = same(labels, a, b);
                    if da.part == db.part {
                        st_x.push(EdgeFeatureVector::new(
                            FeatureSchema::SameType,
                            vec![da.pos.distance(&db.pos)],
                        )?);
                        st_y.push(y);
                    } else {
                        let (x, z) = if da.part < db.part {
                            (*da, *db)
                        } else {
                            (*db, *da)
                        };
                        ct.entry((x.part, z.part)).or_default().push((x, z, y));
                    }
                }
            }
        }
        let zero = [0.0; 4];
        for t in 1..frames.len() {
            for &a in &frames[t - 1] {
                for &b in &frames[t] {
                    let (da, db) = (seq.detection(a), seq.detection(b));
                    if da.part != db.part || da.pos.distance(&db.pos) > opts.temporal_gate {
                        continue;
                    }
                    tp_x.push(inputs.features(da, db, &opts.region, &zero)?);
                    tp_y.push(same(labels, a, b));
                }
            }
        }
    }

    let TrainConfig { l2, steps, lr } = opts.train;
    let same_type = if has_both_classes(&st_y, opts.min_class_count) {
        train_logistic(&st_x, &st_y, l2, steps, lr)?
    } else {
        opts.same_type_default.clone()
    };

    if !has_both_classes(&tp_y, opts.min_class_count) {
        return Err(Error::config(
            "temporal training sample needs positive and negative pairs",
        ));
    }
    let tp_sel: Vec<EdgeFeatureVector> = tp_x
        .iter()
        .map(|g| g.select(opts.features))
        .collect::<Result<_>>()?;
    let temporal = train_logistic(&tp_sel, &tp_y, l2, steps, lr)?;

    let mut cross_type = BTreeMap::new();
    for ((pa, pb), pairs) in ct {
        let positives: Vec<&(Detection, Detection, bool)> = pairs.iter().filter(|p| p.2).collect();
        let labels: Vec<bool> = pairs.iter().map(|p| p.2).collect();
        if positives.is_empty() || !has_both_classes(&labels, 1) {
            continue;
        }
        let k = positives.len() as f64;
        let mut offset = Point::default();
        for (a, b, _) in &positives {
            let o = a.pos.offset_to(&b.pos);
            offset.x += o.x / k;
            offset.y += o.y / k;
        }
        let mut back_offset = Point::default();
        for (a, b, _) in &positives {
            let o = b.pos.offset_to(&a.pos);
            back_offset.x += o.x / k;
            back_offset.y += o.y / k;
        }
        let feats: Vec<EdgeFeatureVector> = pairs
            .iter()
            .map(|(a, b, _)| cross_type_features(a, b, offset, back_offset))
            .collect();
        let logistic = train_logistic(&feats, &labels, l2, steps, lr)?;
        cross_type.insert(
            (pa, pb),
            CrossTypeModel {
                first: pa,
                second: pb,
                offset,
                back_offset,
                logistic,
            },
        );
    }

    Ok(CostModels {
        same_type,
        temporal,
        cross_type,
        region: opts.region,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::node_cost;

    fn det(id: usize, frame: usize, part: PartId, x: f64, y: f64) -> Detection {
        Detection {
            node_id: id,
            frame,
            pos: Point::new(x, y),
            score: 0.8,
            part,
        }
    }

    /// Hand-set models: every pair attractive within ~40 px.
    fn models(vocab: &PartVocabulary, features: FeatureSet) -> CostModels {
        let mut cross_type = BTreeMap::new();
        for a in 0..vocab.len() {
            for b in a + 1..vocab.len() {
                cross_type.insert(
                    (a, b),
                    CrossTypeModel {
                        first: a,
                        second: b,
                        offset: Point::new(0.0, 20.0),
                        back_offset: Point::new(0.0, -20.0),
                        logistic: LogisticModel::new(
                            FeatureSchema::CrossType,
                            vec![-0.05, -0.5, -0.05, -0.5, 2.0],
                        )
                        .unwrap(),
                    },
                );
            }
        }
        let dim = features.indices().len();
        let mut w = vec![-0.05; dim];
        w.push(2.0);
        CostModels {
            same_type: LogisticModel::same_type_default(12.0, 0.3),
            temporal: LogisticModel::new(FeatureSchema::Temporal { features }, w).unwrap(),
            cross_type,
            region: RegionSpec::default(),
        }
    }

    fn opts() -> BuildOptions {
        BuildOptions {
            temporal_gate: 60.0,
            sign: CostSign::Negated,
        }
    }

    fn seq(dets: Vec<Detection>, frames: usize) -> Sequence {
        Sequence::new(PartVocabulary::mpii(), dets, frames).unwrap()
    }

    #[test]
    fn probability_to_cost() {
        assert_eq!(edge_cost_from_probability(0.5).unwrap(), 0.0);
        assert!((edge_cost_from_probability(0.9).unwrap() + 2.197_224_577_336_219_6).abs() < 1e-12);
        // -ln(0.01 / 0.99) = ln 99
        assert!((edge_cost_from_probability(0.01).unwrap() - 4.595_119_850_134_59).abs() < 1e-12);
        assert!(edge_cost_from_probability(1.0).is_err());
        assert!(edge_cost_from_probability(-0.1).is_err());
        assert_eq!(
            node_cost(0.3).unwrap(),
            edge_cost_from_probability(0.3).unwrap()
        );
    }

    #[test]
    fn same_type_cost_shape() {
        let m = LogisticModel::same_type_default(12.0, 0.3);
        assert!(same_type_cost(0.0, &m, CostSign::Negated).unwrap() < 0.0);
        assert!(same_type_cost(500.0, &m, CostSign::Negated).unwrap() > 0.0);
        assert!(same_type_cost(12.0, &m, CostSign::Negated).unwrap().abs() < 1e-12);
        assert!(same_type_cost(-1.0, &m, CostSign::Negated).is_err());
    }

    #[test]
    fn cross_type_cost_boundary_and_sign() {
        let m = LogisticModel::new(FeatureSchema::CrossType, vec![-1.0, -1.0, -1.0, -1.0, 2.0])
            .unwrap();
        let zero = EdgeFeatureVector::new(FeatureSchema::CrossType, vec![0.0; 4]).unwrap();
        assert!(cross_type_cost(&zero, &m, CostSign::Negated).unwrap() < 0.0);
        let boundary =
            EdgeFeatureVector::new(FeatureSchema::CrossType, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!(
            cross_type_cost(&boundary, &m, CostSign::Negated)
                .unwrap()
                .abs()
                < 1e-12
        );
        let wrong = EdgeFeatureVector::new(FeatureSchema::SameType, vec![1.0]).unwrap();
        assert!(matches!(
            cross_type_cost(&wrong, &m, CostSign::Negated),
            Err(Error::Schema { .. })
        ));
    }

    #[test]
    fn feature_set_parsing() {
        assert_eq!(FeatureSet::parse("l2,sift,dm").unwrap(), FeatureSet::ALL);
        assert_eq!(FeatureSet::parse("l2").unwrap().indices(), vec![0]);
        assert_eq!(FeatureSet::parse("dm,l2").unwrap().indices(), vec![0, 2, 3]);
        assert!(FeatureSet::parse("hog").is_err());
        assert!(FeatureSet::parse("").is_err());
    }

    #[test]
    fn bu_counts() {
        let vocab = PartVocabulary::mpii();
        let m = models(&vocab, FeatureSet::ALL);
        let inputs = TemporalInputs::default();

        let s = seq(vec![det(0, 0, 2, 0.0, 0.0), det(1, 0, 3, 0.0, 20.0)], 1);
        let g = build_bu(&s, &m, &Connectivity::Full, &inputs, &opts()).unwrap();
        assert_eq!(g.count_edges(EdgeKind::CrossType), 1);
        assert_eq!(g.count_edges(EdgeKind::Temporal), 0);

        let s = seq(vec![det(0, 0, 4, 0.0, 0.0), det(1, 1, 4, 3.0, 4.0)], 2);
        let g = build_bu(&s, &m, &Connectivity::Full, &inputs, &opts()).unwrap();
        assert_eq!(g.count_edges(EdgeKind::Temporal), 1);
        assert_eq!(g.edges().len(), 1);

        let s = seq(
            (0..3).map(|i| det(i, 0, 4, 10.0 * i as f64, 0.0)).collect(),
            1,
        );
        let g = build_bu(&s, &m, &Connectivity::Full, &inputs, &opts()).unwrap();
        assert_eq!(g.count_edges(EdgeKind::SameType), 3);
        g.check_edge_kinds(&vocab).unwrap();
    }

    #[test]
    fn temporal_gate_prunes() {
        let vocab = PartVocabulary::mpii();
        let m = models(&vocab, FeatureSet::ALL);
        let s = seq(vec![det(0, 0, 4, 0.0, 0.0), det(1, 1, 4, 100.0, 0.0)], 2);
        let g = build_bu(
            &s,
            &m,
            &Connectivity::Full,
            &TemporalInputs::default(),
            &opts(),
        )
        .unwrap();
        assert_eq!(g.edges().len(), 0);
    }

    #[test]
    fn sparse_pattern_is_a_subset() {
        let vocab = PartVocabulary::mpii();
        let m = models(&vocab, FeatureSet::ALL);
        let dets: Vec<Detection> = (0..14).map(|p| det(p, 0, p, p as f64 * 5.0, 0.0)).collect();
        let s = seq(dets, 1);
        let inputs = TemporalInputs::default();
        let full = build_bu(&s, &m, &Connectivity::Full, &inputs, &opts()).unwrap();
        let sparse = build_bu(
            &s,
            &m,
            &Connectivity::Sparse(SparsityPattern::kinematic_tree(&vocab).unwrap()),
            &inputs,
            &opts(),
        )
        .unwrap();
        assert_eq!(full.edges().len(), 14 * 13 / 2);
        assert_eq!(sparse.edges().len(), KINEMATIC_TREE.len());
        for e in sparse.edges() {
            assert_eq!(full.edge_between(e.u, e.v), Some(e));
        }
    }

    #[test]
    fn sparse_pattern_rejects_unknown_parts() {
        let vocab = PartVocabulary::mpii();
        assert!(matches!(
            SparsityPattern::from_names(&vocab, &[("neck", "tail")]),
            Err(Error::Config(_))
        ));
        assert!(SparsityPattern::from_ids(&vocab, [(0, 99)]).is_err());
    }

    #[test]
    fn missing_cross_model_is_a_config_error() {
        let vocab = PartVocabulary::mpii();
        let mut m = models(&vocab, FeatureSet::ALL);
        m.cross_type.clear();
        let s = seq(vec![det(0, 0, 2, 0.0, 0.0), det(1, 0, 3, 0.0, 20.0)], 1);
        assert!(matches!(
            build_bu(
                &s,
                &m,
                &Connectivity::Full,
                &TemporalInputs::default(),
                &opts()
            ),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn empty_sequence_gives_empty_graph() {
        let vocab = PartVocabulary::mpii();
        let m = models(&vocab, FeatureSet::ALL);
        let s = seq(vec![], 0);
        let g = build_bu(
            &s,
            &m,
            &Connectivity::Full,
            &TemporalInputs::default(),
            &opts(),
        )
        .unwrap();
        assert_eq!(g.num_nodes(), 0);
    }

    #[test]
    fn tdbu_structure() {
        let vocab = PartVocabulary::mpii();
        let m = models(&vocab, FeatureSet::ALL);
        // two necks (anchor, part 1) and a wrist in frame 0
        let s = seq(
            vec![
                det(0, 0, 1, 0.0, 0.0),
                det(1, 0, 1, 100.0, 0.0),
                det(2, 0, 4, 50.0, 60.0),
                det(3, 0, 7, 10.0, 60.0),
            ],
            1,
        );
        let atts = [
            ConditionalAttachment {
                root: 0,
                node: 2,
                p: 0.6,
            },
            ConditionalAttachment {
                root: 1,
                node: 2,
                p: 0.7,
            },
            ConditionalAttachment {
                root: 0,
                node: 3,
                p: 0.9,
            },
        ];
        let g = build_tdbu(
            &s,
            &[0, 1],
            &atts,
            &m,
            &TemporalInputs::default(),
            &opts(),
            0.0,
        )
        .unwrap();
        assert_eq!(g.must_cut().len(), 1);
        assert_eq!(g.count_edges(EdgeKind::RootAttachment), 3);
        assert_eq!(g.count_edges(EdgeKind::CrossType), 0);
        assert!(g.node_costs().iter().all(|&c| c == 0.0));
        g.check_edge_kinds(&vocab).unwrap();

        let sol = crate::solver::solve_exact(&g, &Default::default()).unwrap();
        assert!(!(sol.is_joined(2, 0) && sol.is_joined(2, 1)));
    }

    #[test]
    fn tdbu_rejects_cross_frame_attachment() {
        let vocab = PartVocabulary::mpii();
        let m = models(&vocab, FeatureSet::ALL);
        let s = seq(vec![det(0, 0, 1, 0.0, 0.0), det(1, 1, 4, 0.0, 50.0)], 2);
        let atts = [ConditionalAttachment {
            root: 0,
            node: 1,
            p: 0.6,
        }];
        assert!(matches!(
            build_tdbu(
                &s,
                &[0],
                &atts,
                &m,
                &TemporalInputs::default(),
                &opts(),
                0.0
            ),
            Err(Error::Structure(_))
        ));
    }

    #[test]
    fn tdbu_without_roots_has_only_same_type_and_temporal() {
        let vocab = PartVocabulary::mpii();
        let m = models(&vocab, FeatureSet::ALL);
        let s = seq(
            vec![
                det(0, 0, 4, 0.0, 0.0),
                det(1, 0, 4, 5.0, 0.0),
                det(2, 1, 4, 2.0, 0.0),
                det(3, 0, 7, 0.0, 0.0),
            ],
            2,
        );
        let g = build_tdbu(&s, &[], &[], &m, &TemporalInputs::default(), &opts(), 0.0).unwrap();
        assert!(g
            .edges()
            .iter()
            .all(|e| matches!(e.kind, EdgeKind::SameType | EdgeKind::Temporal)));
        assert!(g.must_cut().is_empty());
    }

    #[test]
    fn head_size_estimate() {
        let s = seq(
            vec![
                det(0, 0, 0, 0.0, 0.0),
                det(1, 0, 1, 0.0, 30.0),
                det(2, 1, 0, 5.0, 0.0),
                det(3, 1, 1, 5.0, 34.0),
            ],
            2,
        );
        assert_eq!(estimate_head_size(&s, 1.0), 32.0);
        assert_eq!(estimate_head_size(&seq(vec![], 0), 7.0), 7.0);
    }
}
