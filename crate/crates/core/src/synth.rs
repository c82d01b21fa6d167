//! Synthetic data: random multicut instances and articulated stick-figure scenes.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::builder::{ConditionalAttachment, TemporalInputs};
use crate::error::{Error, Result};
use crate::eval::{GroundTruth, GtFrame, GtPerson};
use crate::model::{
    Detection, Edge, EdgeKind, NodeId, PartVocabulary, Point, ProblemGraph, Sequence, MPII_PARTS,
};
use crate::temporal::{CorrespondenceSet, DescriptorSet, Direction};

/// Parameters of a random multicut instance.
#[derive(Debug, Clone)]
pub struct RandomInstanceConfig {
    pub nodes: usize,
    pub edge_probability: f64,
    /// Probability that a node pair carries a hard constraint.
    pub constrained_fraction: f64,
    pub cost_scale: f64,
    pub seed: u64,
}

impl Default for RandomInstanceConfig {
    fn default() -> Self {
        RandomInstanceConfig {
            nodes: 6,
            edge_probability: 0.5,
            constrained_fraction: 0.3,
            cost_scale: 2.0,
            seed: 0,
        }
    }
}

/// Random instance with mixed-sign costs and consistent hard constraints.
///
/// Must-link pairs are drawn only among edges (so every must-link group is
/// edge-connected) and are never allowed to chain across a must-cut pair.
pub fn random_instance(cfg: &RandomInstanceConfig) -> ProblemGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.nodes;
    let node_costs: Vec<f64> = (0..n)
        .map(|_| rng.random_range(-cfg.cost_scale..cfg.cost_scale))
        .collect();
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(cfg.edge_probability) {
                let w = rng.random_range(-cfg.cost_scale..cfg.cost_scale);
                edges.push(Edge::new(a, b, EdgeKind::SameType, w));
            }
        }
    }

    let mut group: Vec<usize> = (0..n).collect();
    let mut must_link: Vec<(NodeId, NodeId)> = Vec::new();
    let mut must_cut: Vec<(NodeId, NodeId)> = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if !rng.random_bool(cfg.constrained_fraction) {
                continue;
            }
            let is_edge = edges.iter().any(|e| e.u == a && e.v == b);
            let (ga, gb) = (group[a], group[b]);
            if is_edge && rng.random_bool(0.5) {
                let blocked = must_cut.iter().any(|&(x, y)| {
                    let (gx, gy) = (group[x], group[y]);
                    (gx == ga && gy == gb) || (gx == gb && gy == ga)
                });
                if !blocked {
                    must_link.push((a, b));
                    for g in group.iter_mut() {
                        if *g == gb {
                            *g = ga;
                        }
                    }
                }
            } else if ga != gb {
                must_cut.push((a, b));
            }
        }
    }
    ProblemGraph::from_costs(node_costs, edges, must_link, must_cut)
        .expect("generated instance is well formed")
}

/// Parameters of a synthetic articulated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub persons: usize,
    pub frames: usize,
    /// Multiplier on the skeleton template's bone lengths (template height
    /// is about 200 px).
    pub bone_scale: f64,
    /// Peak per-frame drift of a person, in pixels.
    pub motion_amplitude: f64,
    /// Peak limb swing, in radians.
    pub swing: f64,
    /// Standard deviation of the detection noise, in pixels.
    pub noise_sigma: f64,
    pub miss_rate: f64,
    /// Expected clutter detections per true joint.
    pub clutter_rate: f64,
    pub descriptor_dim: usize,
    pub descriptor_noise: f64,
    /// Spacing of the correspondence grid, in pixels.
    pub grid_step: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            persons: 3,
            frames: 21,
            bone_scale: 1.0,
            motion_amplitude: 2.0,
            swing: 0.35,
            noise_sigma: 0.0,
            miss_rate: 0.0,
            clutter_rate: 0.0,
            descriptor_dim: 16,
            descriptor_noise: 0.3,
            grid_step: 16.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (what, v) in [
            ("miss_rate", self.miss_rate),
            ("clutter_rate", self.clutter_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{what} must lie in [0, 1], got {v}")));
            }
        }
        for (what, v) in [
            ("noise_sigma", self.noise_sigma),
            ("descriptor_noise", self.descriptor_noise),
            ("motion_amplitude", self.motion_amplitude),
            ("swing", self.swing),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!(
                    "{what} must be a finite value >= 0, got {v}"
                )));
            }
        }
        if !(self.bone_scale > 0.0) || !(self.grid_step > 0.0) {
            return Err(Error::config("bone_scale and grid_step must be positive"));
        }
        if self.frames == 0 || self.descriptor_dim == 0 {
            return Err(Error::config(
                "frames and descriptor_dim must be at least 1",
            ));
        }
        Ok(())
    }

    pub fn image_size(&self) -> (f64, f64) {
        (
            640f64.max(160.0 * self.persons as f64),
            480.0 * self.bone_scale.max(1.0),
        )
    }
}

/// Joint positions relative to the neck, in template order.
const TEMPLATE: [(f64, f64); 14] = [
    (0.0, -30.0),
    (0.0, 0.0),
    (-22.0, 6.0),
    (-28.0, 40.0),
    (-30.0, 72.0),
    (22.0, 6.0),
    (28.0, 40.0),
    (30.0, 72.0),
    (-14.0, 80.0),
    (-16.0, 125.0),
    (-17.0, 170.0),
    (14.0, 80.0),
    (16.0, 125.0),
    (17.0, 170.0),
];

/// Index of the joint each limb joint rotates about (arms about the
/// shoulders, legs about the hips), with the swing direction.
fn pivot(part: usize) -> Option<(usize, f64)> {
    match part {
        3 | 4 => Some((2, 1.0)),
        6 | 7 => Some((5, -1.0)),
        9 | 10 => Some((8, -1.0)),
        12 | 13 => Some((11, 1.0)),
        _ => None,
    }
}

fn rotate(v: Point, angle: f64) -> Point {
    let (s, c) = angle.sin_cos();
    Point::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

/// A generated scene with everything needed to track and evaluate it.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub sequence: Sequence,
    pub inputs: TemporalInputs,
    pub attachments: Vec<ConditionalAttachment>,
    pub ground_truth: GroundTruth,
    /// Person id of each detection, `None` for clutter.
    pub labels: Vec<Option<usize>>,
}

struct Actor {
    neck: Point,
    velocity: Point,
    wobble: (f64, f64),
    scale: f64,
    phase: f64,
    rate: f64,
}

impl Actor {
    fn joints(&self, t: usize, swing: f64) -> [Point; 14] {
        let tf = t as f64;
        let neck = Point::new(
            self.neck.x + self.velocity.x * tf + self.wobble.0 * (0.3 * tf + self.phase).sin(),
            self.neck.y + self.velocity.y * tf + self.wobble.1 * (0.2 * tf + self.phase).cos(),
        );
        let angle = swing * (self.rate * tf + self.phase).sin();
        let base: Vec<Point> = TEMPLATE
            .iter()
            .map(|&(x, y)| Point::new(x * self.scale, y * self.scale))
            .collect();
        let mut out = [Point::default(); 14];
        for (k, slot) in out.iter_mut().enumerate() {
            let rel = match pivot(k) {
                Some((p, dir)) => {
                    let arm = base[p].offset_to(&base[k]);
                    let r = rotate(arm, dir * angle);
                    Point::new(base[p].x + r.x, base[p].y + r.y)
                }
                None => base[k],
            };
            *slot = Point::new(neck.x + rel.x, neck.y + rel.y);
        }
        out
    }
}

/// Stick-figure scene generator.
///
/// Persons are spread evenly across the image and drift with a constant
/// velocity plus a small sinusoidal wobble; arms and legs swing about the
/// shoulders and hips. Every true joint becomes a detection unless dropped
/// at `miss_rate`, displaced by isotropic Gaussian noise. Clutter
/// detections of random type appear at uniformly random places. Descriptors
/// are fixed per person and part plus noise; clutter gets fresh random ones.
/// Correspondences follow the true motion field on a regular grid: a grid
/// point within 20 px of a joint moves with that joint, others stay put.
pub fn generate_scene(cfg: &SynthConfig) -> Result<SynthScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vocab = PartVocabulary::mpii();
    let (width, height) = cfg.image_size();
    let parts = MPII_PARTS.len();
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let actors: Vec<Actor> = (0..cfg.persons)
        .map(|i| {
            let slot = width / cfg.persons as f64;
            let scale = cfg.bone_scale * rng.random_range(0.9..1.1);
            let top = 40.0 * scale;
            let bottom = (height - 180.0 * scale).max(top + 1.0);
            let a = cfg.motion_amplitude;
            Actor {
                neck: Point::new(
                    (i as f64 + 0.5) * slot + rng.random_range(-0.1..0.1) * slot,
                    rng.random_range(top..bottom),
                ),
                velocity: Point::new(
                    rng.random_range(-0.5..=0.5) * a,
                    rng.random_range(-1.0..=1.0) * a,
                ),
                wobble: (
                    rng.random_range(0.0..=1.0) * a,
                    rng.random_range(0.0..=1.0) * a,
                ),
                scale,
                phase: rng.random_range(0.0..std::f64::consts::TAU),
                rate: rng.random_range(0.25..0.45),
            }
        })
        .collect();
    let truth: Vec<Vec<[Point; 14]>> = (0..cfg.frames)
        .map(|t| actors.iter().map(|a| a.joints(t, cfg.swing)).collect())
        .collect();

    let orientations: Vec<usize> = (0..cfg.persons).map(|_| rng.random_range(1..=2)).collect();
    let appearance: Vec<Vec<Vec<Vec<f64>>>> = (0..cfg.persons)
        .map(|p| {
            (0..parts)
                .map(|_| {
                    (0..orientations[p])
                        .map(|_| {
                            (0..cfg.descriptor_dim)
                                .map(|_| unit.sample(&mut rng))
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let mut detections = Vec::new();
    let mut labels = Vec::new();
    let mut descriptors = BTreeMap::new();
    let mut frames_gt = Vec::with_capacity(cfg.frames);
    for (t, people) in truth.iter().enumerate() {
        let mut gt_persons = Vec::with_capacity(cfg.persons);
        for (p, joints) in people.iter().enumerate() {
            gt_persons.push(GtPerson {
                id: p,
                head_size: joints[0].distance(&joints[1]),
                joints: joints.iter().copied().enumerate().collect(),
            });
            for (part, j) in joints.iter().enumerate() {
                // always draw so that the stream does not depend on the rates
                let missed = rng.random::<f64>() < cfg.miss_rate;
                let dx = unit.sample(&mut rng) * cfg.noise_sigma;
                let dy = unit.sample(&mut rng) * cfg.noise_sigma;
                let score = rng.random_range(0.72..0.99);
                let desc: Vec<Vec<f64>> = appearance[p][part]
                    .iter()
                    .map(|v| {
                        v.iter()
                            .map(|x| x + unit.sample(&mut rng) * cfg.descriptor_noise)
                            .collect()
                    })
                    .collect();
                if missed {
                    continue;
                }
                let id = detections.len();
                detections.push(Detection {
                    node_id: id,
                    frame: t,
                    pos: Point::new(j.x + dx, j.y + dy),
                    score,
                    part,
                });
                labels.push(Some(p));
                descriptors.insert(id, DescriptorSet::new(id, desc)?);
            }
        }
        for _ in 0..cfg.persons * parts {
            if !(rng.random::<f64>() < cfg.clutter_rate) {
                continue;
            }
            let id = detections.len();
            detections.push(Detection {
                node_id: id,
                frame: t,
                pos: Point::new(rng.random_range(0.0..width), rng.random_range(0.0..height)),
                score: rng.random_range(0.05..0.75),
                part: rng.random_range(0..parts),
            });
            labels.push(None);
            let n = rng.random_range(1..=2);
            let desc = (0..n)
                .map(|_| {
                    (0..cfg.descriptor_dim)
                        .map(|_| unit.sample(&mut rng))
                        .collect()
                })
                .collect();
            descriptors.insert(id, DescriptorSet::new(id, desc)?);
        }
        frames_gt.push(GtFrame {
            persons: gt_persons,
            ignore: Vec::new(),
        });
    }

    let mut inputs = TemporalInputs {
        descriptors,
        ..Default::default()
    };
    for t in 0..cfg.frames.saturating_sub(1) {
        inputs.insert_correspondences(motion_field(
            &truth[t],
            &truth[t + 1],
            t,
            Direction::Forward,
            cfg,
            width,
            height,
        ));
        inputs.insert_correspondences(motion_field(
            &truth[t + 1],
            &truth[t],
            t,
            Direction::Reverse,
            cfg,
            width,
            height,
        ));
    }

    let sequence = Sequence::new(vocab.clone(), detections, cfg.frames)?;
    let attachments = simulate_attachments(&sequence, &labels, &vocab, &mut rng);
    Ok(SynthScene {
        sequence,
        inputs,
        attachments,
        ground_truth: GroundTruth::new(frames_gt)?,
        labels,
    })
}

fn motion_field(
    from: &[[Point; 14]],
    to: &[[Point; 14]],
    frame: usize,
    direction: Direction,
    cfg: &SynthConfig,
    width: f64,
    height: f64,
) -> CorrespondenceSet {
    const REACH: f64 = 20.0;
    let mut pairs = Vec::new();
    let mut y = cfg.grid_step / 2.0;
    while y < height {
        let mut x = cfg.grid_step / 2.0;
        while x < width {
            let c = Point::new(x, y);
            let mut best: Option<(f64, usize, usize)> = None;
            for (p, joints) in from.iter().enumerate() {
                for (k, j) in joints.iter().enumerate() {
                    let d = j.distance(&c);
                    if d <= REACH && best.is_none_or(|b| d < b.0) {
                        best = Some((d, p, k));
                    }
                }
            }
            let moved = match best {
                Some((_, p, k)) => {
                    let m = from[p][k].offset_to(&to[p][k]);
                    Point::new(c.x + m.x, c.y + m.y)
                }
                None => c,
            };
            pairs.push((c, moved));
            x += cfg.grid_step;
        }
        y += cfg.grid_step;
    }
    CorrespondenceSet {
        frame,
        direction,
        pairs,
    }
}

/// Stand-in for a network predicting where a person's parts are given its
/// neck: confident for the true person, weak otherwise, with logit noise.
fn simulate_attachments(
    seq: &Sequence,
    labels: &[Option<usize>],
    vocab: &PartVocabulary,
    rng: &mut ChaCha8Rng,
) -> Vec<ConditionalAttachment> {
    let Some(anchor) = vocab.anchor() else {
        return Vec::new();
    };
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = Vec::new();
    for ids in seq.frames() {
        for &r in &ids {
            if seq.detection(r).part != anchor {
                continue;
            }
            for &v in &ids {
                let d = seq.detection(v);
                if d.part == anchor {
                    continue;
                }
                let same = labels[r].is_some() && labels[r] == labels[v];
                let far = seq.detection(r).pos.distance(&d.pos) / 100.0;
                let z = if same { 2.5 } else { -2.5 - far } + unit.sample(rng);
                let p = (1.0 / (1.0 + (-z).exp())).clamp(1e-6, 1.0 - 1e-6);
                out.push(ConditionalAttachment {
                    root: r,
                    node: v,
                    p,
                });
            }
        }
    }
    out
}
