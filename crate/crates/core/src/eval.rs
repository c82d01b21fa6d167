//! Pose estimation AP and per-joint tracking MOTA against ground truth.

use std::collections::{BTreeMap, BTreeSet};

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NodeId, PartId, Point, Sequence};
use crate::pipeline::{Joint, TrackSet};

/// Default PCKh threshold as a fraction of the head size.
pub const DEFAULT_ALPHA: f64 = 0.5;

/// Axis-aligned rectangle; predictions inside it are not scored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtPerson {
    pub id: usize,
    pub head_size: f64,
    pub joints: BTreeMap<PartId, Point>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GtFrame {
    pub persons: Vec<GtPerson>,
    #[serde(default)]
    pub ignore: Vec<Rect>,
}

impl GtFrame {
    fn ignored(&self, p: &Point) -> bool {
        self.ignore.iter().any(|r| r.contains(p))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub frames: Vec<GtFrame>,
}

impl GroundTruth {
    pub fn new(frames: Vec<GtFrame>) -> Result<Self> {
        for (t, f) in frames.iter().enumerate() {
            let mut ids = BTreeSet::new();
            for p in &f.persons {
                if !(p.head_size > 0.0) || !p.head_size.is_finite() {
                    return Err(Error::Domain {
                        what: "head size",
                        value: p.head_size,
                        domain: "(0, inf)",
                    });
                }
                if !ids.insert(p.id) {
                    return Err(Error::structure(format!(
                        "person id {} appears twice in frame {t}",
                        p.id
                    )));
                }
            }
            if let Some(r) = f.ignore.iter().find(|r| !(r.x0 <= r.x1 && r.y0 <= r.y1)) {
                return Err(Error::structure(format!(
                    "frame {t} has an inverted ignore region {r:?}"
                )));
            }
        }
        Ok(GroundTruth { frames })
    }

    /// The annotation as a track set with every joint at score 1.
    pub fn as_tracks(&self) -> TrackSet {
        let mut out = TrackSet::default();
        for (t, f) in self.frames.iter().enumerate() {
            for p in &f.persons {
                for (&part, &pos) in &p.joints {
                    out.insert(p.id, t, part, Joint { pos, score: 1.0 })
                        .expect("person ids are unique per frame");
                }
            }
        }
        out
    }

    pub fn num_joints(&self) -> usize {
        self.frames
            .iter()
            .flat_map(|f| &f.persons)
            .map(|p| p.joints.len())
            .sum()
    }
}

pub fn match_pckh(pred: &Point, gt: &Point, head_size: f64, alpha: f64) -> bool {
    pred.distance(gt) <= alpha * head_size
}

/// Person id of the nearest same-part ground-truth joint within the PCKh
/// gate, per detection; `None` for clutter.
pub fn label_detections(seq: &Sequence, gt: &GroundTruth, alpha: f64) -> Vec<Option<usize>> {
    seq.detections
        .iter()
        .map(|d| {
            let frame = gt.frames.get(d.frame)?;
            frame
                .persons
                .iter()
                .filter_map(|p| {
                    let j = p.joints.get(&d.part)?;
                    match_pckh(&d.pos, j, p.head_size, alpha).then(|| (d.pos.distance(j), p.id))
                })
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(_, id)| id)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    /// Per part type; `None` when the part never occurs in the ground truth.
    pub per_part: Vec<Option<f64>>,
    /// Mean over parts with ground truth, in `[0, 1]`.
    pub mean: f64,
}

/// Area under the precision/recall curve with every-point interpolation.
/// `ranked` holds true-positive flags sorted by decreasing score.
pub fn average_precision(ranked: &[bool], num_positives: usize) -> f64 {
    if num_positives == 0 {
        return 0.0;
    }
    let mut prec = Vec::with_capacity(ranked.len());
    let mut rec = Vec::with_capacity(ranked.len());
    let mut tp = 0usize;
    for (k, &hit) in ranked.iter().enumerate() {
        if hit {
            tp += 1;
        }
        prec.push(tp as f64 / (k + 1) as f64);
        rec.push(tp as f64 / num_positives as f64);
    }
    for k in (0..prec.len().saturating_sub(1)).rev() {
        prec[k] = prec[k].max(prec[k + 1]);
    }
    let mut ap = 0.0;
    let mut last = 0.0;
    for (p, r) in prec.iter().zip(&rec) {
        ap += (r - last) * p;
        last = *r;
    }
    ap
}

/// A predicted person in one frame.
struct Candidate<'a> {
    person: usize,
    score: f64,
    pose: &'a BTreeMap<PartId, Joint>,
}

/// Score-ordered greedy assignment of predicted persons to ground-truth
/// persons. A prediction may claim a ground-truth person when more than half
/// of the parts both annotate agree under PCKh; among several it takes the one
/// with most agreeing parts.
fn assign_persons(cands: &[Candidate<'_>], frame: &GtFrame, alpha: f64) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| {
        cands[b]
            .score
            .total_cmp(&cands[a].score)
            .then(cands[a].person.cmp(&cands[b].person))
    });
    let mut taken = vec![false; frame.persons.len()];
    let mut out = vec![None; cands.len()];
    for c in order {
        let mut best: Option<(usize, usize)> = None;
        for (g, gp) in frame.persons.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let mut shared = 0;
            let mut agree = 0;
            for (part, j) in cands[c].pose {
                if let Some(gj) = gp.joints.get(part) {
                    shared += 1;
                    if match_pckh(&j.pos, gj, gp.head_size, alpha) {
                        agree += 1;
                    }
                }
            }
            if agree > 0 && 2 * agree > shared && best.is_none_or(|(_, a)| agree > a) {
                best = Some((g, agree));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            out[c] = Some(g);
        }
    }
    out
}

/// Per-part average precision of the poses in `pred`.
///
/// A person's score is the mean score of its joints in that frame. Predicted
/// persons whose joints all fall into ignore regions are skipped; other joints
/// in ignore regions that do not hit their assigned ground truth are neither
/// true nor false positives.
pub fn ap_per_part(pred: &TrackSet, gt: &GroundTruth, num_parts: usize, alpha: f64) -> ApReport {
    let mut ranked: Vec<Vec<(f64, (usize, usize), bool)>> = vec![Vec::new(); num_parts];
    let mut positives = vec![0usize; num_parts];
    for f in &gt.frames {
        for p in &f.persons {
            for &part in p.joints.keys() {
                if part < num_parts {
                    positives[part] += 1;
                }
            }
        }
    }
    let empty = GtFrame::default();
    let by_frame = pred.by_frame();
    for (&t, persons) in &by_frame {
        let frame = gt.frames.get(t).unwrap_or(&empty);
        let cands: Vec<Candidate<'_>> = persons
            .iter()
            .filter(|(_, pose)| !pose.values().all(|j| frame.ignored(&j.pos)))
            .map(|&(person, pose)| Candidate {
                person,
                score: pose.values().map(|j| j.score).sum::<f64>() / pose.len() as f64,
                pose,
            })
            .collect();
        let assigned = assign_persons(&cands, frame, alpha);
        for (c, g) in cands.iter().zip(assigned) {
            for (&part, j) in c.pose {
                if part >= num_parts {
                    continue;
                }
                let hit = g.is_some_and(|g| {
                    let gp = &frame.persons[g];
                    gp.joints
                        .get(&part)
                        .is_some_and(|gj| match_pckh(&j.pos, gj, gp.head_size, alpha))
                });
                if !hit && frame.ignored(&j.pos) {
                    continue;
                }
                ranked[part].push((j.score, (t, c.person), hit));
            }
        }
    }
    let per_part: Vec<Option<f64>> = ranked
        .into_iter()
        .zip(&positives)
        .map(|(mut r, &npos)| {
            if npos == 0 {
                return None;
            }
            r.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let flags: Vec<bool> = r.iter().map(|x| x.2).collect();
            Some(average_precision(&flags, npos))
        })
        .collect();
    let valid: Vec<f64> = per_part.iter().flatten().copied().collect();
    let mean = if valid.is_empty() {
        0.0
    } else {
        valid.iter().sum::<f64>() / valid.len() as f64
    };
    ApReport { per_part, mean }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotaCounts {
    pub misses: usize,
    pub false_positives: usize,
    pub id_switches: usize,
    pub gt: usize,
}

impl MotaCounts {
    /// `None` when there is no ground truth to track.
    pub fn mota(&self) -> Option<f64> {
        (self.gt > 0).then(|| {
            1.0 - (self.misses + self.false_positives + self.id_switches) as f64 / self.gt as f64
        })
    }

    pub fn add(&mut self, other: &MotaCounts) {
        self.misses += other.misses;
        self.false_positives += other.false_positives;
        self.id_switches += other.id_switches;
        self.gt += other.gt;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotaReport {
    pub per_part: Vec<MotaCounts>,
    /// Summed counts over all parts.
    pub total: MotaCounts,
}

impl MotaReport {
    pub fn part_mota(&self) -> Vec<Option<f64>> {
        self.per_part.iter().map(MotaCounts::mota).collect()
    }

    /// Mean of the per-part MOTA values over parts with ground truth.
    pub fn average(&self) -> f64 {
        let v: Vec<f64> = self.part_mota().into_iter().flatten().collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }

    /// Combines reports of several sequences by summing counts.
    pub fn merge(&mut self, other: &MotaReport) {
        if self.per_part.len() < other.per_part.len() {
            self.per_part
                .resize(other.per_part.len(), MotaCounts::default());
        }
        for (a, b) in self.per_part.iter_mut().zip(&other.per_part) {
            a.add(b);
        }
        self.total.add(&other.total);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    #[default]
    Greedy,
    Hungarian,
}

/// Candidate (gt index, hypothesis index, distance) pairs inside the gate.
fn gated_pairs(
    gts: &[(usize, Point, f64)],
    hyps: &[(usize, Point)],
    alpha: f64,
) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for (g, (_, gp, hs)) in gts.iter().enumerate() {
        for (h, (_, hp)) in hyps.iter().enumerate() {
            if match_pckh(hp, gp, *hs, alpha) {
                out.push((g, h, hp.distance(gp)));
            }
        }
    }
    out
}

fn match_greedy(mut pairs: Vec<(usize, usize, f64)>, ng: usize, nh: usize) -> Vec<(usize, usize)> {
    pairs.sort_by(|a, b| a.2.total_cmp(&b.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    let mut gu = vec![false; ng];
    let mut hu = vec![false; nh];
    let mut out = Vec::new();
    for (g, h, _) in pairs {
        if !gu[g] && !hu[h] {
            gu[g] = true;
            hu[h] = true;
            out.push((g, h));
        }
    }
    out
}

/// Maximum-cardinality matching of minimum total distance.
fn match_hungarian(pairs: &[(usize, usize, f64)], ng: usize, nh: usize) -> Vec<(usize, usize)> {
    if pairs.is_empty() {
        return Vec::new();
    }
    // distances in micro-pixels; one extra match always outweighs any distance sum
    let units: Vec<i64> = pairs.iter().map(|p| (p.2 * 1e6).round() as i64).collect();
    let big = units.iter().sum::<i64>() + 1;
    let transpose = ng > nh;
    let (rows, cols) = if transpose { (nh, ng) } else { (ng, nh) };
    let mut w = Matrix::new(rows, cols, 0i64);
    for (p, &u) in pairs.iter().zip(&units) {
        let (r, c) = if transpose { (p.1, p.0) } else { (p.0, p.1) };
        w[(r, c)] = big - u;
    }
    let (_, assign) = kuhn_munkres(&w);
    assign
        .into_iter()
        .enumerate()
        .filter(|&(r, c)| w[(r, c)] > 0)
        .map(|(r, c)| if transpose { (c, r) } else { (r, c) })
        .collect()
}

/// CLEAR-MOT counts per part type.
///
/// In each frame, correspondences from earlier frames are kept while the
/// hypothesis still lies inside the ground-truth joint's PCKh gate; remaining
/// joints are matched by distance. A match whose hypothesis differs from the
/// one last matched to the same ground-truth target is an identity switch.
/// Unmatched hypotheses inside ignore regions are not false positives.
pub fn mota(
    tracks: &TrackSet,
    gt: &GroundTruth,
    num_parts: usize,
    alpha: f64,
    assignment: Assignment,
) -> MotaReport {
    let by_frame = tracks.by_frame();
    let last_frame = by_frame
        .keys()
        .next_back()
        .map_or(0, |&t| t + 1)
        .max(gt.frames.len());
    let empty = GtFrame::default();
    let mut per_part = vec![MotaCounts::default(); num_parts];
    for (part, counts) in per_part.iter_mut().enumerate() {
        let mut last_match: BTreeMap<usize, usize> = BTreeMap::new();
        let mut active: BTreeMap<usize, usize> = BTreeMap::new();
        for t in 0..last_frame {
            let frame = gt.frames.get(t).unwrap_or(&empty);
            let gts: Vec<(usize, Point, f64)> = frame
                .persons
                .iter()
                .filter_map(|p| p.joints.get(&part).map(|&j| (p.id, j, p.head_size)))
                .collect();
            let hyps: Vec<(usize, Point)> = by_frame
                .get(&t)
                .map(|ps| {
                    ps.iter()
                        .filter_map(|(id, pose)| pose.get(&part).map(|j| (*id, j.pos)))
                        .collect()
                })
                .unwrap_or_default();

            let mut gt_used = vec![false; gts.len()];
            let mut hyp_used = vec![false; hyps.len()];
            let mut matched: Vec<(usize, usize)> = Vec::new();
            for (g, (gid, gp, hs)) in gts.iter().enumerate() {
                if let Some(&hid) = active.get(gid) {
                    if let Some(h) = hyps.iter().position(|(id, _)| *id == hid) {
                        if !hyp_used[h] && match_pckh(&hyps[h].1, gp, *hs, alpha) {
                            gt_used[g] = true;
                            hyp_used[h] = true;
                            matched.push((g, h));
                        }
                    }
                }
            }
            let free_g: Vec<usize> = (0..gts.len()).filter(|&g| !gt_used[g]).collect();
            let free_h: Vec<usize> = (0..hyps.len()).filter(|&h| !hyp_used[h]).collect();
            let sub_g: Vec<(usize, Point, f64)> = free_g.iter().map(|&g| gts[g]).collect();
            let sub_h: Vec<(usize, Point)> = free_h.iter().map(|&h| hyps[h]).collect();
            let pairs = gated_pairs(&sub_g, &sub_h, alpha);
            let fresh = match assignment {
                Assignment::Greedy => match_greedy(pairs, sub_g.len(), sub_h.len()),
                Assignment::Hungarian => match_hungarian(&pairs, sub_g.len(), sub_h.len()),
            };
            for (g, h) in fresh {
                let (g, h) = (free_g[g], free_h[h]);
                gt_used[g] = true;
                hyp_used[h] = true;
                let (gid, hid) = (gts[g].0, hyps[h].0);
                if last_match.get(&gid).is_some_and(|&prev| prev != hid) {
                    counts.id_switches += 1;
                }
                matched.push((g, h));
            }

            active.clear();
            for (g, h) in matched {
                active.insert(gts[g].0, hyps[h].0);
                last_match.insert(gts[g].0, hyps[h].0);
            }
            counts.gt += gts.len();
            counts.misses += gt_used.iter().filter(|u| !**u).count();
            counts.false_positives += hyps
                .iter()
                .zip(&hyp_used)
                .filter(|((_, p), used)| !**used && !frame.ignored(p))
                .count();
        }
    }
    let mut total = MotaCounts::default();
    for c in &per_part {
        total.add(c);
    }
    MotaReport { per_part, total }
}

/// Node ids of the detections that the ground truth labels as `person`.
pub fn nodes_of_person(labels: &[Option<usize>], person: usize) -> Vec<NodeId> {
    labels
        .iter()
        .enumerate()
        .filter(|(_, l)| **l == Some(person))
        .map(|(i, _)| i)
        .collect()
}
