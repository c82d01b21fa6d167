//! Temporal edge features between same-type proposals in adjacent frames.
//!
//! The feature vector is `(l2, sift, dm, dm_rev)`:
//! * `l2`: Euclidean distance between the two proposals,
//! * `sift`: smallest descriptor distance over all orientation pairs,
//! * `dm`, `dm_rev`: agreement of the two part-centred regions with the point
//!   correspondences between the frames, in forward and reverse order.
//!
//! Descriptors and correspondences are computed elsewhere and read from files.

use serde::{Deserialize, Serialize};

use crate::builder::{EdgeFeatureVector, FeatureSchema, FeatureSet};
use crate::error::{Error, Result};
use crate::model::{Detection, NodeId, Point};

pub const TEMPORAL_FEATURES: [&str; 4] = ["l2", "sift", "dm", "dm_rev"];

/// Appearance descriptors of one detection, one vector per dominant orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorSet {
    pub node: NodeId,
    pub vectors: Vec<Vec<f64>>,
}

impl DescriptorSet {
    pub fn new(node: NodeId, vectors: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = vectors.first() else {
            return Err(Error::structure(format!("node {node} has no descriptors")));
        };
        let len = first.len();
        if vectors.iter().any(|v| v.len() != len) {
            return Err(Error::structure(format!(
                "node {node} has descriptors of differing lengths"
            )));
        }
        if vectors.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::structure(format!(
                "node {node} has a non-finite descriptor"
            )));
        }
        Ok(DescriptorSet { node, vectors })
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Points in frame `t` matched to frame `t + 1`.
    Forward,
    /// Points in frame `t + 1` matched back to frame `t`.
    Reverse,
}

/// Point correspondences between frames `frame` and `frame + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub frame: usize,
    pub direction: Direction,
    /// `(c1, c2)`: `c1` lies in the first image of the direction, `c2` in the second.
    pub pairs: Vec<(Point, Point)>,
}

/// Side length of the square region centred on a proposal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub side: f64,
}

impl Default for RegionSpec {
    fn default() -> Self {
        RegionSpec { side: 64.0 }
    }
}

impl RegionSpec {
    pub fn new(side: f64) -> Result<Self> {
        if !(side > 0.0 && side.is_finite()) {
            return Err(Error::Domain {
                what: "region side",
                value: side,
                domain: "(0, inf)",
            });
        }
        Ok(RegionSpec { side })
    }

    pub fn around(&self, center: Point) -> Region {
        Region {
            center,
            half: self.side / 2.0,
        }
    }
}

/// Closed axis-aligned square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub center: Point,
    pub half: f64,
}

impl Region {
    pub fn contains(&self, p: &Point) -> bool {
        (p.x - self.center.x).abs() <= self.half && (p.y - self.center.y).abs() <= self.half
    }
}

pub fn delta_l2(a: &Detection, b: &Detection) -> f64 {
    a.pos.distance(&b.pos)
}

pub fn delta_sift(a: &DescriptorSet, b: &DescriptorSet) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Schema {
            expected: format!("descriptor length {}", a.dim()),
            got: format!("descriptor length {}", b.dim()),
        });
    }
    let mut best = f64::INFINITY;
    for u in &a.vectors {
        for v in &b.vectors {
            let d = u
                .iter()
                .zip(v)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            best = best.min(d);
        }
    }
    Ok(best)
}

/// Correspondences linking `from` to `to`, divided by all correspondences that
/// start in `from` plus all that end in `to`. Zero when nothing touches
/// either region.
pub fn delta_dm(pairs: &[(Point, Point)], from: &Region, to: &Region) -> f64 {
    let (mut both, mut starts, mut ends) = (0usize, 0usize, 0usize);
    for (c1, c2) in pairs {
        let s = from.contains(c1);
        let e = to.contains(c2);
        starts += s as usize;
        ends += e as usize;
        both += (s && e) as usize;
    }
    let denom = starts + ends;
    if denom == 0 {
        0.0
    } else {
        both as f64 / denom as f64
    }
}

/// Inputs for the temporal feature of one candidate edge.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemporalEvidence<'a> {
    pub desc_a: Option<&'a DescriptorSet>,
    pub desc_b: Option<&'a DescriptorSet>,
    pub forward: Option<&'a CorrespondenceSet>,
    pub reverse: Option<&'a CorrespondenceSet>,
}

/// Full four-entry temporal feature vector of a candidate edge.
///
/// The earlier detection plays the role of `i`. Missing descriptors or
/// correspondences are replaced by the matching entry of `medians`.
pub fn assemble_g(
    a: &Detection,
    b: &Detection,
    evidence: TemporalEvidence<'_>,
    region: &RegionSpec,
    medians: &[f64; 4],
) -> Result<EdgeFeatureVector> {
    let (i, j, desc_i, desc_j) = if a.frame <= b.frame {
        (a, b, evidence.desc_a, evidence.desc_b)
    } else {
        (b, a, evidence.desc_b, evidence.desc_a)
    };
    if j.frame != i.frame + 1 {
        return Err(Error::structure(format!(
            "temporal features need adjacent frames, got {} and {}",
            i.frame, j.frame
        )));
    }
    if i.part != j.part {
        return Err(Error::structure(format!(
            "temporal features need equal part types, got {} and {}",
            i.part, j.part
        )));
    }

    let l2 = delta_l2(i, j);
    let sift = match (desc_i, desc_j) {
        (Some(x), Some(y)) => delta_sift(x, y)?,
        _ => medians[1],
    };
    let ri = region.around(i.pos);
    let rj = region.around(j.pos);
    let dm = match evidence.forward {
        Some(c) => {
            check_set(c, i.frame, Direction::Forward)?;
            delta_dm(&c.pairs, &ri, &rj)
        }
        None => medians[2],
    };
    let dm_rev = match evidence.reverse {
        Some(c) => {
            check_set(c, i.frame, Direction::Reverse)?;
            delta_dm(&c.pairs, &rj, &ri)
        }
        None => medians[3],
    };
    EdgeFeatureVector::new(
        FeatureSchema::Temporal {
            features: FeatureSet::ALL,
        },
        vec![l2, sift, dm, dm_rev],
    )
}

fn check_set(c: &CorrespondenceSet, frame: usize, direction: Direction) -> Result<()> {
    if c.frame != frame || c.direction != direction {
        return Err(Error::structure(format!(
            "expected {direction:?} correspondences for frame {frame}, got {:?} for frame {}",
            c.direction, c.frame
        )));
    }
    Ok(())
}
