use posetrack::eval::{
    ap_per_part, mota, Assignment, GroundTruth, GtFrame, GtPerson, Rect, DEFAULT_ALPHA,
};
use posetrack::model::Point;
use posetrack::pipeline::{Joint, TrackSet};
use posetrack::synth::{generate_scene, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PARTS: usize = 14;

fn truth() -> GroundTruth {
    generate_scene(&SynthConfig {
        persons: 3,
        frames: 8,
        ..SynthConfig::default()
    })
    .unwrap()
    .ground_truth
}

/// Ground truth poses jittered within the gate, random scores, plus one
/// spurious person far from everyone.
fn noisy_prediction(gt: &GroundTruth, seed: u64) -> TrackSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = TrackSet::default();
    for (t, f) in gt.frames.iter().enumerate() {
        for p in &f.persons {
            for (&part, &pos) in &p.joints {
                if rng.random_bool(0.1) {
                    continue;
                }
                let off = if rng.random_bool(0.2) { 3.0 } else { 0.2 } * p.head_size;
                let pos = Point::new(pos.x + off * rng.random_range(-0.5..0.5), pos.y);
                out.insert(
                    p.id,
                    t,
                    part,
                    Joint {
                        pos,
                        score: rng.random_range(0.05..0.95),
                    },
                )
                .unwrap();
            }
        }
        for part in 0..PARTS {
            let pos = Point::new(-500.0 - part as f64, -500.0);
            out.insert(
                99,
                t,
                part,
                Joint {
                    pos,
                    score: rng.random_range(0.05..0.95),
                },
            )
            .unwrap();
        }
    }
    out
}

fn map_tracks(
    tracks: &TrackSet,
    person: impl Fn(usize) -> usize,
    score: impl Fn(f64) -> f64,
) -> TrackSet {
    let mut out = TrackSet::default();
    for (&p, frames) in tracks.tracks() {
        for (&t, pose) in frames {
            for (&part, j) in pose {
                out.insert(
                    person(p),
                    t,
                    part,
                    Joint {
                        pos: j.pos,
                        score: score(j.score),
                    },
                )
                .unwrap();
            }
        }
    }
    out
}

#[test]
fn ground_truth_scores_perfectly() {
    let gt = truth();
    let tracks = gt.as_tracks();
    let report = mota(&tracks, &gt, PARTS, DEFAULT_ALPHA, Assignment::Greedy);
    assert!(report.part_mota().iter().all(|m| *m == Some(1.0)));
    let ap = ap_per_part(&tracks, &gt, PARTS, DEFAULT_ALPHA);
    assert_eq!(ap.mean, 1.0);
}

#[test]
fn ap_ignores_monotone_score_changes() {
    let gt = truth();
    for seed in 0..5 {
        let pred = noisy_prediction(&gt, seed);
        let base = ap_per_part(&pred, &gt, PARTS, DEFAULT_ALPHA);
        assert!(base.mean < 1.0);
        let squashed = map_tracks(&pred, |p| p, |s| s * s * s);
        assert_eq!(ap_per_part(&squashed, &gt, PARTS, DEFAULT_ALPHA), base);
    }
}

#[test]
fn metrics_ignore_person_ids() {
    let gt = truth();
    for seed in 0..5 {
        let pred = noisy_prediction(&gt, seed);
        let renamed = map_tracks(&pred, |p| 1000 - 3 * p, |s| s);
        for a in [Assignment::Greedy, Assignment::Hungarian] {
            assert_eq!(
                mota(&pred, &gt, PARTS, DEFAULT_ALPHA, a),
                mota(&renamed, &gt, PARTS, DEFAULT_ALPHA, a)
            );
        }
        assert_eq!(
            ap_per_part(&pred, &gt, PARTS, DEFAULT_ALPHA),
            ap_per_part(&renamed, &gt, PARTS, DEFAULT_ALPHA)
        );
    }
}

#[test]
fn dropping_a_person_costs_exactly_their_joints() {
    let gt = truth();
    let mut tracks = gt.as_tracks();
    let victim = gt.frames[0].persons[1].id;
    let joints: usize = gt
        .frames
        .iter()
        .flat_map(|f| &f.persons)
        .filter(|p| p.id == victim)
        .map(|p| p.joints.len())
        .sum();
    assert!(tracks.remove_person(victim));
    let report = mota(&tracks, &gt, PARTS, DEFAULT_ALPHA, Assignment::Greedy);
    assert_eq!(report.total.misses, joints);
    assert_eq!(report.total.false_positives, 0);
    assert_eq!(report.total.id_switches, 0);
}

#[test]
fn predictions_in_ignore_regions_are_not_penalised() {
    let gt = truth();
    // ranked above every true joint
    let mut with_spurious = map_tracks(&gt.as_tracks(), |p| p, |_| 0.5);
    for t in 0..gt.frames.len() {
        for part in 0..PARTS {
            let pos = Point::new(-500.0 - part as f64, -500.0);
            with_spurious
                .insert(99, t, part, Joint { pos, score: 0.99 })
                .unwrap();
        }
    }
    let hurt = mota(
        &with_spurious,
        &gt,
        PARTS,
        DEFAULT_ALPHA,
        Assignment::Greedy,
    );
    assert_eq!(hurt.total.false_positives, PARTS * gt.frames.len());
    assert!(ap_per_part(&with_spurious, &gt, PARTS, DEFAULT_ALPHA).mean < 1.0);

    let ignore = Rect {
        x0: -600.0,
        y0: -600.0,
        x1: -400.0,
        y1: -400.0,
    };
    let masked = GroundTruth::new(
        gt.frames
            .iter()
            .map(|f| GtFrame {
                persons: f.persons.clone(),
                ignore: vec![ignore],
            })
            .collect(),
    )
    .unwrap();
    let report = mota(
        &with_spurious,
        &masked,
        PARTS,
        DEFAULT_ALPHA,
        Assignment::Greedy,
    );
    assert_eq!(report.total.false_positives, 0);
    assert_eq!(report.average(), 1.0);
    assert_eq!(
        ap_per_part(&with_spurious, &masked, PARTS, DEFAULT_ALPHA).mean,
        1.0
    );
}

#[test]
fn pckh_gate_is_boundary_inclusive() {
    let mut joints = std::collections::BTreeMap::new();
    joints.insert(0, Point::new(0.0, 0.0));
    let gt = GroundTruth::new(vec![GtFrame {
        persons: vec![GtPerson {
            id: 0,
            head_size: 10.0,
            joints,
        }],
        ignore: vec![],
    }])
    .unwrap();
    for (x, hit) in [(5.0, true), (5.000001, false)] {
        let mut t = TrackSet::default();
        t.insert(
            0,
            0,
            0,
            Joint {
                pos: Point::new(x, 0.0),
                score: 0.5,
            },
        )
        .unwrap();
        let r = mota(&t, &gt, 1, 0.5, Assignment::Greedy);
        assert_eq!(r.total.misses == 0, hit);
    }
}

#[test]
fn invalid_ground_truth_is_rejected() {
    let person = |id| GtPerson {
        id,
        head_size: 10.0,
        joints: Default::default(),
    };
    assert!(GroundTruth::new(vec![GtFrame {
        persons: vec![person(1), person(1)],
        ignore: vec![]
    }])
    .is_err());
    let mut zero = person(0);
    zero.head_size = 0.0;
    assert!(GroundTruth::new(vec![GtFrame {
        persons: vec![zero],
        ignore: vec![]
    }])
    .is_err());
}
