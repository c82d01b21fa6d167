use std::collections::BTreeSet;
use std::sync::OnceLock;

use posetrack::builder::{
    build_bu, build_tdbu, BuildOptions, Connectivity, CostModels, ModelTrainingOptions,
    SparsityPattern,
};
use posetrack::model::{CostSign, Edge, EdgeKind, NodeId, Point};
use posetrack::pipeline::train_default_models;
use posetrack::synth::{generate_scene, SynthConfig, SynthScene};

fn models() -> &'static CostModels {
    static M: OnceLock<CostModels> = OnceLock::new();
    M.get_or_init(|| train_default_models(&ModelTrainingOptions::default()).unwrap())
}

fn scene(seed: u64) -> SynthScene {
    generate_scene(&SynthConfig {
        persons: 3,
        frames: 5,
        noise_sigma: 3.0,
        miss_rate: 0.1,
        clutter_rate: 0.1,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

const OPTS: BuildOptions = BuildOptions {
    temporal_gate: 50.0,
    sign: CostSign::Negated,
};

#[test]
fn full_graph_has_every_within_frame_pair() {
    let s = scene(1);
    let g = build_bu(&s.sequence, models(), &Connectivity::Full, &s.inputs, &OPTS).unwrap();
    let mut cross = 0;
    let mut same = 0;
    for ids in s.sequence.frames() {
        for (k, &a) in ids.iter().enumerate() {
            for &b in &ids[k + 1..] {
                if s.sequence.detection(a).part == s.sequence.detection(b).part {
                    same += 1;
                } else {
                    cross += 1;
                }
            }
        }
    }
    assert_eq!(g.count_edges(EdgeKind::CrossType), cross);
    assert_eq!(g.count_edges(EdgeKind::SameType), same);

    let mut temporal = 0;
    for a in &s.sequence.detections {
        for b in &s.sequence.detections {
            if b.frame == a.frame + 1
                && a.part == b.part
                && a.pos.distance(&b.pos) <= OPTS.temporal_gate
            {
                temporal += 1;
            }
        }
    }
    assert_eq!(g.count_edges(EdgeKind::Temporal), temporal);
    g.check_edge_kinds(&s.sequence.parts).unwrap();
}

#[test]
fn sparse_graph_keeps_only_tree_pairs() {
    let s = scene(2);
    let full = build_bu(&s.sequence, models(), &Connectivity::Full, &s.inputs, &OPTS).unwrap();
    let pattern = SparsityPattern::kinematic_tree(&s.sequence.parts).unwrap();
    let sparse = build_bu(
        &s.sequence,
        models(),
        &Connectivity::Sparse(pattern.clone()),
        &s.inputs,
        &OPTS,
    )
    .unwrap();

    let key = |e: &Edge| (e.u, e.v, e.kind);
    let full_edges: BTreeSet<_> = full.edges().iter().map(key).collect();
    assert!(sparse.edges().iter().all(|e| full_edges.contains(&key(e))));
    for e in full.edges() {
        let (pa, pb) = (
            s.sequence.detection(e.u).part,
            s.sequence.detection(e.v).part,
        );
        let in_sparse = sparse.edge_between(e.u, e.v).is_some();
        if e.kind == EdgeKind::CrossType {
            assert_eq!(in_sparse, pattern.contains(pa, pb));
        } else {
            assert!(in_sparse);
        }
    }
    assert!(sparse.edges().len() < full.edges().len());
}

#[test]
fn tdbu_graph_has_star_attachments_and_root_cuts() {
    let s = scene(3);
    let neck = s.sequence.parts.require("neck").unwrap();
    let roots: BTreeSet<NodeId> = s.attachments.iter().map(|a| a.root).collect();
    assert!(roots.iter().all(|&r| s.sequence.detection(r).part == neck));
    let roots: Vec<NodeId> = roots.into_iter().collect();
    let g = build_tdbu(
        &s.sequence,
        &roots,
        &s.attachments,
        models(),
        &s.inputs,
        &OPTS,
        0.0,
    )
    .unwrap();

    assert_eq!(g.count_edges(EdgeKind::CrossType), 0);
    assert_eq!(g.count_edges(EdgeKind::RootAttachment), s.attachments.len());
    for e in g
        .edges()
        .iter()
        .filter(|e| e.kind == EdgeKind::RootAttachment)
    {
        assert!(roots.contains(&e.u) ^ roots.contains(&e.v));
    }
    let mut expected_cuts = 0;
    for ids in s.sequence.frames() {
        let k = ids.iter().filter(|v| roots.contains(v)).count();
        expected_cuts += k * k.saturating_sub(1) / 2;
    }
    assert_eq!(g.must_cut().len(), expected_cuts);
    assert!(g.node_costs().iter().all(|&c| c == 0.0));
}

#[test]
fn tdbu_rejects_malformed_attachments() {
    let s = scene(4);
    let roots: Vec<NodeId> = s
        .attachments
        .iter()
        .map(|a| a.root)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut dup = s.attachments.clone();
    dup.push(dup[0]);
    assert!(build_tdbu(&s.sequence, &roots, &dup, models(), &s.inputs, &OPTS, 0.0).is_err());

    let mut bad_p = s.attachments.clone();
    bad_p[0].p = 1.0;
    assert!(build_tdbu(&s.sequence, &roots, &bad_p, models(), &s.inputs, &OPTS, 0.0).is_err());

    let mut not_root = s.attachments.clone();
    not_root[0].root = not_root[0].node;
    assert!(build_tdbu(
        &s.sequence,
        &roots,
        &not_root,
        models(),
        &s.inputs,
        &OPTS,
        0.0
    )
    .is_err());
}

#[test]
fn paper_sign_flips_every_cost() {
    let s = scene(5);
    let neg = build_bu(&s.sequence, models(), &Connectivity::Full, &s.inputs, &OPTS).unwrap();
    let lit = build_bu(
        &s.sequence,
        models(),
        &Connectivity::Full,
        &s.inputs,
        &BuildOptions {
            sign: CostSign::Literal,
            ..OPTS
        },
    )
    .unwrap();
    for (a, b) in neg.node_costs().iter().zip(lit.node_costs()) {
        assert!((a + b).abs() < 1e-12);
    }
    for (a, b) in neg.edges().iter().zip(lit.edges()) {
        assert_eq!((a.u, a.v), (b.u, b.v));
        assert!((a.cost + b.cost).abs() < 1e-12);
    }
}

#[test]
fn displaced_partner_costs_more() {
    // moving a wrist away from where its elbow predicts it raises the cost
    let s = scene(6);
    let m = models();
    let elbow = s.sequence.parts.require("r_elbow").unwrap();
    let wrist = s.sequence.parts.require("r_wrist").unwrap();
    let model = m.cross_model(elbow, wrist).unwrap();
    let e = s
        .sequence
        .detections
        .iter()
        .find(|d| d.part == elbow)
        .copied()
        .unwrap();
    let mut w = e;
    w.part = wrist;
    w.node_id = e.node_id + 1;
    assert_eq!((model.first, model.second), (elbow, wrist));
    let lo = model.offset;
    w.pos = Point::new(e.pos.x + lo.x, e.pos.y + lo.y);
    let near = model
        .logistic
        .cost(&model.features(&e, &w).unwrap(), CostSign::Negated)
        .unwrap();
    w.pos = Point::new(e.pos.x + lo.x + 80.0, e.pos.y + lo.y - 60.0);
    let far = model
        .logistic
        .cost(&model.features(&e, &w).unwrap(), CostSign::Negated)
        .unwrap();
    assert!(far > near);
    assert!(near < 0.0);
}
