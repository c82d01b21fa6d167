use std::path::Path;

use posetrack::builder::{
    build_bu, BuildOptions, Connectivity, ModelTrainingOptions, TemporalInputs,
};
use posetrack::error::Error;
use posetrack::io::*;
use posetrack::model::{CostSign, PartVocabulary};
use posetrack::pipeline::{track_sequence, train_default_models, SequenceConfig};
use posetrack::solver::{solve_local_search, SolverParams};
use posetrack::synth::{generate_scene, SynthConfig, SynthScene};

fn scene() -> SynthScene {
    generate_scene(&SynthConfig {
        persons: 2,
        frames: 4,
        noise_sigma: 2.0,
        miss_rate: 0.1,
        clutter_rate: 0.2,
        seed: 3,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn p() -> &'static Path {
    Path::new("test.jsonl")
}

fn parse_line(err: Error) -> usize {
    match err {
        Error::Parse { line, .. } => line,
        other => panic!("expected a parse error, got {other}"),
    }
}

#[test]
fn scene_files_round_trip() {
    let s = scene();
    let text = encode_detections(&s.sequence);
    let seq = decode_detections(p(), &text).unwrap();
    assert_eq!(seq, s.sequence);
    assert_eq!(encode_detections(&seq), text);

    let text = encode_descriptors(&s.inputs.descriptors);
    assert_eq!(
        decode_descriptors(p(), &text).unwrap(),
        s.inputs.descriptors
    );

    let text = encode_correspondences(&s.inputs);
    let mut inputs = TemporalInputs {
        descriptors: s.inputs.descriptors.clone(),
        ..Default::default()
    };
    decode_correspondences(p(), &text, &mut inputs).unwrap();
    assert_eq!(inputs, s.inputs);

    let text = encode_attachments(&s.attachments);
    assert_eq!(decode_attachments(p(), &text).unwrap(), s.attachments);

    let text = encode_ground_truth(&s.ground_truth, &s.sequence.parts);
    let (gt, vocab) = decode_ground_truth(p(), &text).unwrap();
    assert_eq!(gt, s.ground_truth);
    assert_eq!(vocab, s.sequence.parts);
}

#[test]
fn graph_solution_models_and_tracks_round_trip() {
    let s = scene();
    let models = train_default_models(&ModelTrainingOptions::default()).unwrap();
    let text = encode_models(&models, &s.sequence.parts);
    let (back, vocab) = decode_models(p(), &text).unwrap();
    assert_eq!(back, models);
    assert_eq!(vocab, s.sequence.parts);

    let g = build_bu(
        &s.sequence,
        &models,
        &Connectivity::Full,
        &s.inputs,
        &BuildOptions {
            temporal_gate: 60.0,
            sign: CostSign::Negated,
        },
    )
    .unwrap();
    let text = encode_graph(&g);
    let back = decode_graph(p(), &text).unwrap();
    assert_eq!(encode_graph(&back), text);
    assert_eq!(back.edges(), g.edges());
    assert_eq!(back.node_costs(), g.node_costs());

    let sol = solve_local_search(&g, &SolverParams::default()).unwrap();
    let text = encode_solution(&sol);
    assert_eq!(decode_solution(p(), &text).unwrap(), sol);

    let out = track_sequence(
        &s.sequence,
        &s.inputs,
        &s.attachments,
        &models,
        &SequenceConfig::default(),
    )
    .unwrap();
    let text = encode_tracks(&out.tracks, &s.sequence.parts);
    let (tracks, _) = decode_tracks(p(), &text).unwrap();
    assert_eq!(tracks, out.tracks);
    assert_eq!(encode_tracks(&tracks, &s.sequence.parts), text);
}

#[test]
fn header_only_file_is_an_empty_sequence() {
    let header = encode_detections(
        &posetrack::model::Sequence::new(PartVocabulary::mpii(), vec![], 0).unwrap(),
    );
    let seq = decode_detections(p(), &header).unwrap();
    assert!(seq.detections.is_empty());
    assert_eq!(seq.num_frames, 0);
}

#[test]
fn bad_records_name_their_line() {
    let s = scene();
    let text = encode_detections(&s.sequence);
    let mut lines: Vec<String> = text.lines().map(String::from).collect();

    let record: serde_json::Value = serde_json::from_str(&lines[1]).unwrap();
    let mut one = record.clone();
    one["score"] = 1.0.into();
    lines[1] = one.to_string();
    assert_eq!(
        parse_line(decode_detections(p(), &lines.join("\n")).unwrap_err()),
        2
    );

    let mut unknown = record.clone();
    unknown["part"] = "tail".into();
    lines[1] = unknown.to_string();
    let err = decode_detections(p(), &lines.join("\n")).unwrap_err();
    assert!(err.to_string().contains("tail"));

    unknown["part"] = "neck".into();
    unknown["colour"] = "red".into();
    lines[1] = unknown.to_string();
    assert_eq!(
        parse_line(decode_detections(p(), &lines.join("\n")).unwrap_err()),
        2
    );

    lines[1] = "{not json".into();
    assert_eq!(
        parse_line(decode_detections(p(), &lines.join("\n")).unwrap_err()),
        2
    );
}

#[test]
fn wrong_header_is_rejected() {
    assert_eq!(parse_line(decode_detections(p(), "").unwrap_err()), 1);
    let tracks_header = format!("{{\"format\":\"{TRACKS}\",\"version\":1,\"parts\":[\"a\"]}}");
    assert!(decode_detections(p(), &tracks_header).is_err());
    let future = format!("{{\"format\":\"{DETECTIONS}\",\"version\":99,\"parts\":[\"a\"]}}");
    let err = decode_detections(p(), &future).unwrap_err();
    assert!(err.to_string().contains("version"));
}

#[test]
fn scene_directory_round_trips_through_files() {
    let s = scene();
    let dir = tempfile::tempdir().unwrap();
    let paths = ScenePaths::in_dir(dir.path());
    write_text(&paths.detections, &encode_detections(&s.sequence)).unwrap();
    let text = read_text(&paths.detections).unwrap();
    assert_eq!(
        decode_detections(&paths.detections, &text).unwrap(),
        s.sequence
    );
    assert!(matches!(
        read_text(&dir.path().join("missing.jsonl")),
        Err(Error::Io { .. })
    ));
}
