mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::bail;
use clap::{Args, Parser, Subcommand};
use posetrack::builder::{
    build_bu, build_tdbu, estimate_head_size, train_cost_models, BuildOptions, CostModels,
    FeatureSet, ModelTrainingOptions, SparsityPattern, TemporalInputs, KINEMATIC_TREE,
};
use posetrack::eval::{ap_per_part, label_detections, mota, Assignment};
use posetrack::io::{self, ScenePaths};
use posetrack::model::{objective, validate, CostSign, ProblemGraph, Sequence};
use posetrack::pipeline::{track_sequence, train_default_models, ModelVariant};
use posetrack::solver::{solve_best_of_seeds, solve_exact, solve_local_search};
use posetrack::synth::generate_scene;
use posetrack::temporal::RegionSpec;
use posetrack::Error;
use serde_json::{json, Map, Value};

use crate::config::FileConfig;

/// Articulated multi-person pose tracking by subgraph multicut.
#[derive(Parser, Debug)]
#[command(name = "posetrack", version)]
struct Cli {
    /// Model variant.
    #[arg(long, global = true, value_parser = parse_variant)]
    model: Option<ModelVariant>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the solver and the synthetic generator.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Temporal features, any subset of l2,sift,dm.
    #[arg(long, global = true)]
    features: Option<String>,
    /// Use log(p/(1-p)) as cost instead of its negation.
    #[arg(long, global = true)]
    paper_sign: bool,
    /// Optimal instead of greedy joint assignment in MOTA.
    #[arg(long, global = true)]
    hungarian: bool,
    /// Also write the run summary to this file.
    #[arg(long, global = true)]
    summary: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

fn parse_variant(s: &str) -> Result<ModelVariant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the problem graph of a scene without head-track constraints.
    BuildGraph {
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        models: ModelArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve a problem graph.
    Solve {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Force exact enumeration.
        #[arg(long, conflicts_with = "local")]
        exact: bool,
        /// Force local search.
        #[arg(long)]
        local: bool,
        /// Local search restarts; seeds are consecutive from --seed.
        #[arg(long, default_value_t = 1)]
        restarts: u64,
    },
    /// Track all persons in a scene.
    Track {
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        models: ModelArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-part average precision of tracked poses.
    EvalAp {
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Per-joint MOTA of tracks.
    EvalMota {
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Fit the pairwise cost models on annotated scenes.
    TrainPairwise {
        /// Scene directories with ground truth; defaults to a built-in
        /// synthetic suite.
        #[arg(long)]
        scene: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic scene with ground truth.
    SynthGenerate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        persons: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        miss: Option<f64>,
        #[arg(long)]
        clutter: Option<f64>,
    },
    /// Compare local search against exact enumeration on a small graph.
    OracleCheck {
        #[arg(long)]
        graph: PathBuf,
    },
    /// Per-frame joint and bone geometry of tracks, for plotting.
    ExportOverlay {
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct SceneArgs {
    /// Directory with detections.jsonl and optional side files.
    #[arg(long)]
    scene: PathBuf,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Cost models; trained on the built-in synthetic suite when absent.
    #[arg(long)]
    models: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    tracks: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// PCKh threshold.
    #[arg(long)]
    alpha: Option<f64>,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Settings after merging the config file and command-line flags.
struct Settings {
    file: FileConfig,
    features: FeatureSet,
    /// Set when `--features` was given.
    explicit_features: Option<FeatureSet>,
}

impl Settings {
    fn new(cli: &Cli) -> anyhow::Result<Self> {
        let mut file = match &cli.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        if let Some(m) = cli.model {
            file.tracking.variant = m;
        }
        if let Some(s) = cli.seed {
            file.tracking.solver.seed = s;
            file.synth.seed = s;
        }
        if let Some(f) = &cli.features {
            file.training.features = f.clone();
        }
        if cli.paper_sign {
            file.tracking.sign = CostSign::Literal;
        }
        if cli.hungarian {
            file.eval.assignment = Assignment::Hungarian;
        }
        let features = FeatureSet::parse(&file.training.features)?;
        Ok(Settings {
            file,
            features,
            explicit_features: cli.features.as_ref().map(|_| features),
        })
    }

    fn training_options(&self) -> anyhow::Result<ModelTrainingOptions> {
        let t = &self.file.training;
        Ok(ModelTrainingOptions {
            features: self.features,
            temporal_gate: t.temporal_gate,
            region: RegionSpec::new(t.region_side)?,
            train: t.optimizer(),
            ..Default::default()
        })
    }
}

struct Scene {
    sequence: Sequence,
    inputs: TemporalInputs,
    attachments: Vec<posetrack::builder::ConditionalAttachment>,
}

fn load_scene(dir: &Path) -> anyhow::Result<Scene> {
    let paths = ScenePaths::in_dir(dir);
    let sequence = io::read_detections(&paths.detections)?;
    let mut inputs = TemporalInputs::default();
    if paths.descriptors.exists() {
        inputs.descriptors = io::read_descriptors(&paths.descriptors)?;
    }
    if paths.correspondences.exists() {
        io::read_correspondences(&paths.correspondences, &mut inputs)?;
    }
    let attachments = if paths.attachments.exists() {
        io::read_attachments(&paths.attachments)?
    } else {
        Vec::new()
    };
    io::check_sidecars(&sequence, &inputs, &attachments)?;
    Ok(Scene {
        sequence,
        inputs,
        attachments,
    })
}

fn synthetic_training_suite(settings: &Settings) -> anyhow::Result<CostModels> {
    Ok(train_default_models(&settings.training_options()?)?)
}

fn load_models(
    args: &ModelArgs,
    settings: &Settings,
    seq: &Sequence,
    summary: &mut Summary,
) -> anyhow::Result<CostModels> {
    let Some(path) = &args.models else {
        return synthetic_training_suite(settings);
    };
    let (models, vocab) = io::read_models(path)?;
    summary.insert(
        "features".into(),
        json!(models.temporal_features()?.label()),
    );
    if vocab != seq.parts {
        bail!(Error::Config(format!(
            "{} was trained for a different part vocabulary",
            path.display()
        )));
    }
    if let Some(wanted) = settings.explicit_features {
        let have = models.temporal_features()?;
        if wanted != have {
            bail!(Error::Config(format!(
                "{} uses temporal features {}, but {} were requested",
                path.display(),
                have.label(),
                wanted.label()
            )));
        }
    }
    Ok(models)
}

type Summary = Map<String, Value>;

fn run(cli: &Cli, summary: &mut Summary) -> anyhow::Result<()> {
    let settings = Settings::new(cli)?;
    let cfg = &settings.file;
    summary.insert("model".into(), json!(cfg.tracking.variant.as_str()));
    summary.insert("features".into(), json!(settings.features.label()));
    summary.insert("seed".into(), json!(cfg.tracking.solver.seed));

    match &cli.command {
        Command::SynthGenerate {
            out,
            persons,
            frames,
            sigma,
            miss,
            clutter,
        } => {
            let mut sc = cfg.synth.clone();
            sc.persons = persons.unwrap_or(sc.persons);
            sc.frames = frames.unwrap_or(sc.frames);
            sc.noise_sigma = sigma.unwrap_or(sc.noise_sigma);
            sc.miss_rate = miss.unwrap_or(sc.miss_rate);
            sc.clutter_rate = clutter.unwrap_or(sc.clutter_rate);
            let started = Instant::now();
            let scene = generate_scene(&sc)?;
            let proposals = started.elapsed().as_secs_f64();
            std::fs::create_dir_all(out).map_err(|source| Error::Io {
                path: out.clone(),
                source,
            })?;
            let p = ScenePaths::in_dir(out);
            io::write_text(&p.detections, &io::encode_detections(&scene.sequence))?;
            io::write_text(
                &p.descriptors,
                &io::encode_descriptors(&scene.inputs.descriptors),
            )?;
            io::write_text(
                &p.correspondences,
                &io::encode_correspondences(&scene.inputs),
            )?;
            io::write_text(&p.attachments, &io::encode_attachments(&scene.attachments))?;
            io::write_text(
                &p.ground_truth,
                &io::encode_ground_truth(&scene.ground_truth, &scene.sequence.parts),
            )?;
            summary.insert("detections".into(), json!(scene.sequence.detections.len()));
            summary.insert("frames".into(), json!(scene.sequence.num_frames));
            summary.insert("persons".into(), json!(sc.persons));
            summary.insert("timings".into(), json!({ "proposals": proposals }));
        }

        Command::TrainPairwise { scene, out } => {
            let started = Instant::now();
            let models = if scene.is_empty() {
                synthetic_training_suite(&settings)?
            } else {
                let mut loaded = Vec::new();
                for dir in scene {
                    let s = load_scene(dir)?;
                    let (gt, _) = io::read_ground_truth(&ScenePaths::in_dir(dir).ground_truth)?;
                    let labels = label_detections(&s.sequence, &gt, cfg.eval.alpha);
                    loaded.push((s, labels));
                }
                let batch: Vec<_> = loaded
                    .iter()
                    .map(|(s, l)| (&s.sequence, l.as_slice(), &s.inputs))
                    .collect();
                train_cost_models(&batch, &settings.training_options()?)?
            };
            let vocab = posetrack::model::PartVocabulary::mpii();
            let vocab = match scene.first() {
                Some(dir) => io::read_detections(&ScenePaths::in_dir(dir).detections)?.parts,
                None => vocab,
            };
            io::write_text(out, &io::encode_models(&models, &vocab))?;
            summary.insert("cross_type_models".into(), json!(models.cross_type.len()));
            summary.insert(
                "timings".into(),
                json!({ "training": started.elapsed().as_secs_f64() }),
            );
        }

        Command::BuildGraph { scene, models, out } => {
            let started = Instant::now();
            let s = load_scene(&scene.scene)?;
            let proposals = started.elapsed().as_secs_f64();
            let models = load_models(models, &settings, &s.sequence, summary)?;
            let started = Instant::now();
            let g = build_unconstrained(&s, &models, cfg)?;
            let graph_time = started.elapsed().as_secs_f64();
            io::write_text(out, &io::encode_graph(&g))?;
            summary.insert("nodes".into(), json!(g.num_nodes()));
            summary.insert("edges".into(), json!(g.edges().len()));
            summary.insert(
                "timings".into(),
                json!({ "proposals": proposals, "graph": graph_time }),
            );
        }

        Command::Solve {
            graph,
            out,
            exact,
            local,
            restarts,
        } => {
            let started = Instant::now();
            let g = io::read_graph(graph)?;
            let proposals = started.elapsed().as_secs_f64();
            let params = &cfg.tracking.solver;
            let started = Instant::now();
            let (sol, method) = if *exact || (!*local && g.num_nodes() <= params.max_exact_nodes) {
                (solve_exact(&g, params)?, "exact")
            } else if *restarts > 1 {
                let seeds: Vec<u64> = (0..*restarts).map(|k| params.seed + k).collect();
                (solve_best_of_seeds(&g, params, &seeds)?, "local_search")
            } else {
                (solve_local_search(&g, params)?, "local_search")
            };
            let graph_time = started.elapsed().as_secs_f64();
            let violations = validate(&g, &sol);
            if let Some(v) = violations.first() {
                bail!("solver returned an infeasible solution: {v}");
            }
            io::write_text(out, &io::encode_solution(&sol.canonical()))?;
            summary.insert("method".into(), json!(method));
            summary.insert("objective".into(), json!(objective(&g, &sol)?));
            summary.insert("selected".into(), json!(sol.num_selected()));
            summary.insert("clusters".into(), json!(sol.clusters().len()));
            summary.insert(
                "timings".into(),
                json!({ "proposals": proposals, "graph": graph_time }),
            );
        }

        Command::OracleCheck { graph } => {
            let g = io::read_graph(graph)?;
            let params = &cfg.tracking.solver;
            let exact = solve_exact(&g, params)?;
            let local = solve_local_search(&g, params)?;
            let (oe, ol) = (objective(&g, &exact)?, objective(&g, &local)?);
            summary.insert("exact_objective".into(), json!(oe));
            summary.insert("local_objective".into(), json!(ol));
            summary.insert("objective".into(), json!(ol));
            summary.insert("gap".into(), json!(ol - oe));
            summary.insert("optimal".into(), json!((ol - oe).abs() <= 1e-9));
        }

        Command::Track { scene, models, out } => {
            let started = Instant::now();
            let s = load_scene(&scene.scene)?;
            let proposals = started.elapsed().as_secs_f64();
            let models = load_models(models, &settings, &s.sequence, summary)?;
            let result = track_sequence(
                &s.sequence,
                &s.inputs,
                &s.attachments,
                &models,
                &cfg.tracking,
            )?;
            io::write_text(out, &io::encode_tracks(&result.tracks, &s.sequence.parts))?;
            let frames = s.sequence.num_frames.max(1) as f64;
            summary.insert("objective".into(), json!(result.objective));
            summary.insert("persons".into(), json!(result.tracks.num_persons()));
            summary.insert("nodes".into(), json!(result.nodes));
            summary.insert("edges".into(), json!(result.edges));
            summary.insert("windows".into(), json!(result.windows));
            summary.insert(
                "timings".into(),
                json!({
                    "proposals": proposals,
                    "graph": result.timings.graph(),
                    "seed": result.timings.seed,
                    "build": result.timings.build,
                    "solve": result.timings.solve,
                    "graph_per_frame": result.timings.graph() / frames,
                }),
            );
        }

        Command::EvalAp { eval } => {
            let (tracks, vocab, gt) = load_eval(eval)?;
            let alpha = eval.alpha.unwrap_or(cfg.eval.alpha);
            let r = ap_per_part(&tracks, &gt, vocab.len(), alpha);
            let report = json!({
                "alpha": alpha,
                "per_part": named(&vocab, &r.per_part),
                "mean": r.mean,
            });
            emit_report(eval, &report)?;
            summary.insert("ap".into(), json!(r.mean));
        }

        Command::EvalMota { eval } => {
            let (tracks, vocab, gt) = load_eval(eval)?;
            let alpha = eval.alpha.unwrap_or(cfg.eval.alpha);
            let r = mota(&tracks, &gt, vocab.len(), alpha, cfg.eval.assignment);
            let per_part: Map<String, Value> = r
                .per_part
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    (
                        vocab.name(k).to_string(),
                        json!({
                            "misses": c.misses,
                            "false_positives": c.false_positives,
                            "id_switches": c.id_switches,
                            "gt": c.gt,
                            "mota": c.mota(),
                        }),
                    )
                })
                .collect();
            let report = json!({
                "alpha": alpha,
                "assignment": cfg.eval.assignment,
                "per_part": per_part,
                "total": {
                    "misses": r.total.misses,
                    "false_positives": r.total.false_positives,
                    "id_switches": r.total.id_switches,
                    "gt": r.total.gt,
                },
                "average": r.average(),
            });
            emit_report(eval, &report)?;
            summary.insert("mota".into(), json!(r.average()));
        }

        Command::ExportOverlay { tracks, out } => {
            let (t, vocab) = io::read_tracks(tracks)?;
            let bones: Vec<_> = KINEMATIC_TREE
                .iter()
                .filter_map(|(a, b)| Some((vocab.id_of(a)?, vocab.id_of(b)?)))
                .collect();
            io::write_text(out, &io::encode_overlay(&t, &vocab, &bones))?;
            summary.insert("persons".into(), json!(t.num_persons()));
        }
    }
    Ok(())
}

fn build_unconstrained(
    s: &Scene,
    models: &CostModels,
    cfg: &FileConfig,
) -> anyhow::Result<ProblemGraph> {
    let t = &cfg.tracking;
    let opts = BuildOptions {
        temporal_gate: t
            .temporal_gate
            .unwrap_or_else(|| 2.0 * estimate_head_size(&s.sequence, 30.0)),
        sign: t.sign,
    };
    let seq = &s.sequence;
    Ok(match t.variant {
        ModelVariant::Tdbu => {
            let mut roots: Vec<_> = s.attachments.iter().map(|a| a.root).collect();
            roots.sort_unstable();
            roots.dedup();
            build_tdbu(
                seq,
                &roots,
                &s.attachments,
                models,
                &s.inputs,
                &opts,
                t.tdbu_unary,
            )?
        }
        ModelVariant::BuFull => build_bu(
            seq,
            models,
            &posetrack::builder::Connectivity::Full,
            &s.inputs,
            &opts,
        )?,
        ModelVariant::BuSparse => {
            let pattern = match &t.sparsity {
                Some(p) => SparsityPattern::from_names(&seq.parts, p)?,
                None => SparsityPattern::kinematic_tree(&seq.parts)?,
            };
            build_bu(
                seq,
                models,
                &posetrack::builder::Connectivity::Sparse(pattern),
                &s.inputs,
                &opts,
            )?
        }
    })
}

fn load_eval(
    eval: &EvalArgs,
) -> anyhow::Result<(
    posetrack::pipeline::TrackSet,
    posetrack::model::PartVocabulary,
    posetrack::eval::GroundTruth,
)> {
    let (tracks, vocab) = io::read_tracks(&eval.tracks)?;
    let (gt, gt_vocab) = io::read_ground_truth(&eval.gt)?;
    if vocab != gt_vocab {
        bail!(Error::Config(
            "tracks and ground truth use different part vocabularies".into()
        ));
    }
    Ok((tracks, vocab, gt))
}

fn named(vocab: &posetrack::model::PartVocabulary, values: &[Option<f64>]) -> Map<String, Value> {
    values
        .iter()
        .enumerate()
        .map(|(k, v)| (vocab.name(k).to_string(), json!(v)))
        .collect()
}

fn emit_report(eval: &EvalArgs, report: &Value) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(report)? + "\n";
    if let Some(out) = &eval.out {
        io::write_text(out, &text)?;
    }
    print!("{text}");
    Ok(())
}

/// 1 usage or configuration, 2 malformed input, 3 infeasible constraints,
/// 4 anything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    if let Some(err) = e.downcast_ref::<Error>() {
        return match err {
            Error::Config(_) | Error::TooLarge { .. } | Error::Io { .. } => 1,
            Error::Parse { .. }
            | Error::Schema { .. }
            | Error::Domain { .. }
            | Error::Structure(_) => 2,
            Error::Infeasible { .. } => 3,
        };
    }
    4
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::BuildGraph { .. } => "build-graph",
        Command::Solve { .. } => "solve",
        Command::Track { .. } => "track",
        Command::EvalAp { .. } => "eval-ap",
        Command::EvalMota { .. } => "eval-mota",
        Command::TrainPairwise { .. } => "train-pairwise",
        Command::SynthGenerate { .. } => "synth-generate",
        Command::OracleCheck { .. } => "oracle-check",
        Command::ExportOverlay { .. } => "export-overlay",
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let text = e.to_string();
            let first = text
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("usage error");
            eprintln!("{}", first.trim());
            return ExitCode::from(1);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let started = Instant::now();
    let mut summary = Summary::new();
    summary.insert("command".into(), json!(command_name(&cli.command)));
    let result = run(&cli, &mut summary);
    summary.insert("elapsed".into(), json!(started.elapsed().as_secs_f64()));
    let code = match &result {
        Ok(()) => {
            summary.insert("status".into(), json!("ok"));
            0
        }
        Err(e) => {
            summary.insert("status".into(), json!("error"));
            summary.insert("error".into(), json!(format!("{e:#}")));
            exit_code(e)
        }
    };
    summary.insert("exit_code".into(), json!(code));
    let line = Value::Object(summary).to_string();
    // reports go to stdout, so the summary goes to stderr for those commands
    match &cli.command {
        Command::EvalAp { .. } | Command::EvalMota { .. } => eprintln!("{line}"),
        _ => println!("{line}"),
    }
    if let Some(path) = &cli.summary {
        if let Err(e) = std::fs::write(path, format!("{line}\n")) {
            eprintln!("error: cannot write summary to {}: {e}", path.display());
        }
    }
    if let Err(e) = &result {
        eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
    }
    ExitCode::from(code)
}
