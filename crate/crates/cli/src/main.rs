use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use stmrf::energy::{decoupled_energy, fusion_objective};
use stmrf::eval::{render_records, render_table, score_object, Score};
use stmrf::infer::{run_inference, AblationMode, TraceEntry};
use stmrf::init::initialize_sequence;
use stmrf::refine::{ExemplarRefiner, ExternalRefiner, IdentityRefiner, OracleRefiner};
use stmrf::synth::{corrupt_sequence, crossing_scene, generate_sequence, SceneSpec};
use stmrf::{
    build_temporal_graph, EnergyBreakdown, FlowField, ImageFrame, LabelField, LikelihoodField,
    Refiner, RefinerKind, SoftMask, TemporalGraph,
};
use stmrf_cli::config::{self, Config};
use stmrf_cli::dataset::{read_object_masks, write_object_masks, ObjectMasks, SequenceDir};
use stmrf_cli::InputError;

#[derive(Parser)]
#[command(
    name = "stmrf",
    version,
    about = "Video object label propagation with a spatio-temporal MRF"
)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sequence directory.
    Synth(SynthArgs),
    /// Propagate first-frame masks through a sequence.
    Infer(InferArgs),
    /// Report temporal-graph statistics.
    Graph(GraphArgs),
    /// Evaluate the energy of a labeling.
    Energy(EnergyArgs),
    /// Score predicted masks against ground truth.
    Eval(EvalArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Sequence directory.
    sequence: PathBuf,
    /// TOML parameter file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// tf-only, mr-only or tf-mr.
    #[arg(long)]
    mode: Option<String>,
    /// identity, oracle, exemplar or external.
    #[arg(long)]
    refiner: Option<String>,
    /// External refiner address: host:port, tcp://host:port or exec:<command>.
    #[arg(long)]
    endpoint: Option<String>,
}

impl RunArgs {
    fn config(&self) -> Result<Config> {
        let mut cfg = config::load(self.config.as_deref())?;
        if let Some(m) = &self.mode {
            cfg.mode = config::parse_mode(m)?;
        }
        if let Some(r) = &self.refiner {
            cfg.refiner = Some(config::parse_refiner(r)?);
        }
        if let Some(e) = &self.endpoint {
            cfg.endpoint = Some(config::parse_endpoint(e)?);
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Scene description (JSON, or TOML with a .toml extension). Without it
    /// a two-object crossing scene is generated.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Directory to create.
    #[arg(long)]
    out: PathBuf,
    /// Fraction of response pixels flipped relative to ground truth.
    #[arg(long, default_value_t = 0.0)]
    flip_rate: f64,
    /// Seed for the scene texture and the response corruption.
    #[arg(long)]
    seed: Option<u64>,
    /// Frame size of the built-in crossing scene.
    #[arg(long, default_value_t = 128)]
    size: usize,
    /// Frame count of the built-in crossing scene.
    #[arg(long, default_value_t = 20)]
    frames: usize,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Output directory for masks and the energy trace.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GraphArgs {
    /// Sequence directory.
    sequence: PathBuf,
    /// TOML parameter file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write every edge as a JSON line to this file.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args)]
struct EnergyArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Labeling to audit, in the mask layout; defaults to the sequence's gt/.
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted masks: one sequence's mask directory, or a directory of sequences.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth masks in the same arrangement as --pred.
    #[arg(long)]
    gt: PathBuf,
    /// Boundary tolerance in pixels; defaults to 0.8% of the image diagonal.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Also score the first (annotated) frame.
    #[arg(long)]
    include_first: bool,
    /// Print JSON lines instead of a table.
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Graph(a) => cmd_graph(a),
        Command::Energy(a) => cmd_energy(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("STMRF_THREADS") else {
        return Ok(());
    };
    let n: usize = value.trim().parse().map_err(|_| {
        InputError::Config(format!(
            "STMRF_THREADS must be a positive integer, got {value:?}"
        ))
    })?;
    if n == 0 {
        bail!(InputError::Config(
            "STMRF_THREADS must be at least 1".into()
        ));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()?;
    Ok(())
}

/// 3 for refiner or protocol failures, 2 for bad or missing inputs, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    let engine = || err.chain().filter_map(|c| c.downcast_ref::<stmrf::Error>());
    if engine().any(stmrf::Error::is_refiner_failure) {
        return 3;
    }
    let bad_input = err.chain().any(|c| c.is::<InputError>())
        || engine().any(|e| {
            matches!(
                e,
                stmrf::Error::Configuration(_) | stmrf::Error::Specification(_)
            )
        });
    if bad_input {
        2
    } else {
        1
    }
}

fn read_spec(path: &Path) -> Result<SceneSpec> {
    let text = fs::read_to_string(path)
        .map_err(|e| InputError::Missing(format!("scene spec {}: {e}", path.display())))?;
    let parsed = if path.extension().and_then(|e| e.to_str()) == Some("toml") {
        toml::from_str(&text).map_err(|e| e.message().to_owned())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| InputError::Config(format!("scene spec {}: {e}", path.display())).into())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let spec = match &args.spec {
        Some(path) => {
            let mut spec = read_spec(path)?;
            if let Some(seed) = args.seed {
                spec.seed = seed;
            }
            spec
        }
        None => crossing_scene(args.seed.unwrap_or(0), args.size, args.frames),
    };
    let seq = generate_sequence(&spec)?;
    let responses = corrupt_sequence(&seq.gt, args.flip_rate, spec.seed)?;
    let dir = SequenceDir::new(&args.out);
    dir.write_synthetic(&seq, &responses)?;
    fs::write(
        args.out.join("scene.json"),
        serde_json::to_string_pretty(&spec)? + "\n",
    )?;
    info!(
        "wrote {} frames, {} objects, {} occluded links to {}",
        seq.frames.len(),
        seq.object_ids.len(),
        seq.occlusions.len(),
        args.out.display()
    );
    Ok(())
}

/// Everything inference and the energy audit need, loaded from disk.
struct Problem {
    name: String,
    frames: Vec<ImageFrame>,
    object_ids: Vec<u32>,
    first_gt: Vec<LabelField>,
    gt: ObjectMasks,
    flows: Vec<FlowField>,
    graph: TemporalGraph,
    init: Vec<Vec<LabelField>>,
    likelihoods: Vec<Vec<LikelihoodField>>,
}

impl Problem {
    fn load(dir: &SequenceDir, cfg: &Config) -> Result<Self> {
        let frames = dir.frames()?;
        let (count, dims) = (frames.len(), frames[0].dims());
        let gt = dir.gt()?;
        let mut object_ids = Vec::new();
        let mut first_gt = Vec::new();
        for (&id, masks) in &gt {
            let first = masks.get(&0).ok_or_else(|| {
                InputError::Missing(format!("first-frame ground truth for object {id}"))
            })?;
            object_ids.push(id);
            first_gt.push(first.clone());
        }
        if object_ids.is_empty() {
            bail!(InputError::Missing(format!(
                "no objects in {}",
                dir.root.join("gt").display()
            )));
        }
        let flows = dir.flows(count)?;
        let graph = build_temporal_graph(&flows, cfg.params.fb_tolerance, dims, count)?;
        let responses = dir.responses(&object_ids, count)?;
        let mut init = Vec::new();
        let mut likelihoods = Vec::new();
        for (resp, first) in responses.iter().zip(&first_gt) {
            let (x, lik) = initialize_sequence(resp, &flows, first, &cfg.params)
                .with_context(|| format!("initializing object {}", first.object_id()))?;
            init.push(x);
            likelihoods.push(lik);
        }
        Ok(Problem {
            name: dir.name(),
            frames,
            object_ids,
            first_gt,
            gt,
            flows,
            graph,
            init,
            likelihoods,
        })
    }

    /// Ground truth for every frame of every object, if the sequence has it.
    fn full_gt(&self) -> Option<Vec<Vec<LabelField>>> {
        self.object_ids
            .iter()
            .map(|id| {
                (0..self.frames.len())
                    .map(|t| self.gt[id].get(&t).cloned())
                    .collect()
            })
            .collect()
    }

    fn refiner(&self, cfg: &Config, kind: RefinerKind) -> Result<Box<dyn Refiner>> {
        Ok(match kind {
            RefinerKind::Identity => Box::new(IdentityRefiner),
            RefinerKind::Oracle => {
                let gt = self.full_gt().ok_or_else(|| {
                    InputError::Missing(
                        "the oracle refiner needs ground truth for every frame".into(),
                    )
                })?;
                Box::new(OracleRefiner::new(gt.into_iter().flatten()))
            }
            RefinerKind::Exemplar => Box::new(ExemplarRefiner::build(
                &self.frames[0],
                &self.first_gt,
                cfg.exemplar,
            )?),
            RefinerKind::External => {
                let endpoint = cfg.endpoint.as_ref().ok_or_else(|| {
                    InputError::Config("the external refiner needs --endpoint".into())
                })?;
                Box::new(ExternalRefiner::connect_pool(
                    endpoint,
                    cfg.refiner_connections,
                    cfg.refiner_timeout,
                )?)
            }
        })
    }
}

#[derive(Serialize)]
struct TraceReport<'a> {
    sequence: &'a str,
    mode: AblationMode,
    refiner: RefinerKind,
    complete: bool,
    error: Option<String>,
    trace: &'a [TraceEntry],
}

fn cmd_infer(args: InferArgs) -> Result<()> {
    let cfg = args.run.config()?;
    let dir = SequenceDir::new(&args.run.sequence);
    let problem = Problem::load(&dir, &cfg)?;
    let kind = cfg.refiner.unwrap_or(RefinerKind::Exemplar);
    let refiner = problem.refiner(&cfg, kind)?;
    info!(
        "{}: {} frames, {} objects, {} temporal edges, mode {}, refiner {kind:?}",
        problem.name,
        problem.frames.len(),
        problem.object_ids.len(),
        problem.graph.edge_count(),
        cfg.mode
    );
    fs::create_dir_all(&args.out)?;
    let result = run_inference(
        &problem.init,
        &problem.frames,
        &problem.graph,
        &problem.likelihoods,
        refiner.as_ref(),
        &cfg.params,
        cfg.mode,
    );
    let (trace, outcome) = match result {
        Ok(out) => (out.state.energy_trace.clone(), Ok(out.masks)),
        Err(f) => (f.energy_trace, Err(f.error)),
    };
    let report = TraceReport {
        sequence: &problem.name,
        mode: cfg.mode,
        refiner: kind,
        complete: outcome.is_ok(),
        error: outcome.as_ref().err().map(|e| e.to_string()),
        trace: &trace,
    };
    fs::write(
        args.out.join("energy_trace.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    let masks = outcome?;
    write_object_masks(&args.out.join("masks"), &masks)?;
    for e in &trace {
        info!(
            "iteration {} beta {:.4} total energy {:.6}",
            e.iteration, e.beta, e.total.total
        );
    }
    if let Some(gt) = problem.full_gt() {
        let scores = masks
            .iter()
            .zip(&gt)
            .map(|(pred, gt)| score_object(&problem.name, pred, gt, None, &[0]))
            .collect::<stmrf::Result<Vec<_>>>()?;
        print!("{}", render_table(&scores)?);
    }
    Ok(())
}

fn cmd_graph(args: GraphArgs) -> Result<()> {
    let cfg = config::load(args.config.as_deref())?;
    let dir = SequenceDir::new(&args.sequence);
    let frames = dir.frames()?;
    let (count, dims) = (frames.len(), frames[0].dims());
    let flows = dir.flows(count)?;
    let graph = build_temporal_graph(&flows, cfg.params.fb_tolerance, dims, count)?;
    let stats = graph.stats();
    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "frames {count}, {}x{}, tau {}",
        dims.width, dims.height, cfg.params.fb_tolerance
    )?;
    writeln!(
        out,
        "{:>5}  {:>9}  {:>9}  {:>9}  {:>13}",
        "step", "examined", "pruned", "outside", "edges"
    )?;
    let edges = graph.edge_counts_by_step();
    for (&step, &examined) in &stats.examined {
        let outside = stats.out_of_bounds.get(&step).copied().unwrap_or(0);
        let undirected = if step > 0 {
            edges.get(&(step as usize)).copied().unwrap_or(0)
        } else {
            0
        };
        let shown = if step > 0 {
            undirected.to_string()
        } else {
            "-".into()
        };
        writeln!(
            out,
            "{step:>+5}  {examined:>9}  {:>9}  {outside:>9}  {shown:>13}",
            stats.pruned_count(step)
        )?;
    }
    writeln!(
        out,
        "edges {}, matching conflicts {}",
        graph.edge_count(),
        stats.conflicts
    )?;
    writeln!(out, "pruned fraction {:.6}", stats.pruned_fraction())?;
    writeln!(out, "max temporal links per pixel {}", graph.max_degree())?;
    let mut histogram: BTreeMap<u64, usize> = BTreeMap::new();
    for e in graph.edges() {
        *histogram.entry(e.weight.to_bits()).or_insert(0) += 1;
    }
    writeln!(out, "weight histogram")?;
    for (bits, n) in histogram.iter().rev() {
        writeln!(out, "  {:.6}  {n}", f64::from_bits(*bits))?;
    }
    if let Some(path) = &args.dump {
        let mut file = std::io::BufWriter::new(fs::File::create(path)?);
        for e in graph.edges() {
            serde_json::to_writer(&mut file, e)?;
            writeln!(file)?;
        }
        file.flush()?;
    }
    Ok(())
}

fn cmd_energy(args: EnergyArgs) -> Result<()> {
    let cfg = args.run.config()?;
    let dir = SequenceDir::new(&args.run.sequence);
    let problem = Problem::load(&dir, &cfg)?;
    let labels_dir = args.labels.clone().unwrap_or_else(|| dir.root.join("gt"));
    let labels = read_object_masks(&labels_dir)?;
    let refiner = cfg.refiner.map(|k| problem.refiner(&cfg, k)).transpose()?;
    let beta = cfg.params.beta0;
    let mut rows: Vec<(String, &str, EnergyBreakdown)> = Vec::new();
    let mut totals: BTreeMap<&str, EnergyBreakdown> = BTreeMap::new();
    for (o, &id) in problem.object_ids.iter().enumerate() {
        let x: Vec<LabelField> = (0..problem.frames.len())
            .map(|t| {
                labels
                    .get(&id)
                    .and_then(|m| m.get(&t))
                    .cloned()
                    .ok_or_else(|| {
                        InputError::Missing(format!(
                            "label for object {id}, frame {t} in {}",
                            labels_dir.display()
                        ))
                    })
            })
            .collect::<Result<_, _>>()?;
        let y: Vec<SoftMask> = x.iter().map(LabelField::to_soft).collect();
        let lik = &problem.likelihoods[o];
        let mut parts = Vec::new();
        match &refiner {
            Some(r) => {
                parts.push((
                    "decoupled",
                    decoupled_energy(
                        &x,
                        &y,
                        &problem.graph,
                        lik,
                        &problem.frames,
                        r.as_ref(),
                        &cfg.params,
                        beta,
                    )?,
                ));
                parts.push((
                    "full",
                    stmrf::energy::full_energy(
                        &x,
                        &problem.graph,
                        lik,
                        &problem.frames,
                        r.as_ref(),
                        &cfg.params,
                    )?,
                ));
            }
            None => parts.push((
                "decoupled",
                fusion_objective(&x, &y, &problem.graph, lik, &cfg.params, beta)?,
            )),
        }
        for (name, e) in parts {
            let acc = totals.entry(name).or_default();
            *acc = acc.combine(&e);
            rows.push((id.to_string(), name, e));
        }
    }
    for (name, e) in totals {
        rows.push(("all".into(), name, e));
    }
    let mut out = std::io::stdout().lock();
    writeln!(out, "labels {}, beta {beta}, y = x", labels_dir.display())?;
    if refiner.is_none() {
        writeln!(out, "no refiner configured: spatial term not evaluated")?;
    }
    writeln!(
        out,
        "{:>6}  {:>9}  {:>14}  {:>14}  {:>14}  {:>14}  {:>14}",
        "object", "energy", "unary", "temporal", "coupling", "spatial", "total"
    )?;
    for (who, name, e) in rows {
        writeln!(
            out,
            "{who:>6}  {name:>9}  {:>14.6}  {:>14.6}  {:>14.6}  {:>14.6}  {:>14.6}",
            e.unary, e.temporal, e.coupling, e.spatial, e.total
        )?;
    }
    if problem.flows.is_empty() {
        warn!("sequence has no flow files; temporal term is zero");
    }
    Ok(())
}

/// A mask directory is either one sequence (numeric object subdirectories or
/// index images) or a set of named sequence directories.
fn sequence_dirs(root: &Path, prefer: &str) -> Result<Vec<(String, PathBuf)>> {
    if !root.is_dir() {
        bail!(InputError::Missing(format!("directory {}", root.display())));
    }
    let mut named = Vec::new();
    let mut single = false;
    for entry in fs::read_dir(root)? {
        let path = entry?.path();
        let name = path
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        if path.is_dir() && name.parse::<u32>().is_err() {
            let inner = path.join(prefer);
            named.push((name, if inner.is_dir() { inner } else { path }));
        } else {
            single = true;
        }
    }
    if single || named.is_empty() {
        let name = SequenceDir::new(root).name();
        return Ok(vec![(name, root.to_path_buf())]);
    }
    named.sort();
    Ok(named)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let gt_dirs = sequence_dirs(&args.gt, "gt")?;
    let pred_dirs: BTreeMap<String, PathBuf> =
        sequence_dirs(&args.pred, "masks")?.into_iter().collect();
    let single = gt_dirs.len() == 1 && pred_dirs.len() == 1;
    let skip: &[usize] = if args.include_first { &[] } else { &[0] };
    let mut scores: Vec<Score> = Vec::new();
    for (name, gt_dir) in &gt_dirs {
        let pred_dir = if single {
            pred_dirs.values().next().unwrap()
        } else {
            pred_dirs
                .get(name)
                .ok_or_else(|| InputError::Missing(format!("predictions for sequence {name}")))?
        };
        let gt = read_object_masks(gt_dir)?;
        let pred = read_object_masks(pred_dir)?;
        for (id, gt_frames) in &gt {
            let frames: Vec<usize> = gt_frames.keys().copied().collect();
            let p: Vec<LabelField> = frames
                .iter()
                .map(|t| {
                    pred.get(id).and_then(|m| m.get(t)).cloned().ok_or_else(|| {
                        InputError::Missing(format!(
                            "prediction for {name}, object {id}, frame {t}"
                        ))
                    })
                })
                .collect::<Result<_, _>>()?;
            let g: Vec<LabelField> = gt_frames.values().cloned().collect();
            let positions: Vec<usize> = frames
                .iter()
                .enumerate()
                .filter(|(_, t)| skip.contains(t))
                .map(|(i, _)| i)
                .collect();
            scores.push(score_object(name, &p, &g, args.tolerance, &positions)?);
        }
        for id in pred.keys().filter(|id| !gt.contains_key(id)) {
            warn!("{name}: object {id} has predictions but no ground truth; ignored");
        }
    }
    if args.json {
        print!("{}", render_records(&scores));
    } else {
        print!("{}", render_table(&scores)?);
    }
    Ok(())
}
