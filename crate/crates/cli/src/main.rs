use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sparseemg::classifiers::{train, ClassifierKind, ClassifierSpec};
use sparseemg::dataset::{generate_synthetic, trials_of, write_dataset, Dataset, SyntheticSpec, TrialRecord};
use sparseemg::features::build_feature_matrix;
use sparseemg::selection::{rank, Scheme};
use sparseemg::stencil::{generate_stencil, ArmMeasurements, CircumferenceSample};
use sparseemg::sweep::{
    compare_band_vs_sparse, cross_user_eval, filter_gestures, run_grid, run_sweep, SparsityConfig, SweepOptions,
    SweepResult, DEFAULT_MAX_ELECTRODES,
};
use sparseemg::{ElectrodeId, GestureId};
use sparseemg_service::config::{ENV_DATA_DIR, ENV_MODEL_TTL_HOURS, ENV_PORT, ENV_WORKERS};

/// Sparse EMG electrode layout optimizer.
#[derive(Debug, Parser)]
#[command(name = "sparseemg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic ring dataset.
    Synth(SynthArgs),
    /// Rank electrodes of one user and export features.
    Rank(RankArgs),
    /// Sweep layout sizes and pick the sparsest good layout.
    Sweep(SweepArgs),
    /// Freeze one user's chosen layout and evaluate it on every user.
    Crossuser(CrossUserArgs),
    /// Compare an equally spaced band against the ranked layout of equal size.
    Bandcompare(BandArgs),
    /// Render a placement stencil for a layout.
    Stencil(StencilArgs),
    /// Run the HTTP/WebSocket service.
    Serve(ServeArgs),
    /// Sweep every scheme against every classifier.
    Bench(BenchArgs),
}

#[derive(Debug, Args, Serialize)]
struct Output {
    /// Root of the output tree; results go to <out>/<subcommand>/<name>.
    #[arg(long, default_value = "out")]
    #[serde(skip)]
    out: PathBuf,
    /// Run directory name; defaults to a UTC timestamp.
    #[arg(long)]
    #[serde(skip)]
    name: Option<String>,
    /// Cap on worker threads (default: one per core).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
struct Selection {
    /// Dataset directory or manifest path.
    #[arg(long)]
    data: PathBuf,
    /// Sessions to load (default: all).
    #[arg(long, value_delimiter = ',')]
    sessions: Vec<u32>,
    /// Gestures to keep (default: all).
    #[arg(long, value_delimiter = ',')]
    gestures: Vec<GestureId>,
    /// Candidate electrodes (default: all).
    #[arg(long, value_delimiter = ',')]
    candidates: Vec<ElectrodeId>,
}

#[derive(Debug, Args, Serialize)]
struct Method {
    #[arg(long, default_value = "PI")]
    #[serde(serialize_with = "display")]
    scheme: Scheme,
    #[arg(long, default_value = "RF")]
    #[serde(serialize_with = "display")]
    classifier: ClassifierKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn display<T: std::fmt::Display, S: serde::Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

#[derive(Debug, Args, Serialize)]
struct Weights {
    /// Weight on accuracy loss.
    #[arg(long, default_value_t = 0.5)]
    w1: f64,
    /// Weight on electrode count.
    #[arg(long, default_value_t = 0.5)]
    w2: f64,
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    #[arg(long, default_value_t = 16)]
    channels: usize,
    #[arg(long, default_value_t = 4)]
    gestures: usize,
    #[arg(long, default_value_t = 1)]
    users: usize,
    #[arg(long, default_value_t = 8)]
    trials: usize,
    #[arg(long, default_value_t = 300)]
    samples: usize,
    /// Informative channels (default: four channels off the band stride).
    #[arg(long, value_delimiter = ',')]
    informative: Option<Vec<ElectrodeId>>,
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args, Serialize)]
struct RankArgs {
    #[command(flatten)]
    selection: Selection,
    #[arg(long, default_value = "u0")]
    user: String,
    #[command(flatten)]
    method: Method,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args, Serialize)]
struct SweepArgs {
    #[command(flatten)]
    selection: Selection,
    #[arg(long, default_value = "u0")]
    user: String,
    #[command(flatten)]
    method: Method,
    /// Largest layout size to evaluate.
    #[arg(long = "max", default_value_t = DEFAULT_MAX_ELECTRODES)]
    max_electrodes: usize,
    #[command(flatten)]
    weights: Weights,
    /// Keep a confusion matrix for every layout size.
    #[arg(long)]
    keep_all_confusions: bool,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args, Serialize)]
struct CrossUserArgs {
    #[command(flatten)]
    selection: Selection,
    /// User whose sweep picks the layout.
    #[arg(long, default_value = "u0")]
    source: String,
    #[command(flatten)]
    method: Method,
    #[arg(long = "max", default_value_t = DEFAULT_MAX_ELECTRODES)]
    max_electrodes: usize,
    #[command(flatten)]
    weights: Weights,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args, Serialize)]
struct BandArgs {
    #[command(flatten)]
    selection: Selection,
    #[arg(long, default_value = "u0")]
    user: String,
    #[command(flatten)]
    method: Method,
    /// Electrodes in both layouts.
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args, Serialize)]
struct StencilArgs {
    /// Dataset directory or manifest path.
    #[arg(long)]
    data: PathBuf,
    /// Electrode ids to place.
    #[arg(long, value_delimiter = ',', required_unless_present = "result")]
    layout: Vec<ElectrodeId>,
    /// Take the chosen layout from a sweep's result.json.
    #[arg(long, conflicts_with = "layout")]
    result: Option<PathBuf>,
    /// Arm measurements JSON (forearm_length_mm, circumference_samples).
    #[arg(long, conflicts_with_all = ["length", "circumference", "wrist", "elbow"])]
    measurements: Option<PathBuf>,
    /// Forearm length, wrist crease to elbow, in mm.
    #[arg(long, required_unless_present = "measurements")]
    length: Option<f64>,
    /// Constant circumference in mm.
    #[arg(long, conflicts_with_all = ["wrist", "elbow"])]
    circumference: Option<f64>,
    /// Circumference at the wrist in mm (with --elbow).
    #[arg(long, requires = "elbow")]
    wrist: Option<f64>,
    /// Circumference at the elbow in mm (with --wrist).
    #[arg(long, requires = "wrist")]
    elbow: Option<f64>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, env = ENV_PORT, default_value_t = sparseemg_service::config::DEFAULT_PORT)]
    port: u16,
    /// Directory whose subdirectories hold datasets.
    #[arg(long, env = ENV_DATA_DIR, default_value = "data")]
    data_dir: PathBuf,
    /// Sweeps that may run at once.
    #[arg(long, env = ENV_WORKERS, default_value_t = sparseemg_service::config::DEFAULT_WORKERS)]
    workers: usize,
    /// Hours a trained model stays downloadable.
    #[arg(long, env = ENV_MODEL_TTL_HOURS, default_value_t = sparseemg_service::config::DEFAULT_MODEL_TTL_HOURS)]
    model_ttl_hours: f64,
    /// Where model artifacts are stored (default: <data-dir>/.models).
    #[arg(long)]
    model_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct BenchArgs {
    /// Dataset directory; a default synthetic set is generated when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "u0")]
    user: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "max", default_value_t = DEFAULT_MAX_ELECTRODES)]
    max_electrodes: usize,
    #[command(flatten)]
    weights: Weights,
    #[command(flatten)]
    output: Output,
}

/// Informative channels of the default synthetic set: four channels that do
/// not coincide with a 4-electrode band.
fn default_informative(channels: usize) -> Vec<ElectrodeId> {
    let mut v: Vec<ElectrodeId> = [channels / 8, 5 * channels / 16, 9 * channels / 16, 13 * channels / 16]
        .into_iter()
        .filter(|&c| c < channels)
        .collect();
    v.dedup();
    v
}

struct Run {
    dir: PathBuf,
}

impl Run {
    fn create(command: &str, output: &Output) -> Result<Self> {
        let name = match &output.name {
            Some(n) => n.clone(),
            None => timestamp(),
        };
        let dir = output.out.join(command).join(name);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir })
    }

    fn write(&self, file: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.dir.join(file);
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }

    fn record<T: Serialize>(&self, command: &str, config: &T, outputs: &[&str]) -> Result<()> {
        let run = serde_json::json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "outputs": outputs,
        });
        self.write("run.json", serde_json::to_string_pretty(&run)? + "\n")
    }
}

fn timestamp() -> String {
    let format = time::macros::format_description!("[year][month][day]T[hour][minute][second]Z");
    time::OffsetDateTime::now_utc().format(&format).expect("timestamp formats")
}

fn load(selection: &Selection, user: &str) -> Result<(Dataset, Vec<TrialRecord>, Vec<ElectrodeId>)> {
    let dataset = Dataset::open(&selection.data)?;
    let sessions = if selection.sessions.is_empty() {
        dataset.manifest.sessions()
    } else {
        selection.sessions.clone()
    };
    let trials = filter_gestures(&dataset.load_trials(user, &sessions)?, &selection.gestures)?;
    let candidates = candidates(&dataset, selection);
    Ok((dataset, trials, candidates))
}

fn candidates(dataset: &Dataset, selection: &Selection) -> Vec<ElectrodeId> {
    if selection.candidates.is_empty() {
        dataset.manifest.electrode_ids()
    } else {
        selection.candidates.clone()
    }
}

fn sweep_options(max: usize, seed: u64, output: &Output) -> SweepOptions {
    let opts = SweepOptions::new(max, seed);
    match output.workers {
        Some(w) => opts.with_workers(w),
        None => opts,
    }
}

fn synth(args: &SynthArgs) -> Result<String> {
    let spec = SyntheticSpec {
        channel_count: args.channels,
        gesture_count: args.gestures,
        users: args.users,
        trials_per_gesture: args.trials,
        samples_per_trial: args.samples,
        informative_channels: args.informative.clone().unwrap_or_else(|| default_informative(args.channels)),
        noise_sigma: args.sigma,
        seed: args.seed,
    };
    let (manifest, trials) = generate_synthetic(&spec)?;
    let run = Run::create("synth", &args.output)?;
    write_dataset(&run.dir.join("dataset"), &manifest, &trials)?;
    run.record("synth", &spec, &["dataset/manifest.json"])?;
    Ok(format!(
        "synth: {} trials, {} channels, informative {:?} -> {}",
        trials.len(),
        manifest.channel_count,
        spec.informative_channels,
        run.dir.join("dataset").display()
    ))
}

fn rank_cmd(args: &RankArgs) -> Result<String> {
    let (_, trials, candidates) = load(&args.selection, &args.user)?;
    let features = build_feature_matrix(&trials, &candidates)?;
    let spec = ClassifierSpec::new(args.method.classifier, args.method.seed);
    let ranking = rank(args.method.scheme, &features, &spec, args.method.seed)?;
    let run = Run::create("rank", &args.output)?;
    run.write("ranking.csv", ranking.to_csv())?;
    run.write("features.csv", features.to_csv())?;
    run.record("rank", args, &["ranking.csv", "features.csv"])?;
    Ok(format!(
        "rank: {} top 5 {:?} -> {}",
        args.method.scheme,
        ranking.top(5),
        run.dir.display()
    ))
}

fn sweep_cmd(args: &SweepArgs) -> Result<String> {
    let (_, trials, candidates) = load(&args.selection, &args.user)?;
    let spec = ClassifierSpec::new(args.method.classifier, args.method.seed);
    let cfg = SparsityConfig::new(args.weights.w1, args.weights.w2)?;
    let mut opts = sweep_options(args.max_electrodes, args.method.seed, &args.output);
    opts.keep_all_confusions = args.keep_all_confusions;
    let result = run_sweep(&trials, &candidates, args.method.scheme, &spec, &cfg, &opts)?;
    let model = train(&spec, &build_feature_matrix(&trials, &result.chosen.electrodes)?)?;
    let run = Run::create("sweep", &args.output)?;
    run.write("curve.csv", result.curve_csv())?;
    run.write("ranking.csv", result.ranking.to_csv())?;
    run.write("result.json", result.to_json())?;
    model.save(run.dir.join("model.json"))?;
    run.record("sweep", args, &["curve.csv", "ranking.csv", "result.json", "model.json"])?;
    Ok(format!(
        "sweep: chosen E={} accuracy={:.2}% score={:.2} layout {:?} -> {}",
        result.chosen.electrode_count,
        result.chosen.accuracy,
        result.chosen.sparsity_score,
        result.chosen.electrodes,
        run.dir.display()
    ))
}

fn crossuser_cmd(args: &CrossUserArgs) -> Result<String> {
    let dataset = Dataset::open(&args.selection.data)?;
    let sessions = if args.selection.sessions.is_empty() {
        dataset.manifest.sessions()
    } else {
        args.selection.sessions.clone()
    };
    let users = dataset
        .manifest
        .users
        .iter()
        .map(|u| Ok((u.clone(), dataset.load_trials(u, &sessions)?)))
        .collect::<Result<Vec<_>>>()?;
    let spec = ClassifierSpec::new(args.method.classifier, args.method.seed);
    let cfg = SparsityConfig::new(args.weights.w1, args.weights.w2)?;
    let opts = sweep_options(args.max_electrodes, args.method.seed, &args.output).with_gestures(args.selection.gestures.clone());
    let report = cross_user_eval(
        &users,
        &args.source,
        &candidates(&dataset, &args.selection),
        args.method.scheme,
        &spec,
        &cfg,
        &opts,
    )?;
    let run = Run::create("crossuser", &args.output)?;
    run.write("crossuser.csv", report.to_csv())?;
    run.write("report.json", serde_json::to_string_pretty(&report)? + "\n")?;
    run.record("crossuser", args, &["crossuser.csv", "report.json"])?;
    Ok(format!(
        "crossuser: layout {:?} source {:.2}% others {:.2}% -> {}",
        report.chosen.electrodes,
        report.chosen.accuracy,
        report.mean_transfer_accuracy,
        run.dir.display()
    ))
}

fn band_cmd(args: &BandArgs) -> Result<String> {
    let (dataset, trials, candidates) = load(&args.selection, &args.user)?;
    let sites: Vec<_> = dataset
        .manifest
        .electrodes
        .iter()
        .filter(|e| candidates.contains(&e.id))
        .cloned()
        .collect();
    let spec = ClassifierSpec::new(args.method.classifier, args.method.seed);
    let cmp = compare_band_vs_sparse(&trials, &sites, args.k, args.method.scheme, &spec, args.method.seed)?;
    let run = Run::create("bandcompare", &args.output)?;
    let csv = format!(
        "layout,electrodes,accuracy\nband,{},{}\nsparse,{},{}\n",
        join(&cmp.band_electrodes),
        cmp.band_accuracy,
        join(&cmp.sparse_electrodes),
        cmp.sparse_accuracy
    );
    run.write("bandcompare.csv", csv)?;
    run.write("bandcompare.json", serde_json::to_string_pretty(&cmp)? + "\n")?;
    run.record("bandcompare", args, &["bandcompare.csv", "bandcompare.json"])?;
    Ok(format!(
        "bandcompare: k={} band {:.2}% sparse {:.2}% -> {}",
        cmp.k,
        cmp.band_accuracy,
        cmp.sparse_accuracy,
        run.dir.display()
    ))
}

fn join(ids: &[ElectrodeId]) -> String {
    ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
}

fn measurements(args: &StencilArgs) -> Result<ArmMeasurements> {
    if let Some(path) = &args.measurements {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?);
    }
    let length = args.length.context("--length is required")?;
    match (args.circumference, args.wrist, args.elbow) {
        (Some(c), None, None) => Ok(ArmMeasurements::cylinder(length, c)),
        (None, Some(wrist), Some(elbow)) => Ok(ArmMeasurements {
            forearm_length_mm: length,
            circumference_samples: vec![
                CircumferenceSample {
                    distance_from_wrist_mm: 0.0,
                    circumference_mm: wrist,
                },
                CircumferenceSample {
                    distance_from_wrist_mm: length,
                    circumference_mm: elbow,
                },
            ],
        }),
        _ => bail!("give --circumference, or --wrist and --elbow, or --measurements"),
    }
}

fn stencil_cmd(args: &StencilArgs) -> Result<String> {
    let dataset = Dataset::open(&args.data)?;
    let layout = match &args.result {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let result: SweepResult = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            result.chosen.electrodes
        }
        None => args.layout.clone(),
    };
    let arm = measurements(args)?;
    let svg = generate_stencil(&layout, &dataset.manifest, &arm)?;
    let run = Run::create("stencil", &args.output)?;
    run.write("stencil.svg", svg)?;
    run.record(
        "stencil",
        &serde_json::json!({ "data": args.data, "layout": layout, "measurements": arm }),
        &["stencil.svg"],
    )?;
    Ok(format!("stencil: {} holes -> {}", layout.len(), run.dir.join("stencil.svg").display()))
}

fn serve_cmd(args: &ServeArgs) -> Result<String> {
    if args.workers == 0 {
        bail!("--workers must be positive");
    }
    if !(args.model_ttl_hours.is_finite() && args.model_ttl_hours > 0.0) {
        bail!("--model-ttl-hours must be positive");
    }
    let config = sparseemg_service::Config {
        port: args.port,
        data_dir: args.data_dir.clone(),
        workers: args.workers,
        threads_per_job: None,
        model_ttl: Duration::from_secs_f64(args.model_ttl_hours * 3600.0),
        model_dir: args.model_dir.clone(),
    };
    tokio::runtime::Runtime::new()?.block_on(sparseemg_service::serve(config))?;
    Ok("serve: stopped".to_string())
}

fn bench_cmd(args: &BenchArgs) -> Result<String> {
    let run = Run::create("bench", &args.output)?;
    let (trials, candidates) = match &args.data {
        Some(dir) => {
            let dataset = Dataset::open(dir)?;
            (dataset.load_user(&args.user)?, dataset.manifest.electrode_ids())
        }
        None => {
            let spec = bench_default(args.seed);
            let (manifest, trials) = generate_synthetic(&spec)?;
            (trials_of(&trials, &args.user), manifest.electrode_ids())
        }
    };
    let cfg = SparsityConfig::new(args.weights.w1, args.weights.w2)?;
    let opts = sweep_options(args.max_electrodes, args.seed, &args.output);
    let report = run_grid(&trials, &candidates, &Scheme::ALL, &ClassifierKind::ALL, &cfg, &opts)?;
    run.write("summary.csv", report.summary_csv())?;
    run.write("curves.csv", report.curves_csv())?;
    run.write("report.json", serde_json::to_string_pretty(&report)? + "\n")?;
    run.record("bench", args, &["summary.csv", "curves.csv", "report.json"])?;
    let best = report
        .rows
        .iter()
        .reduce(|best, row| if row.result.chosen.accuracy > best.result.chosen.accuracy { row } else { best })
        .expect("grid is non-empty");
    Ok(format!(
        "bench: {} combinations, best {}+{} at {:.2}% -> {}",
        report.rows.len(),
        best.scheme,
        best.classifier,
        best.result.chosen.accuracy,
        run.dir.display()
    ))
}

/// The synthetic set `bench` uses when no dataset is given.
fn bench_default(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        channel_count: 16,
        gesture_count: 4,
        users: 1,
        trials_per_gesture: 8,
        samples_per_trial: 300,
        informative_channels: default_informative(16),
        noise_sigma: 0.05,
        seed,
    }
}

fn error_json(err: &anyhow::Error) -> serde_json::Value {
    let field = err
        .chain()
        .find_map(|e| e.downcast_ref::<sparseemg::Error>())
        .and_then(|e| e.field())
        .map(str::to_string)
        .or_else(|| {
            err.chain()
                .find_map(|e| e.downcast_ref::<sparseemg_service::ServiceError>())
                .and_then(|e| e.body().field)
        });
    // Engine errors already print their source, so skip causes the previous
    // message contains.
    let mut message = String::new();
    for cause in err.chain().map(|e| e.to_string()) {
        if !message.contains(&cause) {
            if !message.is_empty() {
                message.push_str(": ");
            }
            message.push_str(&cause);
        }
    }
    serde_json::json!({ "error": { "message": message, "field": field } })
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Rank(a) => rank_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Crossuser(a) => crossuser_cmd(a),
        Command::Bandcompare(a) => band_cmd(a),
        Command::Stencil(a) => stencil_cmd(a),
        Command::Serve(a) => serve_cmd(a),
        Command::Bench(a) => bench_cmd(a),
    };
    match outcome {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}", error_json(&err));
            ExitCode::FAILURE
        }
    }
}
