//! `pointloc`: dataset generation, vocabulary training, database building,
//! localization, evaluation and benchmarking from the command line.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pointloc_core::dataset::{self, generate_dataset, load_dataset, write_dataset, Frame, GenerationParams};
use pointloc_core::eval::{
    format_recall_table, format_timing_report, recall_at, timing_report, RecallTable,
    ReportFormat,
};
use pointloc_core::geometry::Pose;
use pointloc_core::pipeline::{
    build_database, decode_database, encode_database, localize, localize_all, parse_results,
    train_vocabulary_on, write_results, PipelineConfig, Sensor,
};
use pointloc_core::retrieval::Vocabulary;
use pointloc_core::scene::SceneParams;
use pointloc_core::{Error, Result};

#[derive(Parser)]
#[command(name = "pointloc", version, about = "Point-grid RGB-D localization toolkit")]
struct Cli {
    /// Worker threads (defaults to all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset
    Generate(GenerateArgs),
    /// Train a visual vocabulary on a dataset's database frames
    TrainVocab(TrainVocabArgs),
    /// Precompute features and embeddings for every database frame
    BuildDb(BuildDbArgs),
    /// Localize every query frame and write a results file
    Localize(LocalizeArgs),
    /// Score results files against ground truth
    Evaluate(EvaluateArgs),
    /// Time each localization stage
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    scenes: u32,
    #[arg(long)]
    out: PathBuf,
    /// Queries sampled per grid point
    #[arg(long)]
    queries: Option<usize>,
    /// RGB noise factor
    #[arg(long)]
    noise: Option<f64>,
    /// Grid spacing in meters
    #[arg(long)]
    spacing: Option<f64>,
    /// Query sampling radius in meters
    #[arg(long)]
    radius: Option<f64>,
}

#[derive(Args)]
struct TrainVocabArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Pipeline config supplying feature extraction settings
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct BuildDbArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LocalizeArgs {
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Write 0 in the timing columns so the file depends on inputs alone
    #[arg(long)]
    zero_timings: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Results files; each becomes one row named after its file stem
    #[arg(long, required = true, num_args = 1..)]
    results: Vec<PathBuf>,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "markdown")]
    format: String,
    /// Write the report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "markdown")]
    format: String,
    /// Time at most this many queries
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn load_config(path: &Path) -> Result<PipelineConfig> {
    PipelineConfig::parse(&read_text(path)?, path)
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut p = GenerationParams::default();
    if let Some(q) = a.queries {
        p.queries_per_point = q;
    }
    if let Some(n) = a.noise {
        p.noise_factor = n;
    }
    if let Some(s) = a.spacing {
        p.grid_spacing = s;
    }
    if let Some(r) = a.radius {
        p.query_radius = r;
    }
    let ds = generate_dataset(a.seed, a.scenes, &SceneParams::default(), &p)?;
    write_dataset(&ds, &a.out)?;
    let t = ds.manifest.totals;
    eprintln!(
        "{} points, {} poses, {} categories, {} instances, {} maps",
        t.points, t.poses, t.categories, t.instances, t.maps
    );
    Ok(())
}

fn train_vocab(a: TrainVocabArgs) -> Result<()> {
    let config = match &a.config {
        Some(p) => load_config(p)?,
        None => PipelineConfig::default(),
    };
    let ds = load_dataset(&a.dataset)?;
    let vocab = train_vocabulary_on(&ds.groups, a.k, a.seed, &config)?;
    write_file(&a.out, vocab.encode())
}

fn build_db(a: BuildDbArgs) -> Result<()> {
    let config = load_config(&a.config)?;
    let vocab = Vocabulary::decode(&read_bytes(&a.vocab)?, &a.vocab)?;
    let ds = load_dataset(&a.dataset)?;
    let sensor = Sensor::from_params(&ds.manifest.params)?;
    let db = build_database(&ds.groups, &vocab, &config, sensor)?;
    write_file(&a.out, encode_database(&db))
}

fn run_localize(a: LocalizeArgs) -> Result<()> {
    let config = load_config(&a.config)?;
    let db = decode_database(&read_bytes(&a.db)?, &a.db)?;
    let ds = load_dataset(&a.dataset)?;
    let queries: Vec<&Frame> = ds.query_frames().collect();
    let results = localize_all(&db, &queries, &config)?;
    write_file(&a.out, write_results(&results, a.zero_timings))
}

fn ground_truth(ds: &dataset::Dataset) -> HashMap<(u32, u32), Pose> {
    ds.query_frames()
        .map(|f| ((f.point_id, f.frame_id), f.pose))
        .collect()
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let format: ReportFormat = a.format.parse()?;
    let ds = load_dataset(&a.dataset)?;
    let truth = ground_truth(&ds);
    let mut table = RecallTable::default();
    for path in &a.results {
        let rows = parse_results(&read_text(path)?, path)?;
        let pairs = rows
            .iter()
            .map(|r| {
                truth
                    .get(&(r.point_id, r.query_id))
                    .map(|gt| (r.pose, *gt))
                    .ok_or_else(|| {
                        Error::format(
                            path,
                            format!("query {}/{} is not in the dataset", r.point_id, r.query_id),
                        )
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let name = path
            .file_stem()
            .map_or_else(|| "results".into(), |s| s.to_string_lossy().into_owned());
        let row = recall_at(&name, &pairs).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::format(path, m),
            e => e,
        })?;
        row.check_invariants()?;
        table.rows.push(row);
    }
    emit(&format_recall_table(&table, format), a.out.as_deref())
}

fn bench(a: BenchArgs) -> Result<()> {
    let format: ReportFormat = a.format.parse()?;
    let config = load_config(&a.config)?;
    let db = decode_database(&read_bytes(&a.db)?, &a.db)?;
    let ds = load_dataset(&a.dataset)?;
    let limit = a.limit.unwrap_or(usize::MAX);
    // one query at a time so stage timings are not shared with other work
    let timings = ds
        .query_frames()
        .take(limit)
        .map(|q| localize(&db, q, &config).map(|r| r.timings))
        .collect::<Result<Vec<_>>>()?;
    let report = timing_report(&config.name, &config.hardware, &timings)?;
    emit(&format_timing_report(&[report], format), a.out.as_deref())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => 2,
        Error::Evaluation(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::TrainVocab(a) => train_vocab(a),
        Command::BuildDb(a) => build_db(a),
        Command::Localize(a) => run_localize(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
