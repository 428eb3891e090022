//! Command-line frontend: run the diarization pipeline over feature
//! streams, score hypotheses against references, tune thresholds, bench
//! step latency and generate synthetic fixtures.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use diarize::config::PipelineConfig;
use diarize::fixtures::{self, FixtureSpec, OracleFrameSource};
use diarize::formats;
use diarize::ingest::MemoryFrameSource;
use diarize::metrics::{self, DerBreakdown};
use diarize::output::{parse_rttm, rttm_to_string};
use diarize::pipeline::{self, TuneGrid};
use diarize::segmentation::{OracleSegmentation, SegmentationProvider, StoredSegmentation};
use diarize::timebase::Annotation;

#[derive(Parser)]
#[command(name = "diarize", about = "Online speaker diarization engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Diarize a feature stream and emit RTTM.
    Run(RunArgs),
    /// Score hypothesis RTTM against a reference.
    Score(ScoreArgs),
    /// Grid-search thresholds on synthetic dev fixtures.
    Tune(TuneArgs),
    /// Measure per-window step latency.
    Bench(BenchArgs),
    /// Generate a synthetic conversation fixture.
    Fixtures(FixturesArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Frame features (SDFE).
    #[arg(long)]
    features: PathBuf,
    /// Precomputed segmentation matrices (SDSG). Mutually exclusive with
    /// --reference.
    #[arg(long)]
    segmentation: Option<PathBuf>,
    /// Reference RTTM for oracle segmentation.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Precomputed per-window embeddings (SDEM); skips pooling.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Config file (key = value); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Recording id for the RTTM output.
    #[arg(long, default_value = "stream")]
    uri: String,
    /// Override output latency in seconds.
    #[arg(long)]
    latency: Option<f64>,
    /// Override the activity threshold.
    #[arg(long)]
    tau_active: Option<f64>,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output RTTM path; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Write the final centroid pool (SDCK).
    #[arg(long)]
    dump_centroids: Option<PathBuf>,
    /// Print one line per processed window.
    #[arg(long)]
    verbose: bool,
}

#[derive(clap::Args)]
struct ScoreArgs {
    /// Reference RTTM (may hold several recordings).
    #[arg(long)]
    reference: PathBuf,
    /// Hypothesis RTTM.
    #[arg(long)]
    hypothesis: PathBuf,
    /// Also print a local DER curve with this bin size in seconds.
    #[arg(long)]
    bin: Option<f64>,
    /// Write per-file components as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(clap::Args)]
struct TuneArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of synthetic dev conversations.
    #[arg(long, default_value_t = 4)]
    dev_fixtures: usize,
    #[arg(long, default_value_t = 3)]
    speakers: usize,
    #[arg(long, default_value_t = 120.0)]
    duration: f64,
    #[arg(long, default_value_t = 0.1)]
    overlap: f64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0.0)]
    similarity: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Candidate tau_active values.
    #[arg(long = "tau", num_args = 1..)]
    tau: Vec<f64>,
    /// Candidate delta_new values.
    #[arg(long = "delta", num_args = 1..)]
    delta: Vec<f64>,
    /// Candidate rho_update values.
    #[arg(long = "rho", num_args = 1..)]
    rho: Vec<f64>,
}

#[derive(clap::Args)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    speakers: usize,
    #[arg(long, default_value_t = 60.0)]
    duration: f64,
    /// Frame feature dimensionality (embeddings are twice this).
    #[arg(long, default_value_t = 128)]
    dim: usize,
}

#[derive(clap::Args)]
struct FixturesArgs {
    #[arg(long, default_value_t = 3)]
    speakers: usize,
    #[arg(long, default_value_t = 300.0)]
    duration: f64,
    #[arg(long, default_value_t = 0.1)]
    overlap: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 0.0)]
    similarity: f64,
    #[arg(long, default_value = "fixture")]
    uri: String,
    /// Directory receiving reference.rttm and features.sdfe.
    #[arg(long)]
    out_dir: PathBuf,
}

fn load_config(path: &Option<PathBuf>) -> Result<PipelineConfig> {
    match path {
        Some(p) => {
            PipelineConfig::from_file(p).with_context(|| format!("reading {}", p.display()))
        }
        None => Ok(PipelineConfig::default()),
    }
}

fn load_rttm_one(path: &PathBuf) -> Result<Annotation> {
    let file = BufReader::new(File::open(path).with_context(|| format!("{}", path.display()))?);
    let mut all = parse_rttm(file)?;
    match all.len() {
        1 => Ok(all.remove(0)),
        n => bail!("{} holds {n} recordings, expected exactly 1", path.display()),
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut config = load_config(&args.config)?;
    if let Some(latency) = args.latency {
        config.latency = latency;
    }
    if let Some(tau) = args.tau_active {
        config.tau_active = tau;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;

    let features = formats::read_features(&args.features)
        .with_context(|| format!("reading {}", args.features.display()))?;
    if (features.frame_step - config.frame_step).abs() > 1e-9 {
        bail!(
            "feature frame step {} does not match configured {}",
            features.frame_step,
            config.frame_step
        );
    }
    let source = MemoryFrameSource::new(features.rows);

    let provider: Box<dyn SegmentationProvider> = match (&args.segmentation, &args.reference) {
        (Some(path), None) => {
            let (k_max, windows) = formats::read_segmentation(path)?;
            Box::new(StoredSegmentation { k_max, windows })
        }
        (None, Some(path)) => {
            let mut reference = load_rttm_one(path)?;
            reference.uri = args.uri.clone();
            Box::new(OracleSegmentation::new(reference, config.k_max, config.seed))
        }
        _ => bail!("exactly one of --segmentation or --reference is required"),
    };

    let stored = match &args.embeddings {
        Some(path) => Some(formats::read_embeddings(path)?.1),
        None => None,
    };

    let out = pipeline::run(
        &config,
        &args.uri,
        &source,
        provider.as_ref(),
        stored.as_deref(),
    )?;

    if args.verbose {
        for step in &out.steps {
            eprintln!(
                "window {:5}  k_buffer {}  new {}  finalized {:4}  {:.2}ms",
                step.window_index,
                step.k_buffer,
                step.new_speakers,
                step.frames_finalized,
                step.elapsed.as_secs_f64() * 1e3
            );
        }
    }
    eprintln!("speakers found: {}", out.num_speakers());

    let rttm = rttm_to_string(&out.hypothesis)?;
    match &args.output {
        Some(path) => std::fs::write(path, rttm)?,
        None => print!("{rttm}"),
    }
    if let Some(path) = &args.dump_centroids {
        formats::write_checkpoint(path, &out.pool)?;
    }
    Ok(())
}

fn print_breakdown(name: &str, b: &DerBreakdown) {
    println!(
        "{name}: fa {:.3}s  miss {:.3}s  conf {:.3}s  total {:.3}s  DER {:.2}%",
        b.false_alarm,
        b.missed,
        b.confusion,
        b.total_reference,
        b.der * 100.0
    );
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let references = parse_rttm(BufReader::new(File::open(&args.reference)?))?;
    let hypotheses = parse_rttm(BufReader::new(File::open(&args.hypothesis)?))?;
    if references.is_empty() {
        bail!("reference {} holds no segments", args.reference.display());
    }

    let mut csv = match &args.csv {
        Some(path) => {
            let mut f = File::create(path)?;
            writeln!(f, "uri,false_alarm,missed,confusion,total_reference,der")?;
            Some(f)
        }
        None => None,
    };

    let mut aggregate = DerBreakdown::default();
    for reference in &references {
        let empty = Annotation::new(reference.uri.clone());
        let hypothesis = hypotheses
            .iter()
            .find(|h| h.uri == reference.uri)
            .unwrap_or(&empty);
        let b = metrics::der(reference, hypothesis)?;
        print_breakdown(&reference.uri, &b);
        if let Some(f) = &mut csv {
            writeln!(
                f,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                reference.uri, b.false_alarm, b.missed, b.confusion, b.total_reference, b.der
            )?;
        }
        aggregate.false_alarm += b.false_alarm;
        aggregate.missed += b.missed;
        aggregate.confusion += b.confusion;
        aggregate.total_reference += b.total_reference;

        if let Some(bin) = args.bin {
            for (start, local) in metrics::local_der_curve(reference, hypothesis, bin)? {
                println!(
                    "  [{start:7.1}s +{bin:.0}s]  fa {:.3}  miss {:.3}  conf {:.3}  DER {:.2}%",
                    local.false_alarm,
                    local.missed,
                    local.confusion,
                    local.der * 100.0
                );
            }
        }
    }
    if references.len() > 1 {
        let errors = aggregate.false_alarm + aggregate.missed + aggregate.confusion;
        aggregate.der = if aggregate.total_reference > 0.0 {
            errors / aggregate.total_reference
        } else {
            0.0
        };
        print_breakdown("ALL", &aggregate);
    }
    Ok(())
}

fn cmd_tune(args: TuneArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let dev: Vec<_> = (0..args.dev_fixtures)
        .map(|i| {
            fixtures::generate(&FixtureSpec {
                uri: format!("dev_{i}"),
                speakers: args.speakers,
                duration: args.duration,
                overlap_ratio: args.overlap,
                noise_sigma: args.noise,
                seed: args.seed.wrapping_add(i as u64),
                dim: 32,
                signature_similarity: args.similarity,
                ..Default::default()
            })
        })
        .collect();

    let mut grid = TuneGrid::default();
    if !args.tau.is_empty() {
        grid.tau_active = args.tau;
    }
    if !args.delta.is_empty() {
        grid.delta_new = args.delta;
    }
    if !args.rho.is_empty() {
        grid.rho_update = args.rho;
    }

    let report = pipeline::tune(&config, &grid, &dev)?;
    for p in &report.points {
        println!(
            "tau {:.2}  delta {:.2}  rho {:.2}  mean DER {:.2}%",
            p.tau_active,
            p.delta_new,
            p.rho_update,
            p.mean_der * 100.0
        );
    }
    println!(
        "best: tau {:.2}  delta {:.2}  rho {:.2}  mean DER {:.2}%",
        report.best.tau_active,
        report.best.delta_new,
        report.best.rho_update,
        report.best.mean_der * 100.0
    );
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let stats = pipeline::bench_run(&config, args.speakers, args.duration, args.dim)?;
    println!(
        "windows {}  mean {:.2}ms  p95 {:.2}ms  max {:.2}ms",
        stats.windows, stats.mean_ms, stats.p95_ms, stats.max_ms
    );
    Ok(())
}

fn cmd_fixtures(args: FixturesArgs) -> Result<()> {
    let fixture = fixtures::generate(&FixtureSpec {
        uri: args.uri,
        speakers: args.speakers,
        duration: args.duration,
        overlap_ratio: args.overlap,
        noise_sigma: args.noise,
        seed: args.seed,
        dim: args.dim,
        signature_similarity: args.similarity,
        ..Default::default()
    });
    std::fs::create_dir_all(&args.out_dir)?;

    let rttm_path = args.out_dir.join("reference.rttm");
    std::fs::write(&rttm_path, rttm_to_string(&fixture.reference)?)?;

    let source = OracleFrameSource::new(&fixture);
    let rows = source.materialize();
    let features_path = args.out_dir.join("features.sdfe");
    formats::write_features(&features_path, fixture.grid.frame_step, &rows)?;

    println!(
        "wrote {} and {} ({} frames, {} speakers)",
        rttm_path.display(),
        features_path.display(),
        rows.len(),
        fixture.reference.labels().len()
    );
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => cmd_run(args),
        Command::Score(args) => cmd_score(args),
        Command::Tune(args) => cmd_tune(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Fixtures(args) => cmd_fixtures(args),
    }
}
