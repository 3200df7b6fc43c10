//! Command-line surface: synthetic data generation, training, retrieval
//! evaluation, embedding export, gradient checking, and disk plots.
//!
//! Exit codes: 0 success, 1 computation failure, 2 usage or file errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hypmetric::error::Error;
use hypmetric::eval::{cmc, distance_matrix, Protocol};
use hypmetric::gradcheck::{gradcheck_all, render_reports};
use hypmetric::head::{head_forward, load_checkpoint, save_checkpoint, HeadParams};
use hypmetric::io::{
    apply_split, generate_synthetic, read_embeddings, read_features, write_embeddings,
    write_features, EmbeddingFile, EmbeddingRecord, FeatureRecord, SplitSpec, SynthSpec,
};
use hypmetric::losses::Mining;
use hypmetric::plot::{render_svg, PlotOptions};
use hypmetric::trainer::{render_metrics, train, LossSelect, ModeSelect, TrainConfig};
use hypmetric::uncertainty::uncertainty;
use hypmetric::{BallPoint, Result};

#[derive(Parser)]
#[command(
    name = "hypmetric",
    version,
    about = "Poincare-ball metric learning over precomputed backbone features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic hierarchical feature file (HYPF)
    Synth(SynthArgs),
    /// Train the projection head on a feature file
    Train(TrainArgs),
    /// Evaluate CMC recall@k for a trained checkpoint
    Eval(EvalArgs),
    /// Export ball embeddings with per-sample uncertainty values (HYPE)
    Embed(EmbedArgs),
    /// Check every analytic gradient against central finite differences
    Gradcheck(GradcheckArgs),
    /// Render a 2-d embedding file as an SVG Poincare-disk plot
    Plot(PlotArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LossArg {
    Contrastive,
    Triplet,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    /// Uncertainty-derived per-sample tau / margin
    Adaptive,
    /// Fixed tau (--tau) or margin (--margin) baseline
    Fixed,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MiningArg {
    BatchHard,
    BatchAll,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProtocolArg {
    SameSet,
    QueryGallery,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SubsetArg {
    Train,
    Test,
}

#[derive(Args)]
struct SynthArgs {
    /// Output feature file
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 50)]
    per_class: usize,
    /// Feature dimension
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Depth of the class-center offset tree (leaves = 2^depth >= classes)
    #[arg(long, default_value_t = 4)]
    depth: usize,
    /// Intra-class Gaussian spread
    #[arg(long, default_value_t = 0.005)]
    sigma: f64,
    /// Leaf-level center separation
    #[arg(long, default_value_t = 0.04)]
    separation: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct SplitArgs {
    /// Plain-text split spec with `train:` / `test:` class ranges
    #[arg(long)]
    split: Option<PathBuf>,
    /// Which side of the split to use (only with --split)
    #[arg(long, value_enum)]
    subset: Option<SubsetArg>,
}

#[derive(Args)]
struct TrainArgs {
    /// Input feature file
    #[arg(long)]
    features: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    /// Output checkpoint path
    #[arg(long)]
    out: PathBuf,
    /// Metrics log path (CSV: step,epoch,loss,mean_tau_or_alpha,mean_uncertainty)
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = LossArg::Contrastive)]
    loss: LossArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Adaptive)]
    mode: ModeArg,
    /// Temperature for `--loss contrastive --mode fixed`
    #[arg(long, default_value_t = 0.2)]
    tau: f64,
    /// Margin for `--loss triplet --mode fixed`
    #[arg(long, default_value_t = 0.3)]
    margin: f64,
    #[arg(long, value_enum, default_value_t = MiningArg::BatchHard)]
    mining: MiningArg,
    #[arg(long, default_value_t = 0.1)]
    curvature: f64,
    /// Numerical scale of the adaptive temperature
    #[arg(long, default_value_t = 0.02)]
    scale: f64,
    #[arg(long, default_value_t = 3e-5)]
    lr: f64,
    #[arg(long, default_value_t = 0.01)]
    weight_decay: f64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 30)]
    batch_size: usize,
    /// Samples per class in each batch [default: 3 for contrastive, 2 for triplet]
    #[arg(long)]
    samples_per_class: Option<usize>,
    /// Embedding dimension (use 2 for plottable embeddings)
    #[arg(long, default_value_t = 128)]
    dim_out: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    log_interval: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Query feature file (also the gallery under --protocol same-set)
    #[arg(long)]
    features: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Gallery feature file (required for --protocol query-gallery)
    #[arg(long)]
    gallery: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ProtocolArg::SameSet)]
    protocol: ProtocolArg,
    /// Recall@k cutoffs
    #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 2, 4, 8])]
    k: Vec<usize>,
    /// Also write the machine-readable report (k,recall lines) here
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    features: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output embedding file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct PlotArgs {
    /// Input embedding file (must have dimension 2)
    #[arg(long)]
    embeddings: PathBuf,
    /// Output SVG path
    #[arg(long)]
    out: PathBuf,
    /// Canvas edge in pixels
    #[arg(long, default_value_t = 800)]
    size: u32,
    #[arg(long, default_value_t = 3.0)]
    point_radius: f64,
}

fn load_records(
    features: &Path,
    split: &SplitArgs,
    default_subset: SubsetArg,
) -> Result<Vec<FeatureRecord>> {
    let records = read_features(features)?;
    match &split.split {
        None => Ok(records),
        Some(path) => {
            let spec = SplitSpec::from_file(path)?;
            let (train, test) = apply_split(&records, &spec)?;
            Ok(match split.subset.unwrap_or(default_subset) {
                SubsetArg::Train => train,
                SubsetArg::Test => test,
            })
        }
    }
}

fn embed_records(
    records: &[FeatureRecord],
    params: &HeadParams,
) -> Result<(Vec<BallPoint>, Vec<f64>)> {
    let rows: Vec<Vec<f64>> = records.iter().map(|r| r.widened()).collect();
    let embeddings = head_forward(&rows, params)?;
    let uncertainties = embeddings.iter().map(|e| uncertainty(e).clamped).collect();
    Ok((embeddings, uncertainties))
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        classes: args.classes,
        per_class: args.per_class,
        dim: args.dim,
        depth: args.depth,
        sigma: args.sigma,
        separation: args.separation,
        seed: args.seed,
    };
    let records = generate_synthetic(&spec)?;
    write_features(&args.out, &records)?;
    println!(
        "wrote {} records ({} classes x {}, dim {}) to {}",
        records.len(),
        args.classes,
        args.per_class,
        args.dim,
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let records = load_records(&args.features, &args.split, SubsetArg::Train)?;
    let loss = match args.loss {
        LossArg::Contrastive => LossSelect::Contrastive,
        LossArg::Triplet => LossSelect::Triplet,
    };
    let mode = match args.mode {
        ModeArg::Adaptive => ModeSelect::Adaptive,
        ModeArg::Fixed => ModeSelect::Fixed(match loss {
            LossSelect::Contrastive => args.tau,
            LossSelect::Triplet => args.margin,
        }),
    };
    let samples_per_class = args.samples_per_class.unwrap_or(match loss {
        LossSelect::Contrastive => 3,
        LossSelect::Triplet => 2,
    });
    let config = TrainConfig {
        loss,
        mode,
        mining: match args.mining {
            MiningArg::BatchHard => Mining::BatchHard,
            MiningArg::BatchAll => Mining::BatchAll,
        },
        curvature: args.curvature,
        scale: args.scale,
        lr: args.lr,
        weight_decay: args.weight_decay,
        epochs: args.epochs,
        batch_size: args.batch_size,
        samples_per_class,
        dim_out: args.dim_out,
        seed: args.seed,
        log_interval: args.log_interval,
    };
    let out = train(&records, &config)?;
    save_checkpoint(&args.out, &out.checkpoint)?;
    if let Some(metrics_path) = &args.metrics {
        std::fs::write(metrics_path, render_metrics(&out.metrics))?;
    }
    match out.metrics.last() {
        Some(last) => println!(
            "trained {} epochs ({} steps), final logged loss {}",
            config.epochs, out.checkpoint.step, last.loss
        ),
        None => println!(
            "trained {} epochs ({} steps)",
            config.epochs, out.checkpoint.step
        ),
    }
    println!("checkpoint: {}", args.out.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let queries = load_records(&args.features, &args.split, SubsetArg::Test)?;
    let (q_emb, _) = embed_records(&queries, &ckpt.params)?;
    let q_labels: Vec<u32> = queries.iter().map(|r| r.label).collect();

    let report = match args.protocol {
        ProtocolArg::SameSet => {
            if args.gallery.is_some() {
                return Err(Error::InvalidConfig(
                    "--gallery only applies to --protocol query-gallery".into(),
                ));
            }
            let dist = distance_matrix(&q_emb, &q_emb)?;
            cmc(&dist, &q_labels, &q_labels, &args.k, Protocol::SameSet)?
        }
        ProtocolArg::QueryGallery => {
            let gallery_path = args.gallery.as_ref().ok_or_else(|| {
                Error::InvalidConfig("--protocol query-gallery requires --gallery".into())
            })?;
            let gallery = read_features(gallery_path)?;
            let (g_emb, _) = embed_records(&gallery, &ckpt.params)?;
            let g_labels: Vec<u32> = gallery.iter().map(|r| r.label).collect();
            let dist = distance_matrix(&q_emb, &g_emb)?;
            cmc(&dist, &q_labels, &g_labels, &args.k, Protocol::QueryGallery)?
        }
    };
    print!("{}", report.render_text());
    if let Some(path) = &args.report {
        std::fs::write(path, report.render_records())?;
    }
    Ok(())
}

fn cmd_embed(args: &EmbedArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let records = load_records(&args.features, &args.split, SubsetArg::Test)?;
    let (embeddings, uncertainties) = embed_records(&records, &ckpt.params)?;
    let file = EmbeddingFile {
        curvature: ckpt.params.curvature.get(),
        dim: ckpt.params.d_out,
        records: embeddings
            .into_iter()
            .zip(uncertainties)
            .zip(&records)
            .map(|((e, u), r)| EmbeddingRecord {
                coords: e.into_coords(),
                uncertainty: u,
                label: r.label,
            })
            .collect(),
    };
    write_embeddings(&args.out, &file)?;
    println!(
        "embedded {} records (dim {}) to {}",
        file.records.len(),
        file.dim,
        args.out.display()
    );
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> ExitCode {
    let reports = gradcheck_all(args.seed);
    print!("{}", render_reports(&reports));
    if reports.iter().all(|r| r.pass) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn cmd_plot(args: &PlotArgs) -> Result<()> {
    let file = read_embeddings(&args.embeddings)?;
    let svg = render_svg(
        &file,
        &PlotOptions {
            size: args.size,
            point_radius: args.point_radius,
        },
    )?;
    std::fs::write(&args.out, svg)?;
    println!(
        "plotted {} points to {}",
        file.records.len(),
        args.out.display()
    );
    Ok(())
}

/// 2 for usage / file problems, 1 for computation failures.
fn exit_code_for(err: &Error) -> ExitCode {
    match err {
        Error::Io(_)
        | Error::BadMagic { .. }
        | Error::VersionMismatch { .. }
        | Error::ChecksumMismatch { .. }
        | Error::Truncated { .. }
        | Error::SplitParse { .. }
        | Error::InvalidConfig(_)
        | Error::UnknownClass(_)
        | Error::DimensionMismatch { .. }
        | Error::DimensionNotPlottable(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Embed(args) => cmd_embed(args),
        Command::Gradcheck(args) => return cmd_gradcheck(args),
        Command::Plot(args) => cmd_plot(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_for(&err)
        }
    }
}
