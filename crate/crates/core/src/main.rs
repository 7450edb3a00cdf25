use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use latent_cluster::cli::{
    cmd_evaluate, cmd_inspect, cmd_train, cmd_visualize, config_help, exit_code, Method, RunConfig,
};
use latent_cluster::eval::NmiVariant;
use latent_cluster::Result;

#[derive(Parser, Debug)]
#[command(name = "latent-cluster", version, about = "Two-phase autoencoder clustering of MNIST digits")]
#[command(after_help = config_help())]
struct Cli {
    /// Master seed (overrides the config file)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat JSON config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory with the MNIST IDX files (else config, else $LATENT_CLUSTER_DATA_DIR)
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train Phase 1 (reconstruction) and Phase 2 (triplet refinement)
    Train(TrainArgs),
    /// Cluster the test set and write a metrics report
    Evaluate(EvaluateArgs),
    /// t-SNE scatter of test embeddings and the silhouette bar chart
    Visualize(VisualizeArgs),
    /// Print a checkpoint's phase, parameter counts and tensor shapes
    InspectCheckpoint {
        path: PathBuf,
        #[arg(long, default_value_t = 64)]
        latent_dim: usize,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Stop after Phase 1
    #[arg(long)]
    phase1_only: bool,
    /// Phase 1 epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Phase 2 epochs
    #[arg(long)]
    phase2_epochs: Option<usize>,
    /// Use only the first N training images
    #[arg(long)]
    subset: Option<usize>,
    /// Training samples used for triplet mining
    #[arg(long)]
    mining_subset: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    TripletAe,
    RawPixels,
    Pca50,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::TripletAe => Method::TripletAe,
            MethodArg::RawPixels => Method::RawPixels,
            MethodArg::Pca50 => Method::Pca50,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NmiArg {
    Arithmetic,
    Geometric,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long, value_enum, default_value = "triplet-ae")]
    method: MethodArg,
    /// Checkpoint for triplet-ae (default: <output_dir>/phase2.ckpt)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Silhouette on a random subset of this size
    #[arg(long)]
    sample_size: Option<usize>,
    /// Evaluate on the first N test images
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long, value_enum)]
    nmi_variant: Option<NmiArg>,
}

#[derive(Args, Debug)]
struct VisualizeArgs {
    /// Checkpoint to embed with (default: <output_dir>/phase2.ckpt)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Number of leading test images to project
    #[arg(long)]
    points: Option<usize>,
}

fn config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.data_dir {
        cfg.data_dir = Some(d.clone());
    }
    if let Some(d) = &cli.output_dir {
        cfg.output_dir = d.clone();
    }
    match &cli.command {
        Command::Train(a) => {
            cfg.phase1_epochs = a.epochs.unwrap_or(cfg.phase1_epochs);
            cfg.phase2_epochs = a.phase2_epochs.unwrap_or(cfg.phase2_epochs);
            cfg.mining_subset = a.mining_subset.unwrap_or(cfg.mining_subset);
            cfg.train_subset = a.subset.or(cfg.train_subset);
        }
        Command::Evaluate(a) => {
            cfg.silhouette_sample = a.sample_size.or(cfg.silhouette_sample);
            cfg.eval_subset = a.subset.or(cfg.eval_subset);
            if let Some(v) = a.nmi_variant {
                cfg.nmi_variant = match v {
                    NmiArg::Arithmetic => NmiVariant::Arithmetic,
                    NmiArg::Geometric => NmiVariant::Geometric,
                };
            }
        }
        Command::Visualize(a) => cfg.tsne_points = a.points.unwrap_or(cfg.tsne_points),
        Command::InspectCheckpoint { .. } => {}
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = config(cli)?;
    match &cli.command {
        Command::Train(a) => {
            let out = cmd_train(&cfg, a.phase1_only)?;
            print!("{}", out.log.to_csv());
            println!("checkpoint: {}", out.phase1_checkpoint.display());
            if let Some(p) = out.phase2_checkpoint {
                println!("checkpoint: {}", p.display());
            }
        }
        Command::Evaluate(a) => {
            let report = cmd_evaluate(&cfg, a.method.into(), a.checkpoint.as_deref())?;
            println!("kmeans seed: {}", cfg.seed);
            print!("{}", report.to_json());
        }
        Command::Visualize(a) => {
            let v = cmd_visualize(&cfg, a.checkpoint.as_deref())?;
            println!("t-SNE points: {}, final KL {:.4}", v.points, v.final_kl);
            for (m, s) in v.silhouettes {
                println!("silhouette {:<12} {s:.4}", m.name());
            }
        }
        Command::InspectCheckpoint { path, latent_dim } => print!("{}", cmd_inspect(path, *latent_dim)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
