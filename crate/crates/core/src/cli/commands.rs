use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::Manifest;
use super::{Method, RunConfig};
use crate::cluster::{assignments_csv, kmeans_fit, pca_fit_transform, KMeansConfig};
use crate::data::{split, Dataset, MnistDir, SplitSpec};
use crate::embed_viz::{bar_svg, embeddings_csv, scatter_svg, tsne, tsne_csv};
use crate::error::{Error, Result};
use crate::eval::{MetricsReport, ReportOptions};
use crate::model::{load_checkpoint_with_latent, Autoencoder, Checkpoint, TrainingPhase};
use crate::nn::{AdamConfig, AdamState};
use crate::tensor::Tensor;
use crate::train::{derive_seed, train_phase1, train_phase2, Phase1Config, Phase2Config, TrainLog};

const SEED_SPLIT: u64 = 10;
const SEED_INIT: u64 = 11;
const SEED_PHASE1: u64 = 12;
const SEED_MINING_SUBSET: u64 = 13;
const SEED_PHASE2: u64 = 14;

pub const PHASE1_CHECKPOINT: &str = "phase1.ckpt";
pub const PHASE2_CHECKPOINT: &str = "phase2.ckpt";
pub const TRAIN_LOG: &str = "train_log.csv";

fn mnist(cfg: &RunConfig) -> Result<MnistDir> {
    let dir = MnistDir(cfg.resolve_data_dir()?);
    if let Some(missing) = dir.missing().first() {
        return Err(Error::io(
            format!("MNIST file {}", missing.display()),
            std::io::Error::new(std::io::ErrorKind::NotFound, "not found"),
        ));
    }
    Ok(dir)
}

fn prepare_output(cfg: &RunConfig) -> Result<Manifest> {
    fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| Error::io(format!("creating {}", cfg.output_dir.display()), e))?;
    let mut manifest = Manifest::load_or_default(&cfg.output_dir)?;
    manifest.config = Some(cfg.clone());
    Ok(manifest)
}

fn limit(ds: Dataset, n: Option<usize>) -> Result<Dataset> {
    match n {
        Some(n) if n < ds.len() => ds.head(n),
        _ => Ok(ds),
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: TrainLog,
    pub phase1_checkpoint: PathBuf,
    pub phase2_checkpoint: Option<PathBuf>,
}

/// Phase 1 on the 80 % split (validated on the rest), then Phase 2 unless
/// `phase1_only`. Writes a checkpoint after each phase plus the CSV log.
pub fn cmd_train(cfg: &RunConfig, phase1_only: bool) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = mnist(cfg)?;
    let mut manifest = prepare_output(cfg)?;
    let out = cfg.output_dir.clone();

    let full = limit(data.train()?, cfg.train_subset)?;
    let (train, val) = split(&full, SplitSpec::new(derive_seed(cfg.seed, SEED_SPLIT, 0)))?;
    drop(full);
    log::info!("training on {} samples, validating on {}", train.len(), val.len());

    let mut model = Autoencoder::<f32>::with_latent_dim(cfg.latent_dim, derive_seed(cfg.seed, SEED_INIT, 0));
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::for_params(&model.params(), adam_cfg);

    let p1 = Phase1Config {
        epochs: cfg.phase1_epochs,
        batch_size: cfg.batch,
        seed: derive_seed(cfg.seed, SEED_PHASE1, 0),
    };
    let mut log = train_phase1(&mut model, &mut adam, &train, &val, &p1)?;
    let ckpt = Checkpoint {
        model: model.clone(),
        phase: TrainingPhase::Reconstruction,
        epoch: cfg.phase1_epochs as u32,
        optimizer: Some(adam.clone()),
    };
    manifest.write(&out, PHASE1_CHECKPOINT, "checkpoint", &ckpt.to_bytes())?;

    let mut phase2_checkpoint = None;
    if !phase1_only {
        let mut idx: Vec<usize> = (0..train.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, SEED_MINING_SUBSET, 0)));
        idx.truncate(cfg.mining_subset.min(train.len()));
        idx.sort_unstable();
        let mining = train.images.select_rows(&idx)?;
        log::info!("mining triplets from {} samples", mining.rows());
        let p2 = Phase2Config {
            epochs: cfg.phase2_epochs,
            batch_size: cfg.batch,
            margin: cfg.margin,
            neg_threshold: cfg.neg_threshold,
            seed: derive_seed(cfg.seed, SEED_PHASE2, 0),
        };
        log.extend(train_phase2(&mut model, &mut adam, &mining, &val.images, &p2)?);
        let ckpt = Checkpoint {
            model,
            phase: TrainingPhase::Triplet,
            epoch: cfg.phase2_epochs as u32,
            optimizer: Some(adam),
        };
        manifest.write(&out, PHASE2_CHECKPOINT, "checkpoint", &ckpt.to_bytes())?;
        phase2_checkpoint = Some(out.join(PHASE2_CHECKPOINT));
    }
    manifest.write(&out, TRAIN_LOG, "log", log.to_csv().as_bytes())?;
    manifest.save(&out)?;
    Ok(TrainOutcome {
        log,
        phase1_checkpoint: out.join(PHASE1_CHECKPOINT),
        phase2_checkpoint,
    })
}

fn checkpoint_path(cfg: &RunConfig, explicit: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.to_path_buf());
    }
    let default = cfg.output_dir.join(PHASE2_CHECKPOINT);
    if default.is_file() {
        Ok(default)
    } else {
        Err(Error::Config(format!(
            "no checkpoint given and {} does not exist",
            default.display()
        )))
    }
}

fn load_model(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Autoencoder<f32>> {
    let path = checkpoint_path(cfg, checkpoint)?;
    if !path.is_file() {
        return Err(Error::Config(format!("checkpoint {} not found", path.display())));
    }
    Ok(load_checkpoint_with_latent(&path, cfg.latent_dim)?.model)
}

/// The feature matrix `method` clusters, plus the raw embeddings when the
/// method is the trained encoder.
pub fn evaluation_features(
    cfg: &RunConfig,
    method: Method,
    images: &Tensor<f32>,
    checkpoint: Option<&Path>,
) -> Result<(Tensor<f64>, Option<Tensor<f32>>)> {
    let n = images.rows();
    let flat = || images.cast::<f64>().reshape(&[n, images.numel() / n.max(1)]);
    match method {
        Method::TripletAe => {
            let z = load_model(cfg, checkpoint)?.encode(images)?;
            Ok((z.cast(), Some(z)))
        }
        Method::RawPixels => Ok((flat()?, None)),
        Method::Pca50 => Ok((pca_fit_transform(&flat()?, cfg.pca_components)?.0, None)),
    }
}

fn kmeans_config(cfg: &RunConfig) -> KMeansConfig {
    KMeansConfig {
        k: cfg.k,
        seed: cfg.seed,
        max_iter: cfg.kmeans_max_iter,
        tol: cfg.kmeans_tol,
    }
}

/// Cluster the test set in `method`'s feature space and score it.
pub fn cmd_evaluate(cfg: &RunConfig, method: Method, checkpoint: Option<&Path>) -> Result<MetricsReport> {
    cfg.validate()?;
    if method == Method::TripletAe {
        checkpoint_path(cfg, checkpoint)?;
    }
    let data = mnist(cfg)?;
    let mut manifest = prepare_output(cfg)?;
    let out = cfg.output_dir.clone();
    let test = limit(data.test()?, cfg.eval_subset)?;
    let truth: Vec<usize> = test.labels.iter().map(|&l| l as usize).collect();

    let (features, embeddings) = evaluation_features(cfg, method, &test.images, checkpoint)?;
    log::info!("{}: clustering {:?} with k={} seed={}", method.name(), features.shape(), cfg.k, cfg.seed);
    let km = kmeans_fit(&features, &kmeans_config(cfg))?;
    log::info!("kmeans converged after {} iterations, inertia {:.6}", km.iterations, km.inertia);
    let opts = ReportOptions {
        k: cfg.k,
        nmi_variant: cfg.nmi_variant,
        silhouette_sample: cfg.silhouette_sample,
        seed: cfg.seed,
    };
    let report = MetricsReport::compute(&features, &km.assignments, &truth, &opts)?;

    let name = method.name();
    manifest.write(&out, &format!("metrics_{name}.json"), "metrics", report.to_json().as_bytes())?;
    manifest.write(
        &out,
        &format!("assignments_{name}.csv"),
        "assignments",
        assignments_csv(&km.assignments).as_bytes(),
    )?;
    if let Some(z) = embeddings {
        let csv = embeddings_csv(&z, &km.assignments, &truth)?;
        manifest.write(&out, "embeddings.csv", "embeddings", csv.as_bytes())?;
    }
    manifest.save(&out)?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct VisualizeOutcome {
    pub points: usize,
    pub final_kl: f64,
    pub silhouettes: Vec<(Method, f64)>,
}

/// t-SNE of the first `tsne_points` test embeddings coloured by KMeans
/// cluster, and the per-method silhouette bar chart. Methods without a
/// metrics file in the output directory are evaluated first.
pub fn cmd_visualize(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<VisualizeOutcome> {
    cfg.validate()?;
    let model = load_model(cfg, checkpoint)?;
    let data = mnist(cfg)?;
    let out = cfg.output_dir.clone();
    let mut manifest = prepare_output(cfg)?;

    let test = data.test()?.head(cfg.tsne_points)?;
    let labels: Vec<usize> = test.labels.iter().map(|&l| l as usize).collect();
    let z = model.encode(&test.images)?.cast::<f64>();
    let km = kmeans_fit(&z, &kmeans_config(cfg))?;
    let t = tsne(&z, &cfg.tsne())?;
    log::info!("t-SNE on {} points: final KL {:.4}", test.len(), t.final_kl());
    manifest.write(&out, "tsne.csv", "embeddings", tsne_csv(&t.embedding, &km.assignments, &labels)?.as_bytes())?;
    let legend: Vec<String> = (0..cfg.k).map(|c| format!("cluster {c}")).collect();
    let svg = scatter_svg(&t.embedding, &km.assignments, &legend, "t-SNE of latent embeddings")?;
    manifest.write(&out, "tsne.svg", "figure", svg.as_bytes())?;
    manifest.save(&out)?;

    let mut silhouettes = Vec::new();
    for method in Method::ALL {
        let path = out.join(format!("metrics_{}.json", method.name()));
        let report = match fs::read_to_string(&path) {
            Ok(text) => MetricsReport::from_json(&text)?,
            Err(_) => cmd_evaluate(cfg, method, checkpoint)?,
        };
        silhouettes.push((method, report.silhouette));
    }
    let mut manifest = Manifest::load_or_default(&out)?;
    let names: Vec<&str> = silhouettes.iter().map(|(m, _)| m.display_name()).collect();
    let values: Vec<f64> = silhouettes.iter().map(|(_, s)| *s).collect();
    let bars = bar_svg(&names, &values, "Silhouette score by method")?;
    manifest.write(&out, "silhouette_bars.svg", "figure", bars.as_bytes())?;
    manifest.save(&out)?;
    Ok(VisualizeOutcome {
        points: test.len(),
        final_kl: t.final_kl(),
        silhouettes,
    })
}

#[derive(Debug, Clone)]
pub struct CheckpointSummary {
    pub phase: TrainingPhase,
    pub epoch: u32,
    pub latent_dim: usize,
    pub parameters: usize,
    pub encoder_parameters: usize,
    pub decoder_parameters: usize,
    pub optimizer_steps: Option<u64>,
    pub tensors: Vec<(String, Vec<usize>)>,
}

impl fmt::Display for CheckpointSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "phase: {}", self.phase.name())?;
        writeln!(f, "epoch: {}", self.epoch)?;
        writeln!(f, "latent_dim: {}", self.latent_dim)?;
        writeln!(f, "trainable parameters: {}", self.parameters)?;
        writeln!(f, "  encoder: {}", self.encoder_parameters)?;
        writeln!(f, "  decoder: {}", self.decoder_parameters)?;
        match self.optimizer_steps {
            Some(t) => writeln!(f, "optimizer: adam, {t} steps")?,
            None => writeln!(f, "optimizer: none")?,
        }
        for (name, shape) in &self.tensors {
            writeln!(f, "  {name:<24} {shape:?}")?;
        }
        Ok(())
    }
}

pub fn cmd_inspect(path: &Path, latent_dim: usize) -> Result<CheckpointSummary> {
    let ckpt = load_checkpoint_with_latent(path, latent_dim)?;
    let m = &ckpt.model;
    let tensors = Autoencoder::<f32>::param_names()
        .iter()
        .zip(m.params())
        .chain(Autoencoder::<f32>::buffer_names().iter().zip(m.buffers()))
        .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
        .collect();
    Ok(CheckpointSummary {
        phase: ckpt.phase,
        epoch: ckpt.epoch,
        latent_dim: m.latent_dim(),
        parameters: m.count_parameters(),
        encoder_parameters: m.count_encoder_parameters(),
        decoder_parameters: m.count_decoder_parameters(),
        optimizer_steps: ckpt.optimizer.as_ref().map(|o| o.t),
        tensors,
    })
}
