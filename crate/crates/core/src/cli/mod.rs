//! Run configuration and the end-to-end commands behind the binary.

mod commands;
mod manifest;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use commands::{
    cmd_evaluate, cmd_inspect, cmd_train, cmd_visualize, evaluation_features, CheckpointSummary, TrainOutcome,
    VisualizeOutcome,
};
pub use manifest::{sha256_hex, Manifest, ManifestEntry, MANIFEST_FILE};

use crate::embed_viz::TsneConfig;
use crate::error::{Error, Result};
use crate::eval::NmiVariant;

pub const DATA_DIR_ENV: &str = "LATENT_CLUSTER_DATA_DIR";

/// Every knob of a run. Serialised as flat JSON; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub lr: f64,
    pub batch: usize,
    pub latent_dim: usize,
    pub margin: f64,
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub mining_subset: usize,
    pub neg_threshold: f64,
    pub k: usize,
    pub pca_components: usize,
    pub nmi_variant: NmiVariant,
    pub train_subset: Option<usize>,
    pub eval_subset: Option<usize>,
    pub silhouette_sample: Option<usize>,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    pub tsne_points: usize,
    pub tsne_perplexity: f64,
    pub tsne_iterations: usize,
    pub tsne_learning_rate: f64,
    pub tsne_early_exaggeration: f64,
    pub tsne_exaggeration_iters: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TsneConfig::default();
        Self {
            data_dir: None,
            output_dir: PathBuf::from("out"),
            seed: 0,
            lr: 1e-3,
            batch: 128,
            latent_dim: 64,
            margin: 1.0,
            phase1_epochs: 12,
            phase2_epochs: 5,
            mining_subset: 20_000,
            neg_threshold: 0.5,
            k: 10,
            pca_components: 50,
            nmi_variant: NmiVariant::Arithmetic,
            train_subset: None,
            eval_subset: None,
            silhouette_sample: None,
            kmeans_max_iter: 300,
            kmeans_tol: 1e-4,
            tsne_points: 3_000,
            tsne_perplexity: t.perplexity,
            tsne_iterations: t.iterations,
            tsne_learning_rate: t.learning_rate,
            tsne_early_exaggeration: t.early_exaggeration,
            tsne_exaggeration_iters: t.exaggeration_iters,
        }
    }
}

/// `(key, description)` for every config key, in declaration order.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("data_dir", "directory holding the four MNIST IDX files (falls back to $LATENT_CLUSTER_DATA_DIR)"),
    ("output_dir", "where checkpoints, logs, metrics and figures are written [out]"),
    ("seed", "master seed for every random stream [0]"),
    ("lr", "Adam learning rate, both phases [0.001]"),
    ("batch", "mini-batch size; triplets per batch in phase 2 [128]"),
    ("latent_dim", "embedding width [64]"),
    ("margin", "triplet hinge margin [1.0]"),
    ("phase1_epochs", "reconstruction epochs [12]"),
    ("phase2_epochs", "triplet epochs [5]"),
    ("mining_subset", "training samples used for triplet mining [20000]"),
    ("neg_threshold", "minimum anchor-negative Euclidean distance [0.5]"),
    ("k", "KMeans cluster count [10]"),
    ("pca_components", "PCA baseline width [50]"),
    ("nmi_variant", "NMI normaliser: \"arithmetic\" or \"geometric\" [arithmetic]"),
    ("train_subset", "use only the first N training images [all]"),
    ("eval_subset", "evaluate on the first N test images [all]"),
    ("silhouette_sample", "silhouette on a seeded random subset of this size [all]"),
    ("kmeans_max_iter", "Lloyd iteration cap [300]"),
    ("kmeans_tol", "stop when summed squared centroid shift is below this [0.0001]"),
    ("tsne_points", "first N test images shown in the t-SNE plot [3000]"),
    ("tsne_perplexity", "t-SNE perplexity [30]"),
    ("tsne_iterations", "t-SNE gradient steps [1000]"),
    ("tsne_learning_rate", "t-SNE step size [200]"),
    ("tsne_early_exaggeration", "affinity exaggeration during the first phase [12]"),
    ("tsne_exaggeration_iters", "length of the exaggeration phase [250]"),
];

/// Help text listing every config key.
pub fn config_help() -> String {
    let mut out = String::from("Config file keys (flat JSON, unknown keys rejected; CLI flags override):\n");
    for (key, doc) in CONFIG_KEYS {
        out.push_str(&format!("  {key:<24} {doc}\n"));
    }
    out
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch == 0 || self.latent_dim == 0 || self.k < 2 || self.pca_components == 0 {
            return bad("batch, latent_dim and pca_components must be positive and k at least 2");
        }
        if !(self.margin > 0.0) || !(self.neg_threshold >= 0.0) {
            return bad("margin must be positive and neg_threshold non-negative");
        }
        if self.mining_subset < 3 {
            return bad("mining_subset must be at least 3");
        }
        if self.kmeans_max_iter == 0 || !(self.kmeans_tol >= 0.0) {
            return bad("kmeans_max_iter must be positive and kmeans_tol non-negative");
        }
        Ok(())
    }

    /// `data_dir` from the config, else from the environment.
    pub fn resolve_data_dir(&self) -> Result<PathBuf> {
        if let Some(d) = &self.data_dir {
            return Ok(d.clone());
        }
        match std::env::var_os(DATA_DIR_ENV) {
            Some(d) if !d.is_empty() => Ok(PathBuf::from(d)),
            _ => Err(Error::Config(format!("no data_dir given and ${DATA_DIR_ENV} is unset"))),
        }
    }

    pub fn tsne(&self) -> TsneConfig {
        TsneConfig {
            perplexity: self.tsne_perplexity,
            iterations: self.tsne_iterations,
            learning_rate: self.tsne_learning_rate,
            early_exaggeration: self.tsne_early_exaggeration,
            exaggeration_iters: self.tsne_exaggeration_iters,
            seed: self.seed,
            ..TsneConfig::default()
        }
    }
}

/// Feature space clustered by `evaluate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    TripletAe,
    RawPixels,
    Pca50,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::TripletAe, Method::RawPixels, Method::Pca50];

    pub fn name(self) -> &'static str {
        match self {
            Method::TripletAe => "triplet_ae",
            Method::RawPixels => "raw_pixels",
            Method::Pca50 => "pca50",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Method::TripletAe => "Triplet-CNN-AE",
            Method::RawPixels => "Raw pixels",
            Method::Pca50 => "PCA-50",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// Process exit status for an error: 2 configuration, 3 data, 4 numeric.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Json(_) => 2,
        Error::Idx { .. } | Error::Io { .. } | Error::InsufficientData(_) | Error::Checkpoint(_) => 3,
        Error::NumericAbort { .. } => 4,
        _ => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_published_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!((c.lr, c.batch, c.latent_dim, c.margin), (0.001, 128, 64, 1.0));
        assert_eq!((c.phase1_epochs, c.phase2_epochs), (12, 5));
        assert_eq!((c.mining_subset, c.neg_threshold, c.k, c.pca_components), (20_000, 0.5, 10, 50));
        assert_eq!(c.tsne_points, 3_000);
        c.validate().unwrap();
    }

    #[test]
    fn every_key_is_documented_and_parsed() {
        let json: serde_json::Value = serde_json::from_str(&RunConfig::default().to_json()).unwrap();
        let keys: Vec<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
        let documented: Vec<&str> = CONFIG_KEYS.iter().map(|(k, _)| *k).collect();
        let mut a = keys.clone();
        let mut b = documented.clone();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
        let help = config_help();
        assert!(documented.iter().all(|k| help.contains(k)));
    }

    #[test]
    fn unknown_keys_and_partial_files() {
        assert!(matches!(RunConfig::from_json(r#"{"seedd": 1}"#), Err(Error::Config(_))));
        let c = RunConfig::from_json(r#"{"seed": 9, "nmi_variant": "geometric"}"#).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.nmi_variant, NmiVariant::Geometric);
        assert_eq!(c.phase1_epochs, 12);
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn methods_and_exit_codes() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()), Some(m));
        }
        assert_eq!(Method::parse("pca"), None);
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::InsufficientData("x".into())), 3);
        assert_eq!(
            exit_code(&Error::NumericAbort {
                phase: "phase1",
                epoch: 1,
                batch: 0
            }),
            4
        );
    }
}
