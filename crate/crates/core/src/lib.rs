//! Deep unsupervised clustering of handwritten digits.
//!
//! A small convolutional autoencoder is trained in two phases (pixel
//! reconstruction, then triplet refinement with neighbours mined from its own
//! latent space). The L2-normalised 64-d embeddings are clustered with KMeans
//! and scored with internal (Silhouette, Davies-Bouldin, Calinski-Harabasz)
//! and external (NMI, ARI, Hungarian-aligned accuracy) metrics.

pub mod cli;
pub mod cluster;
pub mod data;
pub mod embed_viz;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Element, Tape, Tensor, Var};
