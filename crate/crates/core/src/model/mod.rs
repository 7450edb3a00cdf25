//! The convolutional autoencoder.
//!
//! ```text
//! encoder: [N,1,28,28] → Conv 1→32 (s2) → BN → ReLU → Conv 32→64 (s2) → BN → ReLU
//!          → flatten [N,3136] → Linear 3136→64 → L2-normalise rows
//! decoder: [N,64] → Linear 64→3136 → ReLU → reshape [N,64,7,7]
//!          → ConvT 64→32 (s2) → BN → ReLU → ConvT 32→1 (s2) → Sigmoid
//! ```

mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{l2_normalize_rows, BatchNorm2d, BatchStats, Conv2d, ConvTranspose2d, Linear, Mode};
use crate::tensor::{Element, Tape, Tensor, Var};

pub use checkpoint::{load_checkpoint, load_checkpoint_with_latent, save_checkpoint, Checkpoint, TrainingPhase, MAGIC, VERSION};

pub const IMAGE_SIDE: usize = 28;
pub const LATENT_DIM: usize = 64;
/// Trainable parameter count of the default architecture.
pub const PARAMETER_COUNT: usize = 442_433;

const C1: usize = 32;
const C2: usize = 64;
const SIDE2: usize = IMAGE_SIDE / 4;
const FLAT: usize = C2 * SIDE2 * SIDE2;

/// Parameter slots `0..ENCODER_SLOTS` belong to the encoder.
pub const ENCODER_SLOTS: usize = 10;

/// Encoder rows per inference chunk.
const INFER_CHUNK: usize = 256;

const PARAM_NAMES: [&str; 18] = [
    "enc.conv1.weight",
    "enc.conv1.bias",
    "enc.bn1.gamma",
    "enc.bn1.beta",
    "enc.conv2.weight",
    "enc.conv2.bias",
    "enc.bn2.gamma",
    "enc.bn2.beta",
    "enc.fc.weight",
    "enc.fc.bias",
    "dec.fc.weight",
    "dec.fc.bias",
    "dec.deconv1.weight",
    "dec.deconv1.bias",
    "dec.bn.gamma",
    "dec.bn.beta",
    "dec.deconv2.weight",
    "dec.deconv2.bias",
];

const BUFFER_NAMES: [&str; 6] = [
    "enc.bn1.running_mean",
    "enc.bn1.running_var",
    "enc.bn2.running_mean",
    "enc.bn2.running_var",
    "dec.bn.running_mean",
    "dec.bn.running_var",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder<T: Element = f32> {
    latent_dim: usize,
    pub enc_conv1: Conv2d<T>,
    pub enc_bn1: BatchNorm2d<T>,
    pub enc_conv2: Conv2d<T>,
    pub enc_bn2: BatchNorm2d<T>,
    pub enc_fc: Linear<T>,
    pub dec_fc: Linear<T>,
    pub dec_deconv1: ConvTranspose2d<T>,
    pub dec_bn: BatchNorm2d<T>,
    pub dec_deconv2: ConvTranspose2d<T>,
}

/// Tape handles for every trainable parameter, in canonical slot order.
#[derive(Debug, Clone)]
pub struct ParamVars(Vec<Var>);

impl ParamVars {
    /// Wrap handles already on a tape, in canonical slot order.
    pub fn from_vars(vars: Vec<Var>) -> Result<Self> {
        if vars.len() != Autoencoder::<f32>::param_names().len() {
            return Err(Error::dim(format!("expected {} parameter handles, got {}", Autoencoder::<f32>::param_names().len(), vars.len())));
        }
        Ok(Self(vars))
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }

    fn slot(&self, from: usize, n: usize) -> &[Var] {
        &self.0[from..from + n]
    }
}

/// Batch statistics observed by the three batch-norm layers during a
/// training-mode forward pass.
#[derive(Debug, Clone, Default)]
pub struct BnUpdates<T> {
    pub enc_bn1: Option<BatchStats<T>>,
    pub enc_bn2: Option<BatchStats<T>>,
    pub dec_bn: Option<BatchStats<T>>,
}

impl<T: Element> Autoencoder<T> {
    pub fn new(seed: u64) -> Self {
        Self::with_latent_dim(LATENT_DIM, seed)
    }

    pub fn with_latent_dim(latent_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            latent_dim,
            enc_conv1: Conv2d::new(1, C1, &mut rng),
            enc_bn1: BatchNorm2d::new(C1),
            enc_conv2: Conv2d::new(C1, C2, &mut rng),
            enc_bn2: BatchNorm2d::new(C2),
            enc_fc: Linear::new(FLAT, latent_dim, &mut rng),
            dec_fc: Linear::new(latent_dim, FLAT, &mut rng),
            dec_deconv1: ConvTranspose2d::new(C2, C1, &mut rng),
            dec_bn: BatchNorm2d::new(C1),
            dec_deconv2: ConvTranspose2d::new(C1, 1, &mut rng),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn params(&self) -> [&Tensor<T>; 18] {
        [
            &self.enc_conv1.weight,
            &self.enc_conv1.bias,
            &self.enc_bn1.gamma,
            &self.enc_bn1.beta,
            &self.enc_conv2.weight,
            &self.enc_conv2.bias,
            &self.enc_bn2.gamma,
            &self.enc_bn2.beta,
            &self.enc_fc.weight,
            &self.enc_fc.bias,
            &self.dec_fc.weight,
            &self.dec_fc.bias,
            &self.dec_deconv1.weight,
            &self.dec_deconv1.bias,
            &self.dec_bn.gamma,
            &self.dec_bn.beta,
            &self.dec_deconv2.weight,
            &self.dec_deconv2.bias,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor<T>; 18] {
        [
            &mut self.enc_conv1.weight,
            &mut self.enc_conv1.bias,
            &mut self.enc_bn1.gamma,
            &mut self.enc_bn1.beta,
            &mut self.enc_conv2.weight,
            &mut self.enc_conv2.bias,
            &mut self.enc_bn2.gamma,
            &mut self.enc_bn2.beta,
            &mut self.enc_fc.weight,
            &mut self.enc_fc.bias,
            &mut self.dec_fc.weight,
            &mut self.dec_fc.bias,
            &mut self.dec_deconv1.weight,
            &mut self.dec_deconv1.bias,
            &mut self.dec_bn.gamma,
            &mut self.dec_bn.beta,
            &mut self.dec_deconv2.weight,
            &mut self.dec_deconv2.bias,
        ]
    }

    pub fn param_names() -> &'static [&'static str] {
        &PARAM_NAMES
    }

    pub fn buffers(&self) -> [&Tensor<T>; 6] {
        [
            &self.enc_bn1.running_mean,
            &self.enc_bn1.running_var,
            &self.enc_bn2.running_mean,
            &self.enc_bn2.running_var,
            &self.dec_bn.running_mean,
            &self.dec_bn.running_var,
        ]
    }

    pub fn buffers_mut(&mut self) -> [&mut Tensor<T>; 6] {
        [
            &mut self.enc_bn1.running_mean,
            &mut self.enc_bn1.running_var,
            &mut self.enc_bn2.running_mean,
            &mut self.enc_bn2.running_var,
            &mut self.dec_bn.running_mean,
            &mut self.dec_bn.running_var,
        ]
    }

    pub fn buffer_names() -> &'static [&'static str] {
        &BUFFER_NAMES
    }

    /// Trainable element count (batch-norm affine terms included, running
    /// statistics excluded).
    pub fn count_parameters(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    pub fn count_encoder_parameters(&self) -> usize {
        self.params()[..ENCODER_SLOTS].iter().map(|p| p.numel()).sum()
    }

    pub fn count_decoder_parameters(&self) -> usize {
        self.params()[ENCODER_SLOTS..].iter().map(|p| p.numel()).sum()
    }

    /// Same weights at another precision.
    pub fn cast<U: Element>(&self) -> Autoencoder<U> {
        let mut out = Autoencoder::<U>::with_latent_dim(self.latent_dim, 0);
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            *dst = src.cast();
        }
        for (dst, src) in out.buffers_mut().into_iter().zip(self.buffers()) {
            *dst = src.cast();
        }
        out
    }

    /// Put every parameter on `tape`, trainable or constant.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> ParamVars {
        ParamVars(
            self.params()
                .into_iter()
                .map(|p| if trainable { tape.param(p.clone()) } else { tape.constant(p.clone()) })
                .collect(),
        )
    }

    /// Encoder graph. Returns L2-normalised `[N, latent]` embeddings.
    pub fn encoder_graph(
        &self,
        tape: &mut Tape<T>,
        p: &ParamVars,
        x: Var,
        mode: Mode,
        updates: &mut BnUpdates<T>,
    ) -> Result<Var> {
        let shape = tape.shape(x);
        if shape.len() != 4 || shape[1..] != [1, IMAGE_SIDE, IMAGE_SIDE] {
            return Err(Error::dim(format!(
                "encoder expects [N,1,{IMAGE_SIDE},{IMAGE_SIDE}] images, got {shape:?}"
            )));
        }
        let n = shape[0];
        let h = self.enc_conv1.forward(tape, p.slot(0, 2), x)?;
        let (h, s1) = self.enc_bn1.forward(tape, p.slot(2, 2), h, mode)?;
        let h = tape.relu(h);
        let h = self.enc_conv2.forward(tape, p.slot(4, 2), h)?;
        let (h, s2) = self.enc_bn2.forward(tape, p.slot(6, 2), h, mode)?;
        let h = tape.relu(h);
        let h = tape.reshape(h, &[n, FLAT])?;
        let z = self.enc_fc.forward(tape, p.slot(8, 2), h)?;
        updates.enc_bn1 = s1;
        updates.enc_bn2 = s2;
        l2_normalize_rows(tape, z)
    }

    /// Decoder graph. Returns `[N, 1, 28, 28]` values in (0, 1).
    pub fn decoder_graph(
        &self,
        tape: &mut Tape<T>,
        p: &ParamVars,
        z: Var,
        mode: Mode,
        updates: &mut BnUpdates<T>,
    ) -> Result<Var> {
        let shape = tape.shape(z);
        if shape.len() != 2 || shape[1] != self.latent_dim {
            return Err(Error::dim(format!(
                "decoder expects [N,{}] latents, got {shape:?}",
                self.latent_dim
            )));
        }
        let n = shape[0];
        let h = self.dec_fc.forward(tape, p.slot(10, 2), z)?;
        let h = tape.relu(h);
        let h = tape.reshape(h, &[n, C2, SIDE2, SIDE2])?;
        let h = self.dec_deconv1.forward(tape, p.slot(12, 2), h)?;
        let (h, s) = self.dec_bn.forward(tape, p.slot(14, 2), h, mode)?;
        let h = tape.relu(h);
        let h = self.dec_deconv2.forward(tape, p.slot(16, 2), h)?;
        updates.dec_bn = s;
        Ok(tape.sigmoid(h))
    }

    pub fn apply_bn_updates(&mut self, updates: &BnUpdates<T>) {
        if let Some(s) = &updates.enc_bn1 {
            self.enc_bn1.update_running(s);
        }
        if let Some(s) = &updates.enc_bn2 {
            self.enc_bn2.update_running(s);
        }
        if let Some(s) = &updates.dec_bn {
            self.dec_bn.update_running(s);
        }
    }

    fn infer_chunked(&self, input: &Tensor<T>, f: impl Fn(&Self, &mut Tape<T>, &ParamVars, Var) -> Result<Var>) -> Result<Tensor<T>> {
        let n = input.rows();
        let mut parts = Vec::new();
        let mut start = 0;
        while start < n {
            let end = (start + INFER_CHUNK).min(n);
            let mut tape = Tape::new();
            let p = self.bind(&mut tape, false);
            let x = tape.constant(input.slice_rows(start, end)?);
            let y = f(self, &mut tape, &p, x)?;
            parts.push(tape.value(y).clone());
            start = end;
        }
        if parts.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let refs: Vec<&Tensor<T>> = parts.iter().collect();
        Tensor::concat_rows(&refs)
    }

    /// Eval-mode embeddings of `images[N,1,28,28]` → `[N, latent]`, rows unit-norm.
    pub fn encode(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        self.infer_chunked(images, |m, tape, p, x| {
            m.encoder_graph(tape, p, x, Mode::Eval, &mut BnUpdates::default())
        })
    }

    /// Eval-mode decode of `z[N, latent]` → `[N,1,28,28]`.
    pub fn decode(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        self.infer_chunked(z, |m, tape, p, x| {
            m.decoder_graph(tape, p, x, Mode::Eval, &mut BnUpdates::default())
        })
    }

    pub fn reconstruct(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        self.infer_chunked(images, |m, tape, p, x| {
            let mut u = BnUpdates::default();
            let z = m.encoder_graph(tape, p, x, Mode::Eval, &mut u)?;
            m.decoder_graph(tape, p, z, Mode::Eval, &mut u)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_gradients_sampled, random_tensor};

    fn images(n: usize, seed: u64) -> Tensor<f32> {
        random_tensor(&[n, 1, 28, 28], seed).map(|v| 0.5 * (v + 1.0)).cast()
    }

    #[test]
    fn parameter_counts() {
        let m = Autoencoder::<f32>::new(0);
        assert_eq!(m.count_parameters(), PARAMETER_COUNT);
        assert_eq!(m.count_encoder_parameters(), 219_776);
        assert_eq!(m.count_decoder_parameters(), 222_657);
    }

    #[test]
    fn shape_pipeline() {
        let m = Autoencoder::<f32>::new(1);
        let mut tape = Tape::new();
        let p = m.bind(&mut tape, false);
        let x = tape.constant(images(1, 2));
        let mut u = BnUpdates::default();
        let h1 = m.enc_conv1.forward(&mut tape, p.slot(0, 2), x).unwrap();
        assert_eq!(tape.shape(h1), &[1, 32, 14, 14]);
        let h2 = m.enc_conv2.forward(&mut tape, p.slot(4, 2), h1).unwrap();
        assert_eq!(tape.shape(h2), &[1, 64, 7, 7]);
        let z = m.encoder_graph(&mut tape, &p, x, Mode::Eval, &mut u).unwrap();
        assert_eq!(tape.shape(z), &[1, 64]);
        let y = m.decoder_graph(&mut tape, &p, z, Mode::Eval, &mut u).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 28, 28]);
    }

    #[test]
    fn encode_rows_are_unit_norm_and_deterministic() {
        let m = Autoencoder::<f32>::new(3);
        let x = images(5, 4);
        let dup = Tensor::concat_rows(&[&x, &x.select_rows(&[0]).unwrap()]).unwrap();
        let z = m.encode(&dup).unwrap();
        assert_eq!(z.shape(), &[6, 64]);
        for i in 0..6 {
            let norm: f32 = z.row(i).iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!((norm - 1.0).abs() < 1e-5);
        }
        assert_eq!(z.row(0), z.row(5));
        assert!(matches!(m.encode(&Tensor::zeros(&[2, 1, 27, 28])), Err(Error::Dimension(_))));
    }

    #[test]
    fn decode_range() {
        let m = Autoencoder::<f32>::new(5);
        let y = m.decode(&Tensor::zeros(&[1, 64])).unwrap();
        assert_eq!(y.shape(), &[1, 1, 28, 28]);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let z = random_tensor(&[4, 64], 6).cast::<f32>();
        let y = m.decode(&z).unwrap();
        assert!(y.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(m.decode(&Tensor::zeros(&[1, 32])).is_err());
    }

    #[test]
    fn train_mode_reports_batch_stats() {
        let mut m = Autoencoder::<f32>::new(7);
        let mut tape = Tape::new();
        let p = m.bind(&mut tape, true);
        let x = tape.constant(images(3, 8));
        let mut u = BnUpdates::default();
        let z = m.encoder_graph(&mut tape, &p, x, Mode::Train, &mut u).unwrap();
        let _ = m.decoder_graph(&mut tape, &p, z, Mode::Train, &mut u).unwrap();
        assert!(u.enc_bn1.is_some() && u.enc_bn2.is_some() && u.dec_bn.is_some());
        let before = m.enc_bn1.running_mean.clone();
        m.apply_bn_updates(&u);
        assert_ne!(before, m.enc_bn1.running_mean);
    }

    #[test]
    fn full_autoencoder_gradients_match_finite_differences() {
        // Two-image batch through encoder + decoder in 64-bit, training-mode
        // batch norm, MSE reconstruction loss. A fixed sample of elements of
        // every parameter tensor is probed.
        let model = Autoencoder::<f64>::new(9);
        let x = random_tensor(&[2, 1, 28, 28], 10).map(|v| 0.5 * (v + 1.0));
        let inputs: Vec<Tensor<f64>> = model.params().into_iter().cloned().collect();
        let err = check_gradients_sampled(&inputs, 6, 11, |tape, vars| {
            let p = ParamVars(vars.to_vec());
            let xv = tape.constant(x.clone());
            let mut u = BnUpdates::default();
            let z = model.encoder_graph(tape, &p, xv, Mode::Train, &mut u)?;
            let y = model.decoder_graph(tape, &p, z, Mode::Train, &mut u)?;
            crate::nn::mse_loss(tape, y, xv)
        })
        .unwrap();
        assert!(err < 1e-3, "max rel err {err}");
    }
}
