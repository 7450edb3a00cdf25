//! Two-phase training: reconstruction, then triplet refinement on neighbours
//! mined from the model's own latent space.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{batch_indices, Dataset};
use crate::error::{Error, Result};
use crate::model::{Autoencoder, BnUpdates, ENCODER_SLOTS};
use crate::nn::{mse_loss, triplet_loss, triplet_loss_value, AdamState, Mode};
use crate::tensor::{Tape, Tensor};

/// Decorrelated sub-seed for `(stream, index)`, e.g. one shuffle per epoch.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 finaliser over a mixed key
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_PHASE1: u64 = 1;
const STREAM_PHASE2: u64 = 2;
const STREAM_VAL_MINING: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Reconstruction,
    Triplet,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Reconstruction => "phase1",
            Phase::Triplet => "phase2",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "phase1" => Some(Phase::Reconstruction),
            "phase2" => Some(Phase::Triplet),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub phase: Phase,
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    /// Loss of the very first optimisation batch, if any ran.
    pub first_batch_loss: Option<f64>,
}

pub const LOG_HEADER: &str = "phase,epoch,train_loss,val_loss,seconds";

impl TrainLog {
    pub fn extend(&mut self, other: TrainLog) {
        if self.first_batch_loss.is_none() {
            self.first_batch_loss = other.first_batch_loss;
        }
        self.records.extend(other.records);
    }

    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(move |r| r.phase == phase)
    }

    /// CSV with header `phase,epoch,train_loss,val_loss,seconds`. Losses are
    /// written with round-trip precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(LOG_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{:?},{:?},{:.3}",
                r.phase.name(),
                r.epoch,
                r.train_loss,
                r.val_loss,
                r.seconds
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(LOG_HEADER) {
            return Err(Error::Contract("train log: missing or wrong header".into()));
        }
        let bad = |line: &str| Error::Contract(format!("train log: malformed row `{line}`"));
        let mut records = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(line));
            }
            records.push(EpochRecord {
                phase: Phase::parse(f[0]).ok_or_else(|| bad(line))?,
                epoch: f[1].parse().map_err(|_| bad(line))?,
                train_loss: f[2].parse().map_err(|_| bad(line))?,
                val_loss: f[3].parse().map_err(|_| bad(line))?,
                seconds: f[4].parse().map_err(|_| bad(line))?,
            });
        }
        Ok(Self {
            records,
            first_batch_loss: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phase1Config {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for Phase1Config {
    fn default() -> Self {
        Self {
            epochs: 12,
            batch_size: 128,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phase2Config {
    pub epochs: usize,
    pub batch_size: usize,
    pub margin: f64,
    /// Minimum Euclidean anchor-negative distance.
    pub neg_threshold: f64,
    pub seed: u64,
}

impl Default for Phase2Config {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 128,
            margin: 1.0,
            neg_threshold: 0.5,
            seed: 0,
        }
    }
}

fn check_finite(loss: f64, phase: Phase, epoch: usize, batch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        log::error!("{} epoch {epoch} batch {batch}: loss is {loss}", phase.name());
        Err(Error::NumericAbort {
            phase: phase.name(),
            epoch,
            batch,
        })
    }
}

/// Mean squared reconstruction error over every pixel of `images` (eval mode).
pub fn reconstruction_loss(model: &Autoencoder<f32>, images: &Tensor<f32>) -> Result<f64> {
    let recon = model.reconstruct(images)?;
    let sum: f64 = recon
        .data()
        .iter()
        .zip(images.data())
        .map(|(&r, &x)| ((r - x) as f64).powi(2))
        .sum();
    Ok(sum / images.numel() as f64)
}

/// Reconstruction training. `optimizer` must have one slot per parameter.
pub fn train_phase1(
    model: &mut Autoencoder<f32>,
    optimizer: &mut AdamState,
    train: &Dataset,
    val: &Dataset,
    cfg: &Phase1Config,
) -> Result<TrainLog> {
    let mut log = TrainLog::default();
    if cfg.epochs == 0 {
        return Ok(log);
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::InsufficientData("phase 1 needs non-empty train and validation sets".into()));
    }
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let order = batch_indices(
            train.len(),
            cfg.batch_size,
            true,
            derive_seed(cfg.seed, STREAM_PHASE1, epoch as u64),
        );
        let mut weighted = 0.0;
        for (b, idx) in order.iter().enumerate() {
            let x = train.images.select_rows(idx)?;
            let mut tape = Tape::new();
            let p = model.bind(&mut tape, true);
            let xv = tape.constant(x);
            let mut updates = BnUpdates::default();
            let z = model.encoder_graph(&mut tape, &p, xv, Mode::Train, &mut updates)?;
            let y = model.decoder_graph(&mut tape, &p, z, Mode::Train, &mut updates)?;
            let loss = mse_loss(&mut tape, y, xv)?;
            let value = tape.value(loss).item()? as f64;
            check_finite(value, Phase::Reconstruction, epoch, b)?;
            tape.backward(loss)?;
            let grads: Vec<_> = p.vars().iter().map(|&v| tape.take_grad(v)).collect();
            optimizer.step(&mut model.params_mut(), &grads)?;
            model.apply_bn_updates(&updates);
            log.first_batch_loss.get_or_insert(value);
            weighted += value * idx.len() as f64;
        }
        let train_loss = weighted / train.len() as f64;
        let val_loss = reconstruction_loss(model, &val.images)?;
        check_finite(val_loss, Phase::Reconstruction, epoch, order.len())?;
        let seconds = started.elapsed().as_secs_f64();
        log::info!("phase1 epoch {epoch}: train mse {train_loss:.6}, val mse {val_loss:.6} ({seconds:.1}s)");
        log.records.push(EpochRecord {
            phase: Phase::Reconstruction,
            epoch,
            train_loss,
            val_loss,
            seconds,
        });
    }
    Ok(log)
}

/// Indices into the mining set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripletIndex {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    /// No point lay beyond the distance threshold; `negative` is the farthest
    /// point instead.
    pub fallback: bool,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mine one triplet per row of `embeddings` (anchors in seeded random order).
/// The positive is the exact nearest other row (lowest index on ties); the
/// negative is uniform among rows farther than `threshold`.
pub fn mine_from_embeddings(embeddings: &Tensor<f32>, threshold: f64, seed: u64) -> Result<Vec<TripletIndex>> {
    if embeddings.rank() != 2 {
        return Err(Error::dim(format!("mining needs [N, D] embeddings, got {:?}", embeddings.shape())));
    }
    let n = embeddings.rows();
    if n < 3 {
        return Err(Error::InsufficientData(format!("mining needs at least 3 samples, got {n}")));
    }
    let z: Vec<Vec<f64>> = (0..n).map(|i| embeddings.row(i).iter().map(|&v| v as f64).collect()).collect();
    let limit = threshold * threshold;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut anchors: Vec<usize> = (0..n).collect();
    anchors.shuffle(&mut rng);

    let mut dist = vec![0.0; n];
    let mut far = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    for &a in &anchors {
        far.clear();
        let (mut pos, mut pos_d) = (usize::MAX, f64::INFINITY);
        let (mut max_j, mut max_d) = (usize::MAX, f64::NEG_INFINITY);
        for j in 0..n {
            if j == a {
                continue;
            }
            let d = squared_distance(&z[a], &z[j]);
            dist[j] = d;
            if d < pos_d {
                (pos, pos_d) = (j, d);
            }
            if d > max_d {
                (max_j, max_d) = (j, d);
            }
            if d > limit {
                far.push(j);
            }
        }
        let (negative, fallback) = if far.is_empty() {
            (max_j, true)
        } else {
            (far[rng.random_range(0..far.len())], false)
        };
        out.push(TripletIndex {
            anchor: a,
            positive: pos,
            negative,
            fallback,
        });
    }
    Ok(out)
}

/// Mine triplets from eval-mode embeddings of `images`. Labels are not an
/// input.
pub fn mine_triplets(
    model: &Autoencoder<f32>,
    images: &Tensor<f32>,
    threshold: f64,
    seed: u64,
) -> Result<Vec<TripletIndex>> {
    let z = model.encode(images)?;
    mine_from_embeddings(&z, threshold, seed)
}

/// Mean triplet loss of `triplets` over precomputed embeddings.
pub fn triplet_set_loss(embeddings: &Tensor<f32>, triplets: &[TripletIndex], margin: f64) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let pick = |f: fn(&TripletIndex) -> usize| -> Result<Tensor<f32>> {
        embeddings.select_rows(&triplets.iter().map(f).collect::<Vec<_>>())
    };
    let (a, p, n) = (pick(|t| t.anchor)?, pick(|t| t.positive)?, pick(|t| t.negative)?);
    Ok(triplet_loss_value(a.data(), p.data(), n.data(), embeddings.row_len(), margin))
}

/// Triplet refinement. Triplets are re-mined from the current embeddings at
/// the start of every epoch; only the triplet loss is optimised, so decoder
/// gradients are zero.
pub fn train_phase2(
    model: &mut Autoencoder<f32>,
    optimizer: &mut AdamState,
    mining_images: &Tensor<f32>,
    val_images: &Tensor<f32>,
    cfg: &Phase2Config,
) -> Result<TrainLog> {
    let mut log = TrainLog::default();
    if cfg.epochs == 0 {
        return Ok(log);
    }
    let sizes: Vec<usize> = model.params().iter().map(|p| p.numel()).collect();
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let triplets = mine_triplets(
            model,
            mining_images,
            cfg.neg_threshold,
            derive_seed(cfg.seed, STREAM_PHASE2, epoch as u64),
        )?;
        let fallbacks = triplets.iter().filter(|t| t.fallback).count();
        if fallbacks > 0 {
            log::warn!("phase2 epoch {epoch}: {fallbacks} triplets use the farthest-point fallback");
        }
        let mut weighted = 0.0;
        let batch = cfg.batch_size.max(1);
        for (b, chunk) in triplets.chunks(batch).enumerate() {
            let rows: Vec<usize> = chunk
                .iter()
                .map(|t| t.anchor)
                .chain(chunk.iter().map(|t| t.positive))
                .chain(chunk.iter().map(|t| t.negative))
                .collect();
            let x = mining_images.select_rows(&rows)?;
            let m = chunk.len();
            let mut tape = Tape::new();
            let p = model.bind(&mut tape, true);
            let xv = tape.constant(x);
            let mut updates = BnUpdates::default();
            let z = model.encoder_graph(&mut tape, &p, xv, Mode::Train, &mut updates)?;
            let za = tape.slice_rows(z, 0, m)?;
            let zp = tape.slice_rows(z, m, 2 * m)?;
            let zn = tape.slice_rows(z, 2 * m, 3 * m)?;
            let loss = triplet_loss(&mut tape, za, zp, zn, cfg.margin)?;
            let value = tape.value(loss).item()? as f64;
            check_finite(value, Phase::Triplet, epoch, b)?;
            tape.backward(loss)?;
            let grads: Vec<_> = p
                .vars()
                .iter()
                .enumerate()
                .map(|(slot, &v)| {
                    let g = tape.take_grad(v);
                    debug_assert!(slot < ENCODER_SLOTS || g.is_none());
                    Some(g.unwrap_or_else(|| vec![0.0; sizes[slot]]))
                })
                .collect();
            optimizer.step(&mut model.params_mut(), &grads)?;
            model.apply_bn_updates(&updates);
            log.first_batch_loss.get_or_insert(value);
            weighted += value * m as f64;
        }
        let train_loss = weighted / triplets.len() as f64;

        let val_z = model.encode(val_images)?;
        let val_triplets =
            mine_from_embeddings(&val_z, cfg.neg_threshold, derive_seed(cfg.seed, STREAM_VAL_MINING, epoch as u64))?;
        let val_loss = triplet_set_loss(&val_z, &val_triplets, cfg.margin)?;
        check_finite(val_loss, Phase::Triplet, epoch, triplets.len().div_ceil(batch))?;
        let seconds = started.elapsed().as_secs_f64();
        log::info!("phase2 epoch {epoch}: train triplet {train_loss:.6}, val triplet {val_loss:.6} ({seconds:.1}s)");
        log.records.push(EpochRecord {
            phase: Phase::Triplet,
            epoch,
            train_loss,
            val_loss,
            seconds,
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::AdamConfig;
    use crate::tensor::gradcheck::random_tensor;

    fn brute_force_nearest(z: &Tensor<f32>, a: usize) -> usize {
        let mut best = (usize::MAX, f64::INFINITY);
        for j in 0..z.rows() {
            if j == a {
                continue;
            }
            let mut d = 0.0f64;
            for k in 0..z.row_len() {
                let diff = z.row(a)[k] as f64 - z.row(j)[k] as f64;
                d += diff * diff;
            }
            if d < best.1 {
                best = (j, d);
            }
        }
        best.0
    }

    fn euclid(z: &Tensor<f32>, i: usize, j: usize) -> f64 {
        z.row(i)
            .iter()
            .zip(z.row(j))
            .map(|(&x, &y)| ((x - y) as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    fn toy_dataset(n: usize, seed: u64) -> Dataset {
        // smooth blobs so reconstruction has learnable structure
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(n * 784);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let (cy, cx): (f32, f32) = (rng.random_range(6.0..22.0), rng.random_range(6.0..22.0));
            for y in 0..28 {
                for x in 0..28 {
                    let d2 = (y as f32 - cy).powi(2) + (x as f32 - cx).powi(2);
                    data.push((-d2 / 18.0).exp());
                }
            }
            labels.push(rng.random_range(0..10u8));
        }
        Dataset::new(Tensor::new(&[n, 1, 28, 28], data).unwrap(), labels).unwrap()
    }

    fn adam_for(model: &Autoencoder<f32>) -> AdamState {
        AdamState::for_params(&model.params(), AdamConfig::default())
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 1, 1), derive_seed(1, 1, 2));
        assert_ne!(derive_seed(1, 1, 1), derive_seed(1, 2, 1));
        assert_eq!(derive_seed(7, 3, 9), derive_seed(7, 3, 9));
    }

    #[test]
    fn equilateral_triangle_mining() {
        // side 1.2 in the plane
        let h = 1.2 * 3f32.sqrt() / 2.0;
        let z = Tensor::new(&[3, 2], vec![0.0, 0.0, 1.2, 0.0, 0.6, h]).unwrap();
        let t = mine_from_embeddings(&z, 0.5, 3).unwrap();
        assert_eq!(t.len(), 3);
        let mut anchors: Vec<usize> = t.iter().map(|t| t.anchor).collect();
        anchors.sort_unstable();
        assert_eq!(anchors, vec![0, 1, 2]);
        for tr in &t {
            assert_ne!(tr.anchor, tr.positive);
            assert_eq!(tr.positive, brute_force_nearest(&z, tr.anchor));
            assert!(!tr.fallback);
            assert!(euclid(&z, tr.anchor, tr.negative) > 0.5);
        }
    }

    #[test]
    fn identical_points_take_fallback() {
        let z = Tensor::full(&[4, 3], 0.25f32);
        let t = mine_from_embeddings(&z, 0.5, 0).unwrap();
        assert!(t.iter().all(|t| t.fallback && t.anchor != t.positive && t.anchor != t.negative));
        assert!(matches!(
            mine_from_embeddings(&Tensor::<f32>::zeros(&[2, 3]), 0.5, 0),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn positives_match_brute_force_on_synthetic_set() {
        let z = random_tensor(&[100, 8], 17).cast::<f32>();
        let t = mine_from_embeddings(&z, 0.5, 4).unwrap();
        assert_eq!(t.len(), 100);
        for tr in &t {
            assert_eq!(tr.positive, brute_force_nearest(&z, tr.anchor));
            assert!(tr.fallback || euclid(&z, tr.anchor, tr.negative) > 0.5);
        }
        assert_eq!(t, mine_from_embeddings(&z, 0.5, 4).unwrap());
    }

    #[test]
    fn train_log_csv_round_trip() {
        let log = TrainLog {
            records: vec![
                EpochRecord {
                    phase: Phase::Reconstruction,
                    epoch: 1,
                    train_loss: 0.123456789,
                    val_loss: 0.1,
                    seconds: 1.5,
                },
                EpochRecord {
                    phase: Phase::Triplet,
                    epoch: 1,
                    train_loss: 0.5,
                    val_loss: 0.25,
                    seconds: 2.0,
                },
            ],
            first_batch_loss: None,
        };
        let csv = log.to_csv();
        assert!(csv.starts_with("phase,epoch,train_loss,val_loss,seconds\n"));
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(TrainLog::from_csv(&csv).unwrap(), log);
        assert!(TrainLog::from_csv("nope\n").is_err());
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let ds = toy_dataset(8, 1);
        let mut model = Autoencoder::<f32>::new(2);
        let before = model.clone();
        let mut adam = adam_for(&model);
        let cfg = Phase1Config {
            epochs: 0,
            ..Default::default()
        };
        let log = train_phase1(&mut model, &mut adam, &ds, &ds, &cfg).unwrap();
        assert!(log.records.is_empty());
        let cfg2 = Phase2Config {
            epochs: 0,
            ..Default::default()
        };
        train_phase2(&mut model, &mut adam, &ds.images, &ds.images, &cfg2).unwrap();
        assert_eq!(model, before);
        assert_eq!(adam.t, 0);
    }

    #[test]
    fn phase1_reduces_loss_and_is_deterministic() {
        let ds = toy_dataset(96, 3);
        let run = || {
            let mut model = Autoencoder::<f32>::new(4);
            let mut adam = adam_for(&model);
            let cfg = Phase1Config {
                epochs: 2,
                batch_size: 32,
                seed: 5,
            };
            let log = train_phase1(&mut model, &mut adam, &ds, &ds.head(16).unwrap(), &cfg).unwrap();
            (model, log)
        };
        let (m1, l1) = run();
        let (m2, l2) = run();
        assert_eq!(m1, m2);
        assert_eq!(l1.records.len(), 2);
        for (a, b) in l1.records.iter().zip(&l2.records) {
            assert_eq!((a.train_loss, a.val_loss), (b.train_loss, b.val_loss));
        }
        assert!(l1.records[1].train_loss < l1.first_batch_loss.unwrap());
    }

    #[test]
    fn phase2_touches_encoder_and_logs() {
        let ds = toy_dataset(40, 6);
        let mut model = Autoencoder::<f32>::new(7);
        let mut adam = adam_for(&model);
        let before = model.clone();
        let cfg = Phase2Config {
            epochs: 1,
            batch_size: 16,
            seed: 8,
            ..Default::default()
        };
        let log = train_phase2(&mut model, &mut adam, &ds.images, &ds.head(12).unwrap().images, &cfg).unwrap();
        assert_eq!(log.records.len(), 1);
        let r = &log.records[0];
        assert!(r.train_loss >= 0.0 && r.val_loss >= 0.0);
        assert_ne!(model.params()[0], before.params()[0]);
        // fresh Adam moments and zero decoder gradients: decoder weights stay put
        assert_eq!(model.params()[ENCODER_SLOTS], before.params()[ENCODER_SLOTS]);
        assert_eq!(adam.t, 3);
    }

    #[test]
    fn triplet_set_loss_matches_definition() {
        let z = Tensor::new(&[3, 1], vec![0.0f32, 0.1, 2.0]).unwrap();
        let t = [TripletIndex {
            anchor: 0,
            positive: 1,
            negative: 2,
            fallback: false,
        }];
        let l = triplet_set_loss(&z, &t, 1.0).unwrap();
        assert!((l - (0.01f64 - 4.0 + 1.0).max(0.0)).abs() < 1e-7);
        let t2 = [TripletIndex {
            anchor: 0,
            positive: 2,
            negative: 1,
            fallback: false,
        }];
        assert!((triplet_set_loss(&z, &t2, 1.0).unwrap() - (4.0 - 0.01 + 1.0)).abs() < 1e-6);
    }
}
