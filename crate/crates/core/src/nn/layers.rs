use rand::Rng;

use super::functional::{self, BatchStats, NormStats};
use crate::error::Result;
use crate::tensor::{Element, Tape, Tensor, Var};

pub const KERNEL: usize = 3;
pub const STRIDE: usize = 2;
pub const PADDING: usize = 1;
pub const OUTPUT_PADDING: usize = 1;

/// Kaiming-uniform init with ReLU gain: `U(-b, b)`, `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform<T: Element>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.random_range(-bound..bound))).collect();
    Tensor::new(shape, data).expect("shape")
}

/// 3×3, stride-2, padding-1 convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T: Element = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> Conv2d<T> {
    pub fn new(in_ch: usize, out_ch: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: kaiming_uniform(&[out_ch, in_ch, KERNEL, KERNEL], in_ch * KERNEL * KERNEL, rng),
            bias: Tensor::zeros(&[out_ch]),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        functional::conv2d(tape, x, p[0], p[1], STRIDE, PADDING)
    }
}

/// 3×3, stride-2, padding-1, output-padding-1 transposed convolution; doubles
/// spatial size.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d<T: Element = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> ConvTranspose2d<T> {
    pub fn new(in_ch: usize, out_ch: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: kaiming_uniform(&[in_ch, out_ch, KERNEL, KERNEL], in_ch * KERNEL * KERNEL, rng),
            bias: Tensor::zeros(&[out_ch]),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        functional::conv_transpose2d(tape, x, p[0], p[1], STRIDE, PADDING, OUTPUT_PADDING)
    }
}

/// Fully connected layer; `weight` is stored `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T: Element = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> Linear<T> {
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: kaiming_uniform(&[inputs, outputs], inputs, rng),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        functional::linear(tape, x, p[0], p[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running stats are updated.
    Train,
    /// Running statistics only.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d<T: Element = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
}

impl<T: Element> BatchNorm2d<T> {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            eps: Self::EPS,
            momentum: Self::MOMENTUM,
        }
    }

    /// Running statistics are not touched here; apply the returned batch
    /// statistics with [`BatchNorm2d::update_running`].
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        p: &[Var],
        x: Var,
        mode: Mode,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let stats = match mode {
            Mode::Train => NormStats::Batch,
            Mode::Eval => NormStats::Running {
                mean: self.running_mean.data(),
                var: self.running_var.data(),
            },
        };
        functional::batch_norm2d(tape, x, p[0], p[1], stats, self.eps)
    }

    pub fn update_running(&mut self, stats: &BatchStats<T>) {
        let m = T::lit(self.momentum);
        let keep = T::one() - m;
        let blend = |run: &mut Tensor<T>, obs: &[T]| {
            run.data_mut()
                .iter_mut()
                .zip(obs)
                .for_each(|(r, &o)| *r = keep * *r + m * o);
        };
        blend(&mut self.running_mean, &stats.mean);
        blend(&mut self.running_var, &stats.var_unbiased);
    }
}
