//! Central finite-difference gradient checking in `f64`.
//!
//! The check only ever evaluates the forward pass of the function under test,
//! so it is independent of every backward rule it validates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

pub const STEP: f64 = 1e-4;

/// Uniform `[-1, 1)` tensor from a fixed seed.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).expect("shape")
}

/// Relative error with a small absolute floor so exact zeros compare cleanly.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compare analytic gradients of a scalar function against central
/// differences with base step [`STEP`], refined by one Richardson step
/// (`h` and `h/2`) so curvature does not swamp small gradients. Returns the maximum relative error over
/// every element of every input.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    check_gradients_sampled(inputs, usize::MAX, 0, f)
}

/// Like [`check_gradients`], but probes at most `per_input` randomly chosen
/// elements of each input. Used for networks too large to probe exhaustively.
pub fn check_gradients_sampled<F>(inputs: &[Tensor<f64>], per_input: usize, seed: u64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*var)
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let n = inputs[i].numel();
        let probes: Vec<usize> = if per_input >= n {
            (0..n).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9));
            (0..per_input).map(|_| rng.random_range(0..n)).collect()
        };
        for j in probes {
            let orig = inputs[i].data()[j];
            let mut central = |h: f64| -> Result<f64> {
                probe[i].data_mut()[j] = orig + h;
                let plus = eval(&probe)?;
                probe[i].data_mut()[j] = orig - h;
                let minus = eval(&probe)?;
                probe[i].data_mut()[j] = orig;
                Ok((plus - minus) / (2.0 * h))
            };
            let coarse = central(STEP)?;
            let fine = central(STEP / 2.0)?;
            let numeric = (4.0 * fine - coarse) / 3.0;
            worst = worst.max(relative_error(analytic.data()[j], numeric));
        }
    }
    Ok(worst)
}
