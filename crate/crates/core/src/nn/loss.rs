use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Var};

/// Mean over all elements of `(pred - target)²`.
pub fn mse_loss<T: Element>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    let diff = tape.sub(pred, target)?;
    let sq = tape.square(diff);
    tape.mean(sq)
}

/// Hinge triplet loss over squared Euclidean distances:
/// `mean_i max(0, ‖a_i - p_i‖² - ‖a_i - n_i‖² + margin)`.
pub fn triplet_loss<T: Element>(
    tape: &mut Tape<T>,
    anchor: Var,
    positive: Var,
    negative: Var,
    margin: f64,
) -> Result<Var> {
    let shape = tape.shape(anchor).to_vec();
    if shape.len() != 2 {
        return Err(Error::dim(format!("triplet_loss needs [N, D] inputs, got {shape:?}")));
    }
    if tape.shape(positive) != shape.as_slice() || tape.shape(negative) != shape.as_slice() {
        return Err(Error::dim("triplet_loss: anchor/positive/negative shapes differ"));
    }
    if shape[0] == 0 {
        return Err(Error::EmptyBatch);
    }
    if !(margin > 0.0) {
        return Err(Error::Contract(format!("triplet margin must be positive, got {margin}")));
    }
    let ap = tape.sub(anchor, positive)?;
    let ap2 = tape.square(ap);
    let d_ap = tape.sum_rows(ap2)?;
    let an = tape.sub(anchor, negative)?;
    let an2 = tape.square(an);
    let d_an = tape.sum_rows(an2)?;
    let gap = tape.sub(d_ap, d_an)?;
    let shifted = tape.add_scalar(gap, T::lit(margin));
    let hinge = tape.relu(shifted);
    tape.mean(hinge)
}

/// Triplet loss on plain embedding rows, without recording a graph.
pub fn triplet_loss_value(anchor: &[f32], positive: &[f32], negative: &[f32], dim: usize, margin: f64) -> f64 {
    let sq = |a: &[f32], b: &[f32]| -> f64 {
        a.iter().zip(b).map(|(&x, &y)| ((x - y) as f64).powi(2)).sum()
    };
    let n = anchor.len() / dim;
    let total: f64 = (0..n)
        .map(|i| {
            let r = i * dim..(i + 1) * dim;
            let (a, p, ng) = (&anchor[r.clone()], &positive[r.clone()], &negative[r]);
            (sq(a, p) - sq(a, ng) + margin).max(0.0)
        })
        .sum();
    total / n.max(1) as f64
}
