//! Decoupled rotation / translation heads and the supervised loss.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Mlp, ParameterSet, Real, Tape, Tensor, Var};

/// Hidden widths of each head.
pub const HEAD_HIDDEN: [usize; 2] = [64, 32];

#[derive(Debug, Clone)]
pub struct Regressor {
    pub rotation: Mlp,
    pub translation: Mlp,
}

impl Regressor {
    pub fn new<T: Real, R: Rng + ?Sized>(ps: &mut ParameterSet<T>, path: &str, input: usize, rng: &mut R) -> Result<Self> {
        let widths = [input, HEAD_HIDDEN[0], HEAD_HIDDEN[1], 3];
        Ok(Self {
            rotation: Mlp::new(ps, &format!("{path}.rotation"), &widths, rng)?,
            translation: Mlp::new(ps, &format!("{path}.translation"), &widths, rng)?,
        })
    }

    pub fn num_params(&self) -> usize {
        self.rotation.num_params() + self.translation.num_params()
    }

    /// `[n, 6]` predictions ordered `roll, pitch, yaw, x, y, z` (normalized space).
    pub fn predict<T: Real>(&self, tape: &mut Tape<'_, T>, h: Var) -> Result<Var> {
        let r = self.rotation.forward(tape, h)?;
        let t = self.translation.forward(tape, h)?;
        tape.concat_cols(&[r, t])
    }
}

/// `L = (1/N) sum_i ||p_hat - p||^2 + k ||phi_hat - phi||^2` over `[N, 6]` rows.
pub fn supervised_loss<T: Real>(tape: &mut Tape<'_, T>, pred: Var, target: Var, k: f64) -> Result<Var> {
    let (ps, ts) = (tape.shape(pred).to_vec(), tape.shape(target).to_vec());
    if ps != ts || ps.len() != 2 || ps[1] != 6 {
        return Err(Error::Shape(format!("supervised loss: prediction {ps:?} vs target {ts:?}, expected [N, 6]")));
    }
    if !(k > 0.0) {
        return Err(Error::InvalidArgument(format!("loss weight k = {k} must be positive")));
    }
    let n = ps[0] as f64;
    let d = tape.sub(pred, target)?;
    let sq = tape.square(d);
    let rot = tape.slice_cols(sq, 0, 3)?;
    let pos = tape.slice_cols(sq, 3, 3)?;
    let rot = tape.sum_all(rot);
    let pos = tape.sum_all(pos);
    let rot = tape.scale(rot, k / n);
    let pos = tape.scale(pos, 1.0 / n);
    tape.add(pos, rot)
}

/// Per-sample loss (`N = 1`) computed directly.
pub fn sample_loss(pred: &[f64; 6], target: &[f64; 6], k: f64) -> f64 {
    let rot: f64 = (0..3).map(|i| (pred[i] - target[i]).powi(2)).sum();
    let pos: f64 = (3..6).map(|i| (pred[i] - target[i]).powi(2)).sum();
    pos + k * rot
}

/// Builds the `[N, 6]` target constant.
pub fn target_tensor<T: Real>(targets: &[[f64; 6]]) -> Result<Tensor<T>> {
    let data = targets.iter().flatten().map(|&v| T::from_f64_lossy(v)).collect();
    Tensor::new(&[targets.len(), 6], data)
}
