//! Central finite-difference gradient checking.
//!
//! The relative error of a parameter is `|a - n| / max(|a|, |n|)` with `a`
//! and `n` the analytic and numeric gradients restricted to the probed
//! coordinates (Euclidean norms), so that near-zero entries do not dominate.
//!
//! A coordinate whose central difference at `h` disagrees with the one at
//! `h / 2` by more than 1e-3 (relative) straddles a ReLU or clamp kink; it is
//! left out of the comparison and counted in `kinks`. A check fails when
//! more than half of a parameter's probes are kinks.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParameterSet};
use super::tape::Gradients;
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub path: String,
    pub probed: usize,
    pub relative_error: f64,
    pub analytic_norm: f64,
    pub kinks: usize,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.params.iter().map(|p| p.relative_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        !self.params.is_empty() && self.worst() < tol && self.params.iter().all(|p| p.kinks * 2 <= p.probed)
    }

    pub fn total_kinks(&self) -> usize {
        self.params.iter().map(|p| p.kinks).sum()
    }
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Compares `grads` for `ids` against central differences of `loss`,
/// probing at most `max_probes` coordinates per parameter.
pub fn check_params(
    params: &ParameterSet<f64>,
    ids: &[ParamId],
    grads: &Gradients<f64>,
    h: f64,
    max_probes: usize,
    loss: impl Fn(&ParameterSet<f64>) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut work = params.clone();
    let mut report = GradCheckReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for &id in ids {
        let len = params.tensor(id).len();
        let zero = Tensor::zeros(params.tensor(id).shape());
        let analytic_full = grads.param(id).unwrap_or(&zero);
        let coords: Vec<usize> =
            if len <= max_probes { (0..len).collect() } else { sample(&mut rng, len, max_probes).into_vec() };
        let mut analytic = Vec::with_capacity(coords.len());
        let mut numeric = Vec::with_capacity(coords.len());
        let mut kinks = 0;
        for &i in &coords {
            let orig = work.tensor(id).data()[i];
            let mut central = |step: f64| -> Result<f64> {
                work.tensor_mut(id).data_mut()[i] = orig + step;
                let up = loss(&work)?;
                work.tensor_mut(id).data_mut()[i] = orig - step;
                let down = loss(&work)?;
                work.tensor_mut(id).data_mut()[i] = orig;
                Ok((up - down) / (2.0 * step))
            };
            let full = central(h)?;
            let half = central(h / 2.0)?;
            if (full - half).abs() > 1e-3 * full.abs().max(half.abs()).max(1e-6) {
                kinks += 1;
                continue;
            }
            numeric.push(full);
            analytic.push(analytic_full.data()[i]);
        }
        report.params.push(ParamCheck {
            path: params.path(id).to_string(),
            probed: coords.len(),
            relative_error: relative_error(&analytic, &numeric),
            analytic_norm: analytic.iter().map(|a| a * a).sum::<f64>().sqrt(),
            kinks,
        });
    }
    Ok(report)
}

/// Central differences of `loss` with respect to every element of `input`.
pub fn numeric_input_gradient(
    input: &Tensor<f64>,
    h: f64,
    loss: impl Fn(&Tensor<f64>) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut work = input.clone();
    let mut out = Vec::with_capacity(input.len());
    for i in 0..input.len() {
        let orig = work.data()[i];
        work.data_mut()[i] = orig + h;
        let up = loss(&work)?;
        work.data_mut()[i] = orig - h;
        let down = loss(&work)?;
        work.data_mut()[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Sets every `*.bias` parameter to values drawn from `[lo, hi)`, moving
/// ReLU pre-activations off the kink at zero so central differences see a
/// locally smooth function.
pub fn offset_biases<R: rand::Rng + ?Sized>(params: &mut ParameterSet<f64>, lo: f64, hi: f64, rng: &mut R) {
    let ids: Vec<ParamId> = params.ids().filter(|&id| params.path(id).ends_with(".bias")).collect();
    for id in ids {
        for v in params.tensor_mut(id).data_mut() {
            *v = rng.gen_range(lo..hi);
        }
    }
}
