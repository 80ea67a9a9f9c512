use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter inside its [`ParameterSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// How a parameter is filled at creation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    UniformFanIn { fan_in: usize },
    /// `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, variance `2/fan_in`; for layers followed by ReLU.
    HeUniform { fan_in: usize },
    /// A `[rows, blocks * rows]` matrix whose square column blocks are each orthogonal.
    Orthogonal { blocks: usize },
    Zeros,
    Constant(f64),
}

#[derive(Debug, Clone)]
struct Entry<T> {
    path: String,
    tensor: Tensor<T>,
    init: Init,
}

/// Named trainable parameters. Paths are unique.
#[derive(Debug, Clone)]
pub struct ParameterSet<T> {
    entries: Vec<Entry<T>>,
    index: BTreeMap<String, ParamId>,
}

impl<T: Real> Default for ParameterSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParameterSet<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new(), index: BTreeMap::new() }
    }

    pub fn add<R: Rng + ?Sized>(&mut self, path: &str, shape: &[usize], init: Init, rng: &mut R) -> Result<ParamId> {
        if self.index.contains_key(path) {
            return Err(Error::Config(format!("duplicate parameter path `{path}`")));
        }
        let tensor = Tensor::from_f64(shape, &initial_values(shape, init, rng)?)?;
        let id = ParamId(self.entries.len());
        self.entries.push(Entry { path: path.to_string(), tensor, init });
        self.index.insert(path.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn path(&self, id: ParamId) -> &str {
        &self.entries[id.0].path
    }

    pub fn init(&self, id: ParamId) -> Init {
        self.entries[id.0].init
    }

    pub fn id(&self, path: &str) -> Option<ParamId> {
        self.index.get(path).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Ids whose path starts with `prefix`.
    pub fn ids_with_prefix<'s>(&'s self, prefix: &'s str) -> impl Iterator<Item = ParamId> + 's {
        self.ids().filter(move |&id| self.path(id).starts_with(prefix))
    }

    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn num_elements_with_prefix(&self, prefix: &str) -> usize {
        self.ids_with_prefix(prefix).map(|id| self.tensor(id).len()).sum()
    }

    /// Replaces the value at `path`, keeping its shape.
    pub fn set(&mut self, path: &str, tensor: Tensor<T>) -> Result<()> {
        let id = self.id(path).ok_or_else(|| Error::Config(format!("unknown parameter `{path}`")))?;
        if self.tensor(id).shape() != tensor.shape() {
            return Err(Error::Shape(format!(
                "parameter `{path}` has shape {:?}, got {:?}",
                self.tensor(id).shape(),
                tensor.shape()
            )));
        }
        *self.tensor_mut(id) = tensor;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParameterSet<U> {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .map(|e| Entry { path: e.path.clone(), tensor: e.tensor.cast(), init: e.init })
                .collect(),
            index: self.index.clone(),
        }
    }
}

fn initial_values<R: Rng + ?Sized>(shape: &[usize], init: Init, rng: &mut R) -> Result<Vec<f64>> {
    let len: usize = shape.iter().product();
    Ok(match init {
        Init::Zeros => vec![0.0; len],
        Init::Constant(c) => vec![c; len],
        Init::UniformFanIn { fan_in } => {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            (0..len).map(|_| rng.gen_range(-bound..=bound)).collect()
        }
        Init::HeUniform { fan_in } => {
            let bound = (6.0 / fan_in.max(1) as f64).sqrt();
            (0..len).map(|_| rng.gen_range(-bound..=bound)).collect()
        }
        Init::Orthogonal { blocks } => {
            if shape.len() != 2 || shape[1] != blocks * shape[0] {
                return Err(Error::Shape(format!(
                    "orthogonal init needs [n, {blocks} * n], got {shape:?}"
                )));
            }
            let n = shape[0];
            let mut out = vec![0.0; len];
            for b in 0..blocks {
                let q = random_orthogonal(n, rng);
                for r in 0..n {
                    for c in 0..n {
                        out[r * shape[1] + b * n + c] = q[(r, c)];
                    }
                }
            }
            out
        }
    })
}

/// Haar-distributed orthogonal matrix from the QR factorization of a Gaussian matrix.
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for c in 0..n {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn orthogonality_error(t: &Tensor<f32>, block: usize) -> f64 {
        let n = t.dim(0);
        let cols = t.dim(1);
        let at = |r: usize, c: usize| t.data()[r * cols + block * n + c] as f64;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n).map(|r| at(r, i) * at(r, j)).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    #[test]
    fn orthogonal_blocks_satisfy_qtq_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParameterSet::<f32>::new();
        let id = ps.add("w", &[64, 256], Init::Orthogonal { blocks: 4 }, &mut rng).unwrap();
        for b in 0..4 {
            assert!(orthogonality_error(ps.tensor(id), b) < 1e-5);
        }
    }

    #[test]
    fn duplicate_paths_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParameterSet::<f64>::new();
        ps.add("a", &[2], Init::Zeros, &mut rng).unwrap();
        assert!(ps.add("a", &[2], Init::Zeros, &mut rng).is_err());
    }

    #[test]
    fn uniform_fan_in_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParameterSet::<f64>::new();
        let id = ps.add("w", &[100, 10], Init::UniformFanIn { fan_in: 100 }, &mut rng).unwrap();
        assert!(ps.tensor(id).max_abs() <= 0.1);
    }
}
