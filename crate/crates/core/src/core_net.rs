//! Two stacked LSTM layers integrating glimpse vectors into the internal state.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{LstmLayer, ParameterSet, Real, Tape, Tensor, Var};

pub const WIDTHS: [usize; 3] = [256, 512, 1024];

#[derive(Debug, Clone, Copy)]
pub struct CoreState {
    pub h1: Var,
    pub c1: Var,
    pub h2: Var,
    pub c2: Var,
}

impl CoreState {
    /// The exported internal state `h_t`.
    pub fn h(&self) -> Var {
        self.h2
    }
}

#[derive(Debug, Clone)]
pub struct CoreNet {
    pub lower: LstmLayer,
    pub upper: LstmLayer,
    pub width: usize,
}

impl CoreNet {
    pub fn new<T: Real, R: Rng + ?Sized>(ps: &mut ParameterSet<T>, path: &str, input: usize, width: usize, rng: &mut R) -> Result<Self> {
        if width == 0 || input == 0 {
            return Err(Error::Config(format!("core width {width} / input {input} must be positive")));
        }
        let lower = LstmLayer::new(ps, &format!("{path}.lstm1"), input, width, rng)?;
        let upper = LstmLayer::new(ps, &format!("{path}.lstm2"), width, width, rng)?;
        Ok(Self { lower, upper, width })
    }

    pub fn num_params(&self) -> usize {
        self.lower.num_params() + self.upper.num_params()
    }

    /// All-zero state for `batch` episodes.
    pub fn init_state<T: Real>(&self, tape: &mut Tape<'_, T>, batch: usize) -> CoreState {
        let mut z = || tape.constant(Tensor::zeros(&[batch, self.width]));
        CoreState { h1: z(), c1: z(), h2: z(), c2: z() }
    }

    pub fn step<T: Real>(&self, tape: &mut Tape<'_, T>, state: &CoreState, g: Var, step: usize) -> Result<CoreState> {
        let tag = |e: Error| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("core step {step}: {m}")),
            other => other,
        };
        let (h1, c1) = self.lower.cell(tape, g, state.h1, state.c1).map_err(tag)?;
        let (h2, c2) = self.upper.cell(tape, h1, state.h2, state.c2).map_err(tag)?;
        tape.ensure_finite(c2, "core cell").map_err(tag)?;
        Ok(CoreState { h1, c1, h2, c2 })
    }
}
