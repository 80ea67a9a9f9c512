//! Parameterized building blocks recorded onto a [`Tape`].

use rand::Rng;

use super::params::{Init, ParamId, ParameterSet};
use super::real::Real;
use super::tape::{Tape, Var};
use crate::error::Result;

/// Fully-connected layer `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        ps: &mut ParameterSet<T>,
        path: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::with_bias_init(ps, path, inputs, outputs, Init::Zeros, rng)
    }

    /// He-initialized weights, for a layer whose output goes through ReLU.
    pub fn relu_input<T: Real, R: Rng + ?Sized>(
        ps: &mut ParameterSet<T>,
        path: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::with_inits(ps, path, inputs, outputs, Init::HeUniform { fan_in: inputs }, Init::Zeros, rng)
    }

    pub fn with_bias_init<T: Real, R: Rng + ?Sized>(
        ps: &mut ParameterSet<T>,
        path: &str,
        inputs: usize,
        outputs: usize,
        bias_init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        Self::with_inits(ps, path, inputs, outputs, Init::UniformFanIn { fan_in: inputs }, bias_init, rng)
    }

    pub fn with_inits<T: Real, R: Rng + ?Sized>(
        ps: &mut ParameterSet<T>,
        path: &str,
        inputs: usize,
        outputs: usize,
        weight_init: Init,
        bias_init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = ps.add(&format!("{path}.weight"), &[inputs, outputs], weight_init, rng)?;
        let bias = ps.add(&format!("{path}.bias"), &[outputs], bias_init, rng)?;
        Ok(Self { weight, bias, inputs, outputs })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }

    pub fn num_params(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

/// ReLU hidden layers followed by a linear output layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths` lists every layer size including input and output.
    pub fn new<T: Real, R: Rng + ?Sized>(
        ps: &mut ParameterSet<T>,
        path: &str,
        widths: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let last = widths.len().saturating_sub(2);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let name = format!("{path}.{i}");
                if i < last {
                    Linear::relu_input(ps, &name, w[0], w[1], rng)
                } else {
                    Linear::new(ps, &name, w[0], w[1], rng)
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    /// Hidden activations only (everything except the last layer).
    pub fn hidden<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let mut h = x;
        for layer in &self.layers {
            let z = layer.forward(tape, h)?;
            h = tape.relu(z);
        }
        Ok(h)
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let (last, hidden) = self.layers.split_last().expect("mlp has layers");
        let mut h = x;
        for layer in hidden {
            let z = layer.forward(tape, h)?;
            h = tape.relu(z);
        }
        last.forward(tape, h)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Linear::num_params).sum()
    }
}

/// Square-kernel convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        ps: &mut ParameterSet<T>,
        path: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = in_channels * kernel * kernel;
        let weight = ps.add(
            &format!("{path}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            Init::HeUniform { fan_in },
            rng,
        )?;
        let bias = ps.add(&format!("{path}.bias"), &[out_channels], Init::Zeros, rng)?;
        Ok(Self { weight, bias, in_channels, out_channels, kernel, stride, padding })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        tape.conv2d(x, w, Some(b), self.stride, self.padding)
    }

    pub fn num_params(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels
    }
}

/// LSTM layer with input weights `[in, 4w]`, recurrent weights `[w, 4w]`
/// (each gate block orthogonal) and one bias `[4w]`. Gate order: input,
/// forget, candidate, output.
#[derive(Debug, Clone)]
pub struct LstmLayer {
    pub input_weight: ParamId,
    pub recurrent_weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub width: usize,
}

impl LstmLayer {
    pub fn new<T: Real, R: Rng + ?Sized>(
        ps: &mut ParameterSet<T>,
        path: &str,
        inputs: usize,
        width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let input_weight =
            ps.add(&format!("{path}.input_weight"), &[inputs, 4 * width], Init::UniformFanIn { fan_in: inputs }, rng)?;
        let recurrent_weight =
            ps.add(&format!("{path}.recurrent_weight"), &[width, 4 * width], Init::Orthogonal { blocks: 4 }, rng)?;
        let bias = ps.add(&format!("{path}.bias"), &[4 * width], Init::Zeros, rng)?;
        Ok(Self { input_weight, recurrent_weight, bias, inputs, width })
    }

    pub fn num_params(&self) -> usize {
        4 * (self.width * self.inputs + self.width * self.width + self.width)
    }

    /// One cell update; returns `(h, c)`.
    pub fn cell<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
        let wx = tape.param(self.input_weight);
        let wh = tape.param(self.recurrent_weight);
        let b = tape.param(self.bias);
        lstm_cell(tape, x, h_prev, c_prev, wx, wh, b, self.width)
    }
}

/// Standard LSTM equations:
/// `i, f, o = sigmoid(.)`, `g = tanh(.)`, `c = f*c_prev + i*g`, `h = o*tanh(c)`.
#[allow(clippy::too_many_arguments)]
pub fn lstm_cell<T: Real>(
    tape: &mut Tape<'_, T>,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    wx: Var,
    wh: Var,
    b: Var,
    width: usize,
) -> Result<(Var, Var)> {
    let zx = tape.matmul(x, wx)?;
    let zh = tape.matmul(h_prev, wh)?;
    let z = tape.add(zx, zh)?;
    let z = tape.add_bias(z, b)?;
    let zi = tape.slice_cols(z, 0, width)?;
    let zf = tape.slice_cols(z, width, width)?;
    let zg = tape.slice_cols(z, 2 * width, width)?;
    let zo = tape.slice_cols(z, 3 * width, width)?;
    let i = tape.sigmoid(zi);
    let f = tape.sigmoid(zf);
    let g = tape.tanh(zg);
    let o = tape.sigmoid(zo);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    tape.ensure_finite(h, "lstm cell")?;
    Ok((h, c))
}
