use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::error::{domain, Error, Result};
use crate::math::Mat;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(domain(format!("unknown activation {other:?}"))),
        }
    }
}

/// Uniform Xavier initialization.
pub fn xavier(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Mat {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask(n: usize, rate: f64, rng: &mut Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..n).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect()
}

/// Draws a mask in train mode; `None` means identity.
pub(crate) fn maybe_mask(n: usize, rate: f64, mode: Mode, rng: &mut Rng) -> Option<Vec<f64>> {
    (mode == Mode::Train && rate > 0.0).then(|| dropout_mask(n, rate, rng))
}

pub(crate) fn apply_mask(x: &mut [f64], mask: Option<&Vec<f64>>) {
    if let Some(m) = mask {
        x.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
    }
}

/// Affine map followed by an elementwise activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `outputs × inputs`.
    pub weight: Mat,
    /// `1 × outputs`.
    pub bias: Mat,
    pub activation: Activation,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, activation: Activation, rng: &mut Rng) -> Self {
        Dense { weight: xavier(outputs, inputs, inputs, outputs, rng), bias: Mat::zeros(1, outputs), activation }
    }

    pub fn zeros_like(&self) -> Self {
        Dense {
            weight: Mat::zeros(self.weight.rows(), self.weight.cols()),
            bias: Mat::zeros(1, self.bias.cols()),
            activation: self.activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weight.affine(x, self.bias.as_slice());
        if self.activation != Activation::Identity {
            y.iter_mut().for_each(|v| *v = self.activation.apply(*v));
        }
        y
    }

    /// Accumulates parameter gradients into `grads` given the layer input `x`,
    /// its output `y` and `dy = ∂L/∂y`; adds `∂L/∂x` into `dx` when requested.
    pub fn backward(&self, x: &[f64], y: &[f64], dy: &[f64], grads: &mut Dense, dx: Option<&mut [f64]>) {
        let dpre: Vec<f64> = dy.iter().zip(y).map(|(&d, &yv)| d * self.activation.grad_from_output(yv)).collect();
        grads.weight.add_outer(&dpre, x);
        crate::math::axpy(1.0, &dpre, grads.bias.as_mut_slice());
        if let Some(dx) = dx {
            self.weight.t_matvec_acc(&dpre, dx);
        }
    }

    pub fn params(&self) -> [&Mat; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Mat; 2] {
        [&mut self.weight, &mut self.bias]
    }
}
