use std::fmt;
use std::str::FromStr;

use super::layers::{Activation, Dense};
use crate::error::{domain, Error, Result};
use crate::math::Mat;
use crate::rng::Rng;

/// How many affine + activation layers map source vectors to distilled ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProjectionDepth {
    /// `in → out`.
    One,
    /// `in → in → out`; the lower layer keeps the source width.
    Two,
}

impl fmt::Display for ProjectionDepth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProjectionDepth::One => "1l",
            ProjectionDepth::Two => "2l",
        })
    }
}

impl FromStr for ProjectionDepth {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1l" | "1" => Ok(ProjectionDepth::One),
            "2l" | "2" => Ok(ProjectionDepth::Two),
            other => Err(domain(format!("unknown projection depth {other:?}"))),
        }
    }
}

/// Dense layers applied to each source word vector, bottom layer first.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionStack {
    pub layers: Vec<Dense>,
}

impl ProjectionStack {
    pub fn new(depth: ProjectionDepth, inputs: usize, outputs: usize, activation: Activation, rng: &mut Rng) -> Self {
        let layers = match depth {
            ProjectionDepth::One => vec![Dense::new(inputs, outputs, activation, rng)],
            ProjectionDepth::Two => {
                vec![Dense::new(inputs, inputs, activation, rng), Dense::new(inputs, outputs, activation, rng)]
            }
        };
        ProjectionStack { layers }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(domain("projection needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(domain(format!("layer widths do not chain: {} → {}", pair[0].outputs(), pair[1].inputs())));
            }
        }
        Ok(ProjectionStack { layers })
    }

    pub fn depth(&self) -> ProjectionDepth {
        if self.layers.len() == 1 {
            ProjectionDepth::One
        } else {
            ProjectionDepth::Two
        }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().expect("non-empty").outputs()
    }

    pub fn activation(&self) -> Activation {
        self.layers[0].activation
    }

    pub fn zeros_like(&self) -> Self {
        ProjectionStack { layers: self.layers.iter().map(Dense::zeros_like).collect() }
    }

    /// Outputs of every layer, bottom first.
    pub fn forward_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = acts.last().map_or(x, Vec::as_slice);
            let y = layer.forward(input);
            acts.push(y);
        }
        acts
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.forward_trace(x).pop().expect("non-empty")
    }

    /// Backpropagates `dy` (gradient at the top output) through the stack.
    pub fn backward(&self, x: &[f64], acts: &[Vec<f64>], dy: &[f64], grads: &mut ProjectionStack) {
        let mut dcur = dy.to_vec();
        for l in (0..self.layers.len()).rev() {
            let input = if l == 0 { x } else { &acts[l - 1] };
            if l == 0 {
                self.layers[0].backward(input, &acts[0], &dcur, &mut grads.layers[0], None);
            } else {
                let mut dx = vec![0.0; input.len()];
                self.layers[l].backward(input, &acts[l], &dcur, &mut grads.layers[l], Some(&mut dx));
                dcur = dx;
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn params(&self) -> Vec<&Mat> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Mat> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
