//! Teacher-student matching losses and teacher logit generation.
//!
//! Each loss returns its value together with the gradient with respect to
//! the student's logits, so training loops can feed the result straight into
//! a model's backward pass.

use std::fmt;

use rand_distr::{Distribution, StandardNormal};

use crate::data::{Dataset, LogitRecord};
use crate::error::{domain, Error, Result};
use crate::math::softmax_unchecked;
use crate::models::Classifier;
use crate::rng::Rng;

/// Whether noisy logit matching scales the whole teacher vector by one
/// noise draw or every component by its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseGranularity {
    #[default]
    PerVector,
    PerComponent,
}

/// Student training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    /// Squared logit difference against the teacher.
    Lm,
    /// [`LossSpec::Lm`] against `(1 + η)·z`, `η ~ N(0, σ²)`.
    Nlm { sigma: f64, noise: NoiseGranularity },
    /// `λ·CE(gold) + (1-λ)·CE(softmax(z/τ))`.
    Stm { lambda: f64, tau: f64 },
    /// Cross-entropy against the gold label only.
    Ce,
}

impl LossSpec {
    pub const DEFAULT_SIGMA: f64 = 0.1;
    pub const DEFAULT_LAMBDA: f64 = 0.5;
    pub const DEFAULT_TAU: f64 = 2.0;

    pub fn nlm() -> Self {
        LossSpec::Nlm { sigma: Self::DEFAULT_SIGMA, noise: NoiseGranularity::PerVector }
    }

    pub fn stm() -> Self {
        LossSpec::Stm { lambda: Self::DEFAULT_LAMBDA, tau: Self::DEFAULT_TAU }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::Nlm { sigma, .. } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(domain(format!("noise deviation must be ≥ 0, got {sigma}")))
            }
            LossSpec::Stm { lambda, tau } => {
                if !(0.0..=1.0).contains(&lambda) {
                    return Err(domain(format!("lambda must lie in [0, 1], got {lambda}")));
                }
                if !(tau > 0.0 && tau.is_finite()) {
                    return Err(domain(format!("temperature must be positive, got {tau}")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Whether training needs cached teacher logits.
    pub fn needs_teacher(&self) -> bool {
        !matches!(self, LossSpec::Ce)
    }

    /// Loss and gradient for one instance.
    ///
    /// `teacher` must be present for every kind except [`LossSpec::Ce`].
    pub fn evaluate(
        &self,
        teacher: Option<&[f64]>,
        student: &[f64],
        gold: usize,
        rng: &mut Rng,
    ) -> Result<(f64, Vec<f64>)> {
        let need = || teacher.ok_or_else(|| Error::Data("loss requires teacher logits".into()));
        match *self {
            LossSpec::Lm => loss_lm(need()?, student),
            LossSpec::Nlm { sigma, noise } => {
                let (l, g, _) = loss_nlm(need()?, student, sigma, noise, rng)?;
                Ok((l, g))
            }
            LossSpec::Stm { lambda, tau } => loss_stm(need()?, student, gold, lambda, tau),
            LossSpec::Ce => cross_entropy(student, gold),
        }
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossSpec::Lm => write!(f, "lm"),
            LossSpec::Nlm { sigma, noise } => {
                let g = match noise {
                    NoiseGranularity::PerVector => "vector",
                    NoiseGranularity::PerComponent => "component",
                };
                write!(f, "nlm(sigma={sigma},noise={g})")
            }
            LossSpec::Stm { lambda, tau } => write!(f, "stm(lambda={lambda},tau={tau})"),
            LossSpec::Ce => write!(f, "ce"),
        }
    }
}

fn check_dims(z: &[f64], v: &[f64]) -> Result<()> {
    if z.is_empty() || z.len() != v.len() {
        return Err(domain(format!("logit dimensions differ or are empty: {} vs {}", z.len(), v.len())));
    }
    Ok(())
}

/// `(1/2D)·Σ(zᵢ - vᵢ)²` and its gradient `(v - z)/D` with respect to `v`.
pub fn loss_lm(z: &[f64], v: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_dims(z, v)?;
    let d = z.len() as f64;
    let value = z.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (2.0 * d);
    let grad = z.iter().zip(v).map(|(a, b)| (b - a) / d).collect();
    Ok((value, grad))
}

/// Logit matching against teacher logits perturbed by `(1 + η)`.
///
/// Returns the loss, its gradient, and the perturbed teacher logits.
pub fn loss_nlm(
    z: &[f64],
    v: &[f64],
    sigma: f64,
    noise: NoiseGranularity,
    rng: &mut Rng,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_dims(z, v)?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(domain(format!("noise deviation must be ≥ 0, got {sigma}")));
    }
    let noised: Vec<f64> = if sigma == 0.0 {
        z.to_vec()
    } else {
        let mut draw = || sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
        match noise {
            NoiseGranularity::PerVector => {
                let eta = draw();
                z.iter().map(|&x| (1.0 + eta) * x).collect()
            }
            NoiseGranularity::PerComponent => z.iter().map(|&x| (1.0 + draw()) * x).collect(),
        }
    };
    let (value, grad) = loss_lm(&noised, v)?;
    Ok((value, grad, noised))
}

/// Softmax-temperature matching.
///
/// The student's distribution uses temperature 1; the teacher target is
/// `softmax(z/τ)`. Gradient: `λ(p - y) + (1-λ)(p - s)`.
pub fn loss_stm(z: &[f64], student: &[f64], gold: usize, lambda: f64, tau: f64) -> Result<(f64, Vec<f64>)> {
    check_dims(z, student)?;
    LossSpec::Stm { lambda, tau }.validate()?;
    if gold >= z.len() {
        return Err(domain(format!("gold class {gold} outside {} classes", z.len())));
    }
    let s = softmax_unchecked(z, tau);
    let log_p = log_softmax(student);
    let l1 = -log_p[gold];
    let l2 = -s.iter().zip(&log_p).map(|(si, lp)| si * lp).sum::<f64>();
    let value = lambda * l1 + (1.0 - lambda) * l2;
    let grad = log_p
        .iter()
        .zip(&s)
        .enumerate()
        .map(|(i, (lp, si))| {
            let p = lp.exp();
            let y = if i == gold { 1.0 } else { 0.0 };
            lambda * (p - y) + (1.0 - lambda) * (p - si)
        })
        .collect();
    Ok((value, grad))
}

/// Cross-entropy against a gold class and its gradient `p - y`.
pub fn cross_entropy(v: &[f64], gold: usize) -> Result<(f64, Vec<f64>)> {
    if gold >= v.len() {
        return Err(domain(format!("gold class {gold} outside {} classes", v.len())));
    }
    let log_p = log_softmax(v);
    let grad = log_p.iter().enumerate().map(|(i, lp)| lp.exp() - if i == gold { 1.0 } else { 0.0 }).collect();
    Ok((-log_p[gold], grad))
}

fn log_softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = v.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
    v.iter().map(|x| x - lse).collect()
}

/// Eval-mode logits of `teacher` for every instance, in dataset order.
pub fn generate_teacher_logits<M: Classifier>(teacher: &M, dataset: &Dataset) -> Result<Vec<LogitRecord>> {
    if teacher.vocab().hash() != dataset.vocab_hash {
        return Err(Error::Data(format!(
            "teacher vocabulary {} does not match dataset vocabulary {}",
            teacher.vocab().hash(),
            dataset.vocab_hash
        )));
    }
    if teacher.num_classes() != dataset.num_classes {
        return Err(Error::Data(format!(
            "teacher predicts {} classes, dataset has {}",
            teacher.num_classes(),
            dataset.num_classes
        )));
    }
    Ok(dataset
        .instances
        .iter()
        .enumerate()
        .map(|(index, inst)| LogitRecord { index, logits: teacher.logits(&inst.tokens) })
        .collect())
}
