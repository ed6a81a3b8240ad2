//! Helpers shared by the integration tests and the acceptance suite.

#![allow(dead_code)]

use std::ops::Range;
use std::sync::Arc;

use embdistill::autoencoder::{AeConfig, AutoencoderModel};
use embdistill::data::{EmbeddingTable, Vocab};
use embdistill::distill::{cross_entropy, loss_lm, loss_nlm, loss_stm, NoiseGranularity};
use embdistill::math::{finite_diff_grad, grad_mismatch, Mat};
use embdistill::models::{
    Activation, Classifier, CnnClassifier, CnnConfig, LstmClassifier, LstmConfig, Mode, Parameters, ProjectionDepth,
    StudentModel,
};
use embdistill::rng::{Rng, SeedStream};
use rand::Rng as _;

pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-7;
pub const STEP: f64 = 1e-5;
pub const INSTANCES: usize = 100;

/// Random table over `words` words plus the reserved tokens; the padding
/// row is zero.
pub fn random_table(words: usize, dim: usize, rng: &mut Rng) -> EmbeddingTable {
    let vocab = Vocab::new((0..words).map(|i| format!("w{i}")).collect()).unwrap();
    let pad = vocab.pad();
    let m = Mat::from_fn(vocab.len(), dim, |r, _| if r == pad { 0.0 } else { rng.random_range(-1.0..1.0) });
    EmbeddingTable::new(Arc::new(vocab), m).unwrap()
}

pub fn random_vec(n: usize, scale: f64, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Random token ids that are neither padding nor unknown.
pub fn random_tokens(table: &EmbeddingTable, len: Range<usize>, rng: &mut Rng) -> Vec<usize> {
    let vocab = table.vocab();
    let n = rng.random_range(len);
    (0..n)
        .map(|_| loop {
            let t = rng.random_range(0..vocab.len());
            if t != vocab.pad() && t != vocab.unk() {
                break t;
            }
        })
        .collect()
}

fn compare(what: &str, analytic: &[f64], numeric: &[f64], skip: &Range<usize>) -> Result<(), String> {
    let keep =
        |v: &[f64]| -> Vec<f64> { v.iter().enumerate().filter(|(i, _)| !skip.contains(i)).map(|(_, x)| *x).collect() };
    let (a, n) = (keep(analytic), keep(numeric));
    match grad_mismatch(&a, &n, REL_TOL, ABS_FLOOR) {
        None => Ok(()),
        Some((i, a, n)) => Err(format!("{what}: element {i} analytic {a:e} numeric {n:e}")),
    }
}

/// Checks the gradient of `Σ wᵢ·logitᵢ` with respect to every trainable
/// parameter of `model`, in training mode with a fixed dropout seed.
/// Parameters with flat indices in `skip` are not compared.
pub fn check_classifier<M: Classifier>(
    what: &str,
    model: &M,
    tokens: &[usize],
    seed: u64,
    skip: Range<usize>,
) -> Result<(), String> {
    let stream = SeedStream::new(seed);
    let (logits, cache) = model.forward(tokens, Mode::Train, &mut stream.rng());
    let w = random_vec(logits.len(), 1.0, &mut stream.child("weights").rng());
    let mut grads = model.zeros_like();
    model.backward(&cache, &w, &mut grads);
    let analytic = grads.flat_params();
    let mut probe = model.clone();
    let numeric = finite_diff_grad(
        |p| {
            probe.set_flat_params(p);
            let z = probe.forward(tokens, Mode::Train, &mut stream.rng()).0;
            z.iter().zip(&w).map(|(a, b)| a * b).sum()
        },
        &model.flat_params(),
        STEP,
    )
    .map_err(|e| e.to_string())?;
    compare(what, &analytic, &numeric, &skip)
}

fn small_cnn(classes: usize) -> CnnConfig {
    CnnConfig { widths: vec![1, 2, 3], filters: 3, hidden: 4, classes, hidden_dropout: 0.3 }
}

/// Flat index range of the padding row when the embedding is the first
/// parameter tensor.
fn pad_range(table: &EmbeddingTable) -> Range<usize> {
    let pad = table.vocab().pad();
    pad * table.dim()..(pad + 1) * table.dim()
}

pub fn check_lm(i: u64) -> Result<(), String> {
    let mut rng = SeedStream::new(i).child("lm").rng();
    let c = rng.random_range(2..6);
    let z = random_vec(c, 3.0, &mut rng);
    let v = random_vec(c, 3.0, &mut rng);
    let analytic = loss_lm(&z, &v).unwrap().1;
    let numeric = finite_diff_grad(|x| loss_lm(&z, x).unwrap().0, &v, STEP).unwrap();
    compare("LM", &analytic, &numeric, &(0..0))
}

pub fn check_nlm(i: u64) -> Result<(), String> {
    let mut rng = SeedStream::new(i).child("nlm").rng();
    let c = rng.random_range(2..6);
    let z = random_vec(c, 3.0, &mut rng);
    let v = random_vec(c, 3.0, &mut rng);
    let noise = if i.is_multiple_of(2) { NoiseGranularity::PerVector } else { NoiseGranularity::PerComponent };
    let noise_seed = SeedStream::new(i).child("noise");
    let analytic = loss_nlm(&z, &v, 0.1, noise, &mut noise_seed.rng()).unwrap().1;
    let numeric =
        finite_diff_grad(|x| loss_nlm(&z, x, 0.1, noise, &mut noise_seed.rng()).unwrap().0, &v, STEP).unwrap();
    compare("NLM", &analytic, &numeric, &(0..0))
}

pub fn check_stm(i: u64) -> Result<(), String> {
    let mut rng = SeedStream::new(i).child("stm").rng();
    let c = rng.random_range(2..6);
    let z = random_vec(c, 3.0, &mut rng);
    let v = random_vec(c, 3.0, &mut rng);
    let gold = rng.random_range(0..c);
    let lambda = rng.random_range(0.0..=1.0);
    let tau = rng.random_range(0.5..5.0);
    let analytic = loss_stm(&z, &v, gold, lambda, tau).unwrap().1;
    let numeric = finite_diff_grad(|x| loss_stm(&z, x, gold, lambda, tau).unwrap().0, &v, STEP).unwrap();
    compare("STM", &analytic, &numeric, &(0..0))?;
    let analytic = cross_entropy(&v, gold).unwrap().1;
    let numeric = finite_diff_grad(|x| cross_entropy(x, gold).unwrap().0, &v, STEP).unwrap();
    compare("CE", &analytic, &numeric, &(0..0))
}

pub fn check_cnn(i: u64) -> Result<(), String> {
    let mut rng = SeedStream::new(i).child("cnn").rng();
    let table = random_table(20, 8, &mut rng);
    let skip = pad_range(&table);
    let classes = rng.random_range(2..4);
    let mut model = CnnClassifier::new(table, small_cnn(classes), &mut rng).unwrap();
    model.train_embeddings = !i.is_multiple_of(4);
    let skip = if model.train_embeddings { skip } else { 0..0 };
    let tokens = random_tokens(&model.embedding, 1..8, &mut rng);
    check_classifier("CNN", &model, &tokens, i, skip)
}

pub fn check_lstm(i: u64) -> Result<(), String> {
    let mut rng = SeedStream::new(i).child("lstm").rng();
    let table = random_table(20, 8, &mut rng);
    let classes = rng.random_range(2..4);
    let config = LstmConfig { units: 3, layers: 2, hidden: 4, classes, dropout: 0.2 };
    let mut model = LstmClassifier::new(table, config, &mut rng).unwrap();
    model.train_embeddings = !i.is_multiple_of(4);
    let tokens = random_tokens(&model.embedding, 1..7, &mut rng);
    check_classifier("LSTM", &model, &tokens, i, 0..0)
}

pub fn check_projection(i: u64) -> Result<(), String> {
    let mut rng = SeedStream::new(i).child("projection").rng();
    let table = Arc::new(random_table(20, 8, &mut rng));
    let depth = if i.is_multiple_of(2) { ProjectionDepth::One } else { ProjectionDepth::Two };
    let model = StudentModel::new(table, depth, 4, small_cnn(2), &mut rng).unwrap();
    let tokens = random_tokens(&model.source, 1..8, &mut rng);
    check_classifier("projection", &model, &tokens, i, 0..0)
}

pub fn check_autoencoder(i: u64) -> Result<(), String> {
    let mut rng = SeedStream::new(i).child("autoencoder").rng();
    let activation = if i.is_multiple_of(2) { Activation::Tanh } else { Activation::Identity };
    let cfg = AeConfig { bottleneck: 3, encoder_activation: activation, ..AeConfig::default() };
    let model = AutoencoderModel::new(8, &cfg, &mut rng).unwrap();
    let rows: Vec<Vec<f64>> = (0..rng.random_range(1..6)).map(|_| random_vec(8, 1.0, &mut rng)).collect();
    let rows: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let mut grads = model.zeros_like();
    model.loss(&rows, Some(&mut grads));
    let mut probe = model.clone();
    let numeric = finite_diff_grad(
        |p| {
            probe.set_flat_params(p);
            probe.loss(&rows, None)
        },
        &model.flat_params(),
        STEP,
    )
    .unwrap();
    compare("autoencoder", &grads.flat_params(), &numeric, &(0..0))
}

pub type Check = fn(u64) -> Result<(), String>;

/// Every gradient check by component name.
pub fn gradient_checks() -> Vec<(&'static str, Check)> {
    vec![
        ("LM", check_lm),
        ("NLM", check_nlm),
        ("STM", check_stm),
        ("CNN", check_cnn),
        ("LSTM", check_lstm),
        ("projection", check_projection),
        ("autoencoder", check_autoencoder),
    ]
}

/// Runs `check` on [`INSTANCES`] instances and returns every failure.
pub fn run_check(check: fn(u64) -> Result<(), String>) -> Vec<String> {
    (0..INSTANCES as u64).filter_map(|i| check(i).err().map(|e| format!("instance {i}: {e}"))).collect()
}
