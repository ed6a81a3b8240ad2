//! Autoencoder pretraining for the projection stack.
//!
//! An encoder `in → bottleneck` and a mirrored decoder `bottleneck → in` are
//! trained to reconstruct the rows of the source table. The encoder then
//! becomes the top projection layer of a student.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::data::{Checkpoint, EmbeddingTable};
use crate::error::{domain, Result};
use crate::math::Mat;
use crate::models::{Activation, Dense, Parameters, ProjectionDepth, StudentModel};
use crate::optim::{Adam, AdamConfig};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AeConfig {
    pub bottleneck: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub encoder_activation: Activation,
    pub decoder_activation: Activation,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig {
            bottleneck: 50,
            epochs: 50,
            batch_size: 128,
            optimizer: AdamConfig::default(),
            encoder_activation: Activation::Tanh,
            decoder_activation: Activation::Identity,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    pub encoder: Dense,
    pub decoder: Dense,
}

impl AutoencoderModel {
    pub fn new(inputs: usize, config: &AeConfig, rng: &mut Rng) -> Result<Self> {
        if inputs == 0 || config.bottleneck == 0 {
            return Err(domain("autoencoder widths must be positive"));
        }
        let encoder = Dense::new(inputs, config.bottleneck, config.encoder_activation, rng);
        let decoder = Dense::new(config.bottleneck, inputs, config.decoder_activation, rng);
        Ok(AutoencoderModel { encoder, decoder })
    }

    pub fn inputs(&self) -> usize {
        self.encoder.inputs()
    }

    pub fn zeros_like(&self) -> Self {
        AutoencoderModel { encoder: self.encoder.zeros_like(), decoder: self.decoder.zeros_like() }
    }

    pub fn reconstruct(&self, x: &[f64]) -> Vec<f64> {
        self.decoder.forward(&self.encoder.forward(x))
    }

    /// Mean squared reconstruction error over `rows` (averaged over rows and
    /// components). Adds its gradient into `grads` when given.
    pub fn loss(&self, rows: &[&[f64]], mut grads: Option<&mut AutoencoderModel>) -> f64 {
        if rows.is_empty() {
            return 0.0;
        }
        let d = self.inputs();
        let scale = 1.0 / (rows.len() * d) as f64;
        let mut total = 0.0;
        for x in rows {
            let h = self.encoder.forward(x);
            let y = self.decoder.forward(&h);
            let diff: Vec<f64> = y.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
            total += diff.iter().map(|e| e * e).sum::<f64>();
            if let Some(g) = grads.as_deref_mut() {
                let dy: Vec<f64> = diff.iter().map(|e| 2.0 * e * scale).collect();
                let mut dh = vec![0.0; h.len()];
                self.decoder.backward(&h, &y, &dy, &mut g.decoder, Some(&mut dh));
                self.encoder.backward(x, &h, &dh, &mut g.encoder, None);
            }
        }
        total * scale
    }

    pub fn to_checkpoint(&self, table: &EmbeddingTable) -> Checkpoint {
        let mut ckpt = Checkpoint::new("autoencoder");
        ckpt.set_meta("vocab_hash", table.vocab().hash());
        ckpt.set_meta("inputs", self.inputs());
        ckpt.set_meta("bottleneck", self.encoder.outputs());
        ckpt.set_meta("encoder_activation", self.encoder.activation);
        ckpt.set_meta("decoder_activation", self.decoder.activation);
        ckpt.push_tensor("encoder.weight", self.encoder.weight.clone());
        ckpt.push_tensor("encoder.bias", self.encoder.bias.clone());
        ckpt.push_tensor("decoder.weight", self.decoder.weight.clone());
        ckpt.push_tensor("decoder.bias", self.decoder.bias.clone());
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind("autoencoder")?;
        let inputs: usize = ckpt.parse_meta("inputs")?;
        let bottleneck: usize = ckpt.parse_meta("bottleneck")?;
        Ok(AutoencoderModel {
            encoder: Dense {
                weight: ckpt.tensor_shaped("encoder.weight", bottleneck, inputs)?,
                bias: ckpt.tensor_shaped("encoder.bias", 1, bottleneck)?,
                activation: ckpt.parse_meta("encoder_activation")?,
            },
            decoder: Dense {
                weight: ckpt.tensor_shaped("decoder.weight", inputs, bottleneck)?,
                bias: ckpt.tensor_shaped("decoder.bias", 1, inputs)?,
                activation: ckpt.parse_meta("decoder_activation")?,
            },
        })
    }
}

impl Parameters for AutoencoderModel {
    fn params(&self) -> Vec<&Mat> {
        let mut p = self.encoder.params().to_vec();
        p.extend(self.decoder.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Mat> {
        let [ew, eb] = self.encoder.params_mut();
        let [dw, db] = self.decoder.params_mut();
        vec![ew, eb, dw, db]
    }
}

/// Rows the autoencoder trains on: every vocabulary entry except padding.
pub fn training_rows(table: &EmbeddingTable) -> Vec<&[f64]> {
    let pad = table.vocab().pad();
    (0..table.len()).filter(|&r| r != pad).map(|r| table.row(r)).collect()
}

/// Trains an autoencoder on the table's rows. Returns the model and the
/// reconstruction MSE over all rows after each epoch.
pub fn pretrain_projection(
    table: &EmbeddingTable,
    config: &AeConfig,
    rng: &mut Rng,
) -> Result<(AutoencoderModel, Vec<f64>)> {
    if config.batch_size == 0 {
        return Err(domain("batch size must be positive"));
    }
    let mut model = AutoencoderModel::new(table.dim(), config, rng)?;
    let rows = training_rows(table);
    if rows.is_empty() {
        return Err(domain("table has no rows to reconstruct"));
    }
    let mut opt = Adam::new(config.optimizer)?;
    let mut grads = model.zeros_like();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&[f64]> = chunk.iter().map(|&i| rows[i]).collect();
            grads.zero();
            let l = model.loss(&batch, Some(&mut grads));
            if !l.is_finite() {
                return Err(crate::Error::NonFinite { epoch: epoch + 1, batch: 0, value: l });
            }
            opt.step(model.params_mut(), grads.params());
        }
        curve.push(model.loss(&rows, None));
    }
    Ok((model, curve))
}

/// Copies a pretrained encoder into the student's top projection layer.
/// A two-layer student's lower layer becomes the identity plus Gaussian
/// noise with standard deviation `1e-3` and a zero bias.
pub fn init_student_from_autoencoder(
    mut student: StudentModel,
    ae: &AutoencoderModel,
    rng: &mut Rng,
) -> Result<StudentModel> {
    let layers = &mut student.projection.layers;
    let top = layers.last_mut().expect("non-empty stack");
    if top.weight.shape() != ae.encoder.weight.shape() {
        return Err(domain(format!(
            "encoder is {}→{}, student's top projection is {}→{}",
            ae.encoder.inputs(),
            ae.encoder.outputs(),
            top.inputs(),
            top.outputs()
        )));
    }
    if top.activation != ae.encoder.activation {
        return Err(domain(format!(
            "encoder uses {} activation, student projection uses {}",
            ae.encoder.activation, top.activation
        )));
    }
    *top = ae.encoder.clone();
    if student.projection.depth() == ProjectionDepth::Two {
        let lower = &mut student.projection.layers[0];
        let n = lower.inputs();
        let noise = Normal::new(0.0, 1e-3).expect("valid deviation");
        lower.weight = Mat::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 } + noise.sample(rng));
        lower.bias.fill(0.0);
    }
    Ok(student)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Vocab;
    use crate::math::{finite_diff_grad, grad_mismatch};
    use crate::models::CnnConfig;
    use crate::rng::SeedStream;
    use std::sync::Arc;

    fn table(words: usize, dim: usize, seed: u64) -> EmbeddingTable {
        let mut rng = SeedStream::new(seed).rng();
        let normal = Normal::new(0.0, 0.3).unwrap();
        let vocab = Vocab::new((0..words).map(|i| format!("w{i}")).collect()).unwrap();
        let mut m = Mat::from_fn(vocab.len(), dim, |_, _| normal.sample(&mut rng));
        m.row_mut(vocab.pad()).fill(0.0);
        EmbeddingTable::new(Arc::new(vocab), m).unwrap()
    }

    fn small(bottleneck: usize) -> AeConfig {
        AeConfig { bottleneck, epochs: 5, batch_size: 8, ..AeConfig::default() }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let t = table(6, 7, 3);
        let rows = training_rows(&t);
        for act in [Activation::Tanh, Activation::Identity] {
            let cfg = AeConfig { encoder_activation: act, decoder_activation: act, ..small(3) };
            let model = AutoencoderModel::new(7, &cfg, &mut SeedStream::new(4).rng()).unwrap();
            let mut grads = model.zeros_like();
            model.loss(&rows, Some(&mut grads));
            let numeric = finite_diff_grad(
                |p| {
                    let mut m = model.clone();
                    m.set_flat_params(p);
                    m.loss(&rows, None)
                },
                &model.flat_params(),
                1e-5,
            )
            .unwrap();
            assert_eq!(grad_mismatch(&grads.flat_params(), &numeric, 1e-4, 1e-7), None);
        }
    }

    #[test]
    fn zero_epochs_keep_the_initialization() {
        let t = table(10, 6, 1);
        let cfg = AeConfig { epochs: 0, ..small(2) };
        let (model, curve) = pretrain_projection(&t, &cfg, &mut SeedStream::new(9).rng()).unwrap();
        let init = AutoencoderModel::new(6, &cfg, &mut SeedStream::new(9).rng()).unwrap();
        assert!(curve.is_empty());
        assert_eq!(model, init);
    }

    #[test]
    fn training_reduces_error_and_is_deterministic() {
        let t = table(60, 12, 2);
        let cfg = AeConfig { epochs: 30, ..small(4) };
        let init = AutoencoderModel::new(12, &cfg, &mut SeedStream::new(5).rng()).unwrap();
        let before = init.loss(&training_rows(&t), None);
        let (a, curve) = pretrain_projection(&t, &cfg, &mut SeedStream::new(5).rng()).unwrap();
        let (b, _) = pretrain_projection(&t, &cfg, &mut SeedStream::new(5).rng()).unwrap();
        assert_eq!(a, b);
        assert!(*curve.last().unwrap() < before);
    }

    #[test]
    fn student_init_copies_the_encoder() {
        let t = Arc::new(table(10, 8, 3));
        let mut rng = SeedStream::new(1).rng();
        let cfg = small(4);
        let ae = AutoencoderModel::new(8, &cfg, &mut rng).unwrap();
        let two = StudentModel::new(Arc::clone(&t), ProjectionDepth::Two, 4, CnnConfig::student(2), &mut rng).unwrap();
        let init = init_student_from_autoencoder(two, &ae, &mut rng).unwrap();
        assert_eq!(init.projection.layers[1], ae.encoder);
        let lower = &init.projection.layers[0].weight;
        for r in 0..8 {
            for c in 0..8 {
                let target = if r == c { 1.0 } else { 0.0 };
                assert!((lower.get(r, c) - target).abs() < 1e-2);
            }
        }
        let one = StudentModel::new(Arc::clone(&t), ProjectionDepth::One, 4, CnnConfig::student(2), &mut rng).unwrap();
        assert_eq!(init_student_from_autoencoder(one, &ae, &mut rng).unwrap().projection.layers[0], ae.encoder);

        let wide = StudentModel::new(t, ProjectionDepth::One, 5, CnnConfig::student(2), &mut rng).unwrap();
        assert!(matches!(init_student_from_autoencoder(wide, &ae, &mut rng), Err(crate::Error::Domain(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let t = table(5, 6, 8);
        let ae = AutoencoderModel::new(6, &small(3), &mut SeedStream::new(2).rng()).unwrap();
        let back =
            AutoencoderModel::from_checkpoint(&Checkpoint::from_bytes(&ae.to_checkpoint(&t).to_bytes()).unwrap())
                .unwrap();
        for (a, b) in ae.flat_params().iter().zip(back.flat_params()) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
        }
    }
}
