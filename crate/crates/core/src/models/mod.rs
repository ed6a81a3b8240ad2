//! The fixed model family: CNN and biLSTM classifiers over word vectors, and
//! the CNN student that reads its word vectors through a projection stack.
//!
//! Every model computes its own gradients by hand; the tests in this module
//! and in `tests/gradients.rs` hold them to central finite differences.

mod cnn;
mod layers;
mod lstm;
mod projection;
mod student;

use std::sync::Arc;

use sha2::{Digest, Sha256};

pub use cnn::{CnnCache, CnnClassifier, CnnConfig, CnnHead, Conv, HeadCache};
pub use layers::{dropout_mask, xavier, Activation, Dense, Mode};
pub use lstm::{LstmCache, LstmCell, LstmClassifier, LstmConfig};
pub use projection::{ProjectionDepth, ProjectionStack};
pub use student::{StudentCache, StudentModel};

use crate::data::{Checkpoint, EmbeddingTable, Vocab};
use crate::error::{Error, Result};
use crate::math::Mat;
use crate::rng::{Rng, SeedStream};

/// Ordered access to trainable tensors.
pub trait Parameters {
    fn params(&self) -> Vec<&Mat>;
    fn params_mut(&mut self) -> Vec<&mut Mat>;

    fn zero(&mut self) {
        for p in self.params_mut() {
            p.fill(0.0);
        }
    }

    fn flat_params(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.as_slice().iter().copied()).collect()
    }

    fn set_flat_params(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat parameter vector has the wrong length");
    }

    fn trainable_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// A text classifier with a hand-written backward pass.
///
/// Gradients are accumulated into a zeroed model of the same type, obtained
/// from [`Classifier::zeros_like`].
pub trait Classifier: Parameters + Clone {
    type Cache;

    fn num_classes(&self) -> usize;

    fn vocab(&self) -> &Vocab;

    /// Logits for one token sequence. Eval mode ignores `rng`.
    fn forward(&self, tokens: &[usize], mode: Mode, rng: &mut Rng) -> (Vec<f64>, Self::Cache);

    /// Adds `∂L/∂θ` to `grads` given `dlogits = ∂L/∂logits`.
    fn backward(&self, cache: &Self::Cache, dlogits: &[f64], grads: &mut Self);

    fn zeros_like(&self) -> Self;

    /// Stored parameter count. With `deployment`, a student is counted as
    /// its distilled table plus head.
    fn param_count(&self, deployment: bool) -> usize;

    fn embedding_param_count(&self, deployment: bool) -> usize;

    fn logits(&self, tokens: &[usize]) -> Vec<f64> {
        self.forward(tokens, Mode::Eval, &mut SeedStream::new(0).rng()).0
    }

    fn predict(&self, tokens: &[usize]) -> usize {
        crate::math::argmax(&self.logits(tokens))
    }
}

/// `tokens` without trailing padding, so that explicit padding in the input
/// behaves exactly like the padding the models add themselves.
pub(crate) fn strip_padding(tokens: &[usize], pad: usize) -> &[usize] {
    let end = tokens.iter().rposition(|&t| t != pad).map_or(0, |i| i + 1);
    &tokens[..end]
}

/// Parameter count of a CNN classifier described only by shapes.
pub fn cnn_param_count(vocab_size: usize, dim: usize, config: &CnnConfig) -> usize {
    vocab_size * dim + config.head_param_count(dim)
}

/// Fingerprint of a table's vocabulary and exact values.
pub fn table_hash(table: &EmbeddingTable) -> String {
    let mut h = Sha256::new();
    h.update(table.vocab().hash().as_bytes());
    for v in table.matrix().as_slice() {
        h.update(v.to_le_bytes());
    }
    h.finalize()[..16].iter().map(|b| format!("{b:02x}")).collect()
}

/// Any checkpointed classifier.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Cnn(CnnClassifier),
    Lstm(LstmClassifier),
    Student(StudentModel),
}

impl AnyModel {
    /// Loads a model checkpoint; `table` is the vocabulary-defining table the
    /// model was built over (the source table for students, the distilled
    /// table for deployed models).
    pub fn load(ckpt: &Checkpoint, table: &Arc<EmbeddingTable>) -> Result<Self> {
        match ckpt.kind.as_str() {
            "cnn" => Ok(AnyModel::Cnn(CnnClassifier::from_checkpoint(ckpt, table)?)),
            "lstm" => Ok(AnyModel::Lstm(LstmClassifier::from_checkpoint(ckpt, table)?)),
            "student" => Ok(AnyModel::Student(StudentModel::from_checkpoint(ckpt, Arc::clone(table))?)),
            other => Err(Error::Version(format!("{other} checkpoints are not classifiers"))),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        match self {
            AnyModel::Cnn(m) => m.to_checkpoint(),
            AnyModel::Lstm(m) => m.to_checkpoint(),
            AnyModel::Student(m) => m.to_checkpoint(),
        }
    }

    pub fn logits(&self, tokens: &[usize]) -> Vec<f64> {
        match self {
            AnyModel::Cnn(m) => m.logits(tokens),
            AnyModel::Lstm(m) => m.logits(tokens),
            AnyModel::Student(m) => m.logits(tokens),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            AnyModel::Cnn(m) => m.num_classes(),
            AnyModel::Lstm(m) => m.num_classes(),
            AnyModel::Student(m) => m.num_classes(),
        }
    }

    pub fn vocab(&self) -> &Vocab {
        match self {
            AnyModel::Cnn(m) => m.vocab(),
            AnyModel::Lstm(m) => m.vocab(),
            AnyModel::Student(m) => m.vocab(),
        }
    }

    pub fn param_count(&self, deployment: bool) -> usize {
        match self {
            AnyModel::Cnn(m) => m.param_count(deployment),
            AnyModel::Lstm(m) => m.param_count(deployment),
            AnyModel::Student(m) => m.param_count(deployment),
        }
    }

    pub fn embedding_param_count(&self, deployment: bool) -> usize {
        match self {
            AnyModel::Cnn(m) => m.embedding_param_count(deployment),
            AnyModel::Lstm(m) => m.embedding_param_count(deployment),
            AnyModel::Student(m) => m.embedding_param_count(deployment),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Vocab;
    use rand::Rng as _;

    fn table(words: usize, dim: usize, seed: u64) -> EmbeddingTable {
        let vocab = Vocab::new((0..words).map(|i| format!("w{i}")).collect()).unwrap();
        let mut rng = SeedStream::new(seed).rng();
        let pad = vocab.pad();
        let m = Mat::from_fn(vocab.len(), dim, |r, _| if r == pad { 0.0 } else { rng.random_range(-0.5..0.5) });
        EmbeddingTable::new(Arc::new(vocab), m).unwrap()
    }

    fn small_cnn(classes: usize) -> CnnConfig {
        CnnConfig { widths: vec![2, 3], filters: 3, hidden: 4, classes, hidden_dropout: 0.3 }
    }

    #[test]
    fn zero_weights_give_output_bias() {
        let mut rng = SeedStream::new(1).rng();
        let mut m = CnnClassifier::new(table(10, 4, 1), small_cnn(3), &mut rng).unwrap();
        m.zero();
        m.head.output.bias = Mat::from_vec(1, 3, vec![0.5, -1.0, 2.0]).unwrap();
        assert_eq!(m.logits(&[1, 2, 3]), vec![0.5, -1.0, 2.0]);

        let mut l = LstmClassifier::new(
            table(10, 4, 1),
            LstmConfig { units: 3, layers: 2, hidden: 4, classes: 2, dropout: 0.2 },
            &mut rng,
        )
        .unwrap();
        l.zero();
        l.output.bias = Mat::from_vec(1, 2, vec![0.25, 0.75]).unwrap();
        assert_eq!(l.logits(&[4]), vec![0.25, 0.75]);
    }

    #[test]
    fn seeded_train_forward_is_reproducible() {
        let m = CnnClassifier::new(table(10, 4, 2), small_cnn(2), &mut SeedStream::new(2).rng()).unwrap();
        let a = m.forward(&[1, 2, 3, 4], Mode::Train, &mut SeedStream::new(9).rng()).0;
        let b = m.forward(&[1, 2, 3, 4], Mode::Train, &mut SeedStream::new(9).rng()).0;
        assert_eq!(a, b);
    }

    #[test]
    fn appended_padding_never_changes_eval_logits() {
        let t = table(10, 4, 3);
        let pad = t.vocab().pad();
        let m = CnnClassifier::new(
            t,
            CnnConfig { widths: vec![2, 3, 4, 5], ..small_cnn(2) },
            &mut SeedStream::new(3).rng(),
        )
        .unwrap();
        for tokens in [vec![1], vec![1, 2, 3], vec![4, 5, 6, 7, 8, 9]] {
            let base = m.logits(&tokens);
            for extra in 1..4 {
                let mut padded = tokens.clone();
                padded.extend(std::iter::repeat_n(pad, extra));
                assert_eq!(m.logits(&padded), base);
            }
        }
    }

    #[test]
    fn single_token_lstm_is_finite() {
        let m = LstmClassifier::new(
            table(10, 4, 4),
            LstmConfig { units: 3, layers: 2, hidden: 4, classes: 2, dropout: 0.2 },
            &mut SeedStream::new(4).rng(),
        )
        .unwrap();
        assert!(m.logits(&[3]).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn identity_projection_reproduces_direct_cnn() {
        let t = Arc::new(table(12, 5, 5));
        let mut rng = SeedStream::new(5).rng();
        let cnn = CnnClassifier::new((*t).clone(), small_cnn(2), &mut rng).unwrap();
        let identity = Dense { weight: Mat::identity(5), bias: Mat::zeros(1, 5), activation: Activation::Identity };
        let student = StudentModel::from_parts(
            Arc::clone(&t),
            ProjectionStack::from_layers(vec![identity]).unwrap(),
            cnn.head.clone(),
            0.1,
        )
        .unwrap();
        for tokens in [vec![0, 1, 2], vec![5, 5, 7, 8, 3, 2, 1]] {
            assert_eq!(student.logits(&tokens), cnn.logits(&tokens));
        }
    }

    #[test]
    fn student_eval_ignores_rng() {
        let s = StudentModel::new(
            Arc::new(table(8, 6, 6)),
            ProjectionDepth::Two,
            3,
            small_cnn(2),
            &mut SeedStream::new(6).rng(),
        )
        .unwrap();
        let a = s.forward(&[1, 2, 3], Mode::Eval, &mut SeedStream::new(1).rng()).0;
        let b = s.forward(&[1, 2, 3], Mode::Eval, &mut SeedStream::new(2).rng()).0;
        assert_eq!(a, b);
    }

    #[test]
    fn deployed_student_is_equivalent() {
        let s = StudentModel::new(
            Arc::new(table(30, 8, 7)),
            ProjectionDepth::Two,
            4,
            small_cnn(3),
            &mut SeedStream::new(7).rng(),
        )
        .unwrap();
        let d = s.deploy();
        assert_eq!(d.embedding.matrix().shape(), (32, 4));
        let mut rng = SeedStream::new(8).rng();
        for _ in 0..50 {
            let n = rng.random_range(1..9);
            let tokens: Vec<usize> = (0..n).map(|_| rng.random_range(0..32)).collect();
            let (a, b) = (s.logits(&tokens), d.logits(&tokens));
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-6);
            }
        }
        assert_eq!(d.param_count(true), s.param_count(true));
        assert_eq!(s.param_count(false) - s.param_count(true), 32 * 8 + s.projection.param_count() - 32 * 4);
    }

    #[test]
    fn param_counts_match_tensor_sizes() {
        let mut rng = SeedStream::new(9).rng();
        let t = table(20, 6, 9);
        let cnn = CnnClassifier::new(t.clone(), CnnConfig::teacher(2), &mut rng).unwrap();
        assert_eq!(cnn.param_count(false), cnn.trainable_count());
        assert_eq!(cnn.param_count(false), cnn_param_count(22, 6, &CnnConfig::teacher(2)));
        let lstm = LstmClassifier::new(t, LstmConfig::teacher(2), &mut rng).unwrap();
        assert_eq!(lstm.param_count(false), lstm.trainable_count());
        // A degenerate model without vocabulary is all head.
        let cfg = CnnConfig::teacher(2);
        assert_eq!(cnn_param_count(0, 50, &cfg), cfg.head_param_count(50));
    }

    #[test]
    fn checkpoints_round_trip() {
        let mut rng = SeedStream::new(10).rng();
        let t = Arc::new(table(10, 4, 10));
        let cnn = CnnClassifier::new((*t).clone(), small_cnn(2), &mut rng).unwrap();
        let back =
            CnnClassifier::from_checkpoint(&Checkpoint::from_bytes(&cnn.to_checkpoint().to_bytes()).unwrap(), &t)
                .unwrap();
        for (a, b) in cnn.flat_params().iter().zip(back.flat_params()) {
            assert!((a - b).abs() <= 1e-6);
        }
        let student = StudentModel::new(Arc::clone(&t), ProjectionDepth::Two, 3, small_cnn(2), &mut rng).unwrap();
        let back = StudentModel::from_checkpoint(&student.to_checkpoint(), Arc::clone(&t)).unwrap();
        for (a, b) in student.flat_params().iter().zip(back.flat_params()) {
            assert!((a - b).abs() <= 1e-6);
        }
        let lstm = LstmClassifier::new(
            (*t).clone(),
            LstmConfig { units: 2, layers: 2, hidden: 3, classes: 2, dropout: 0.2 },
            &mut rng,
        )
        .unwrap();
        let back = LstmClassifier::from_checkpoint(&lstm.to_checkpoint(), &t).unwrap();
        assert_eq!(back.trainable_count(), lstm.trainable_count());

        let other = table(11, 4, 10);
        assert!(matches!(CnnClassifier::from_checkpoint(&cnn.to_checkpoint(), &other), Err(Error::Version(_))));
        let mut ckpt = student.to_checkpoint();
        ckpt.set_meta("distilled_dim", 5);
        assert!(matches!(StudentModel::from_checkpoint(&ckpt, t), Err(Error::Version(_))));
    }
}
