use std::sync::Arc;

use super::layers::{apply_mask, maybe_mask, xavier, Activation, Dense, Mode};
use super::{Classifier, Parameters};
use crate::data::{Checkpoint, EmbeddingTable, Vocab};
use crate::error::{domain, Error, Result};
use crate::math::{axpy, dot, Mat};
use crate::rng::Rng;

/// Shape and regularization of the convolutional classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnConfig {
    pub widths: Vec<usize>,
    pub filters: usize,
    pub hidden: usize,
    pub classes: usize,
    pub hidden_dropout: f64,
}

impl CnnConfig {
    /// Filter widths 2–5 with 32 filters each and a 50-unit hidden layer.
    pub fn teacher(classes: usize) -> Self {
        CnnConfig { widths: vec![2, 3, 4, 5], filters: 32, hidden: 50, classes, hidden_dropout: 0.8 }
    }

    /// Same shape as [`CnnConfig::teacher`] with the student's lighter dropout.
    pub fn student(classes: usize) -> Self {
        CnnConfig { hidden_dropout: 0.1, ..CnnConfig::teacher(classes) }
    }

    pub fn max_width(&self) -> usize {
        self.widths.iter().copied().max().unwrap_or(1)
    }

    pub fn pooled_dim(&self) -> usize {
        self.widths.len() * self.filters
    }

    /// Parameters of the head on `dim`-wide inputs.
    pub fn head_param_count(&self, dim: usize) -> usize {
        let conv: usize = self.widths.iter().map(|w| self.filters * w * dim + self.filters).sum();
        conv + self.hidden * self.pooled_dim() + self.hidden + self.classes * self.hidden + self.classes
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(domain("filter widths must be positive"));
        }
        if self.filters == 0 || self.hidden == 0 || self.classes == 0 {
            return Err(domain("filters, hidden units and classes must be positive"));
        }
        if !(0.0..1.0).contains(&self.hidden_dropout) {
            return Err(domain(format!("dropout rate {} outside [0, 1)", self.hidden_dropout)));
        }
        Ok(())
    }

    pub(crate) fn write_meta(&self, ckpt: &mut Checkpoint) {
        let widths: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        ckpt.set_meta("widths", widths.join(","));
        ckpt.set_meta("filters", self.filters);
        ckpt.set_meta("hidden", self.hidden);
        ckpt.set_meta("classes", self.classes);
        ckpt.set_meta("hidden_dropout", self.hidden_dropout);
    }

    pub(crate) fn read_meta(ckpt: &Checkpoint) -> Result<Self> {
        let widths = ckpt
            .require_meta("widths")?
            .split(',')
            .map(|w| w.parse().map_err(|_| Error::Version(format!("bad filter width {w:?}"))))
            .collect::<Result<Vec<usize>>>()?;
        let cfg = CnnConfig {
            widths,
            filters: ckpt.parse_meta("filters")?,
            hidden: ckpt.parse_meta("hidden")?,
            classes: ckpt.parse_meta("classes")?,
            hidden_dropout: ckpt.parse_meta("hidden_dropout")?,
        };
        cfg.validate().map_err(|e| Error::Version(e.to_string()))?;
        Ok(cfg)
    }
}

/// One filter bank: `filters` kernels spanning `width` consecutive tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub width: usize,
    /// `filters × (width · dim)`; a row is a kernel over a flattened window.
    pub weight: Mat,
    pub bias: Mat,
}

/// Convolution + max-over-time pooling + hidden layer + output layer,
/// applied to a sequence of word vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnHead {
    pub config: CnnConfig,
    pub dim: usize,
    pub convs: Vec<Conv>,
    pub hidden: Dense,
    pub output: Dense,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    /// Per filter bank, per filter: (winning window position, activation).
    winners: Vec<Vec<(usize, f64)>>,
    pooled: Vec<f64>,
    hidden: Vec<f64>,
    hidden_mask: Option<Vec<f64>>,
    dropped: Vec<f64>,
}

impl CnnHead {
    pub fn new(config: CnnConfig, dim: usize, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        if dim == 0 {
            return Err(domain("input dimension must be positive"));
        }
        let convs = config
            .widths
            .iter()
            .map(|&w| Conv {
                width: w,
                weight: xavier(config.filters, w * dim, w * dim, config.filters, rng),
                bias: Mat::zeros(1, config.filters),
            })
            .collect();
        let hidden = Dense::new(config.pooled_dim(), config.hidden, Activation::Tanh, rng);
        let output = Dense::new(config.hidden, config.classes, Activation::Identity, rng);
        Ok(CnnHead { config, dim, convs, hidden, output })
    }

    pub fn zeros_like(&self) -> Self {
        CnnHead {
            config: self.config.clone(),
            dim: self.dim,
            convs: self
                .convs
                .iter()
                .map(|c| Conv {
                    width: c.width,
                    weight: Mat::zeros(c.weight.rows(), c.weight.cols()),
                    bias: Mat::zeros(1, c.bias.cols()),
                })
                .collect(),
            hidden: self.hidden.zeros_like(),
            output: self.output.zeros_like(),
        }
    }

    /// Length a sequence of `n` real tokens is padded to.
    pub fn padded_len(&self, n: usize) -> usize {
        n.max(self.config.max_width())
    }

    /// Runs on `x` (`padded_len(n_real) × dim`). Pooling for width `w` covers
    /// window starts `0..=max(n_real, w) - w`, so windows reach into padding
    /// only when the sentence is shorter than the filter; extra trailing
    /// padding never changes the result.
    pub fn forward(&self, x: &Mat, n_real: usize, mode: Mode, rng: &mut Rng) -> (Vec<f64>, HeadCache) {
        debug_assert_eq!(x.cols(), self.dim);
        debug_assert!(x.rows() >= self.padded_len(n_real));
        let mut pooled = Vec::with_capacity(self.config.pooled_dim());
        let mut winners = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let positions = n_real.max(conv.width) - conv.width + 1;
            let mut best = Vec::with_capacity(self.config.filters);
            for f in 0..self.config.filters {
                let kernel = conv.weight.row(f);
                let b = conv.bias.as_slice()[f];
                let mut win = (0, f64::NEG_INFINITY);
                for pos in 0..positions {
                    let pre = dot(kernel, x.rows_slice(pos, conv.width)) + b;
                    if pre > win.1 {
                        win = (pos, pre);
                    }
                }
                // tanh is monotone, so pooling pre-activations picks the same window.
                let act = win.1.tanh();
                best.push((win.0, act));
                pooled.push(act);
            }
            winners.push(best);
        }
        let hidden = self.hidden.forward(&pooled);
        let hidden_mask = maybe_mask(hidden.len(), self.config.hidden_dropout, mode, rng);
        let mut dropped = hidden.clone();
        apply_mask(&mut dropped, hidden_mask.as_ref());
        let logits = self.output.forward(&dropped);
        (logits, HeadCache { winners, pooled, hidden, hidden_mask, dropped })
    }

    /// Accumulates parameter gradients into `grads` and input gradients into `dx`.
    pub fn backward(&self, x: &Mat, cache: &HeadCache, dlogits: &[f64], grads: &mut CnnHead, dx: &mut Mat) {
        let mut ddropped = vec![0.0; self.config.hidden];
        self.output.backward(&cache.dropped, dlogits, dlogits, &mut grads.output, Some(&mut ddropped));
        apply_mask(&mut ddropped, cache.hidden_mask.as_ref());
        let mut dpooled = vec![0.0; self.config.pooled_dim()];
        self.hidden.backward(&cache.pooled, &cache.hidden, &ddropped, &mut grads.hidden, Some(&mut dpooled));

        let mut k = 0;
        for ((conv, gconv), winners) in self.convs.iter().zip(grads.convs.iter_mut()).zip(&cache.winners) {
            let span = conv.width * self.dim;
            for (f, &(pos, act)) in winners.iter().enumerate() {
                let g = dpooled[k] * (1.0 - act * act);
                k += 1;
                if g == 0.0 {
                    continue;
                }
                let window = x.rows_slice(pos, conv.width);
                axpy(g, window, &mut gconv.weight.row_mut(f)[..span]);
                gconv.bias.as_mut_slice()[f] += g;
                axpy(g, conv.weight.row(f), dx.rows_slice_mut(pos, conv.width));
            }
        }
    }

    pub fn params(&self) -> Vec<&Mat> {
        let mut p = Vec::with_capacity(2 * self.convs.len() + 4);
        for c in &self.convs {
            p.push(&c.weight);
            p.push(&c.bias);
        }
        p.extend(self.hidden.params());
        p.extend(self.output.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Mat> {
        let mut p = Vec::with_capacity(2 * self.convs.len() + 4);
        for c in &mut self.convs {
            p.push(&mut c.weight);
            p.push(&mut c.bias);
        }
        p.extend(self.hidden.params_mut());
        p.extend(self.output.params_mut());
        p
    }

    pub fn param_count(&self) -> usize {
        self.config.head_param_count(self.dim)
    }

    pub(crate) fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for c in &self.convs {
            names.push(format!("conv.{}.weight", c.width));
            names.push(format!("conv.{}.bias", c.width));
        }
        names.extend(["hidden.weight", "hidden.bias", "output.weight", "output.bias"].map(String::from));
        names
    }

    pub(crate) fn write_tensors(&self, ckpt: &mut Checkpoint, prefix: &str) {
        for (name, t) in self.tensor_names().into_iter().zip(self.params()) {
            ckpt.push_tensor(format!("{prefix}{name}"), t.clone());
        }
    }

    pub(crate) fn read_tensors(config: CnnConfig, dim: usize, ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        // Build a zero head of the declared shape, then fill each slot.
        let mut head = CnnHead::new(config, dim, &mut crate::rng::SeedStream::new(0).rng())?.zeros_like();
        let names = head.tensor_names();
        for (name, slot) in names.into_iter().zip(head.params_mut()) {
            *slot = ckpt.tensor_shaped(&format!("{prefix}{name}"), slot.rows(), slot.cols())?;
        }
        Ok(head)
    }
}

/// Word-vector lookup followed by a [`CnnHead`]. Used for the 400-d teacher,
/// the 50-d baseline, and the deployed student over a distilled table.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnClassifier {
    pub embedding: EmbeddingTable,
    pub head: CnnHead,
    /// Whether the lookup table is updated during training. The padding row
    /// never is.
    pub train_embeddings: bool,
}

#[derive(Debug, Clone)]
pub struct CnnCache {
    tokens: Vec<usize>,
    x: Mat,
    head: HeadCache,
}

impl CnnClassifier {
    pub fn new(embedding: EmbeddingTable, config: CnnConfig, rng: &mut Rng) -> Result<Self> {
        let head = CnnHead::new(config, embedding.dim(), rng)?;
        Ok(CnnClassifier { embedding, head, train_embeddings: true })
    }

    /// Pairs a table with an existing head, e.g. a distilled table with a
    /// trained student's head.
    pub fn from_parts(embedding: EmbeddingTable, head: CnnHead, train_embeddings: bool) -> Result<Self> {
        if embedding.dim() != head.dim {
            return Err(domain(format!("table is {}-d, head expects {}-d", embedding.dim(), head.dim)));
        }
        Ok(CnnClassifier { embedding, head, train_embeddings })
    }

    /// Embedding lookup padded with the padding token.
    fn lookup(&self, tokens: &[usize]) -> (Vec<usize>, Mat) {
        let pad = self.embedding.vocab().pad();
        let mut padded = tokens.to_vec();
        padded.resize(self.head.padded_len(tokens.len()), pad);
        let dim = self.embedding.dim();
        let mut x = Mat::zeros(padded.len(), dim);
        for (r, &t) in padded.iter().enumerate() {
            x.row_mut(r).copy_from_slice(self.embedding.row(t));
        }
        (padded, x)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new("cnn");
        ckpt.set_meta("vocab_hash", self.embedding.vocab().hash());
        ckpt.set_meta("dim", self.embedding.dim());
        self.head.config.write_meta(&mut ckpt);
        if self.train_embeddings {
            ckpt.set_meta("embedding", "stored");
            ckpt.push_tensor("embedding", self.embedding.matrix().clone());
        } else {
            ckpt.set_meta("embedding", "external");
            ckpt.set_meta("table_hash", super::table_hash(&self.embedding));
        }
        self.head.write_tensors(&mut ckpt, "");
        ckpt
    }

    /// Rebuilds a classifier. `table` supplies the vocabulary and, for
    /// checkpoints whose embeddings are stored externally, the vectors too.
    pub fn from_checkpoint(ckpt: &Checkpoint, table: &EmbeddingTable) -> Result<Self> {
        ckpt.expect_kind("cnn")?;
        ckpt.expect_vocab(table.vocab().hash())?;
        let dim: usize = ckpt.parse_meta("dim")?;
        let config = CnnConfig::read_meta(ckpt)?;
        let stored = match ckpt.require_meta("embedding")? {
            "stored" => true,
            "external" => false,
            other => return Err(Error::Version(format!("unknown embedding storage {other:?}"))),
        };
        let embedding = if stored {
            let m = ckpt.tensor_shaped("embedding", table.len(), dim)?;
            EmbeddingTable::new(Arc::clone(table.vocab()), m)?
        } else {
            if table.dim() != dim || ckpt.require_meta("table_hash")? != super::table_hash(table) {
                return Err(Error::Version("external embedding table does not match the checkpoint".into()));
            }
            table.clone()
        };
        let head = CnnHead::read_tensors(config, dim, ckpt, "")?;
        CnnClassifier::from_parts(embedding, head, stored)
    }
}

impl Parameters for CnnClassifier {
    fn params(&self) -> Vec<&Mat> {
        let mut p = Vec::new();
        if self.train_embeddings {
            p.push(self.embedding.matrix());
        }
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Mat> {
        let mut p = Vec::new();
        if self.train_embeddings {
            p.push(self.embedding.matrix_mut());
        }
        p.extend(self.head.params_mut());
        p
    }
}

impl Classifier for CnnClassifier {
    type Cache = CnnCache;

    fn num_classes(&self) -> usize {
        self.head.config.classes
    }

    fn vocab(&self) -> &Vocab {
        self.embedding.vocab()
    }

    fn forward(&self, tokens: &[usize], mode: Mode, rng: &mut Rng) -> (Vec<f64>, CnnCache) {
        let tokens = super::strip_padding(tokens, self.embedding.vocab().pad());
        let (padded, x) = self.lookup(tokens);
        let (logits, head) = self.head.forward(&x, tokens.len(), mode, rng);
        (logits, CnnCache { tokens: padded, x, head })
    }

    fn backward(&self, cache: &CnnCache, dlogits: &[f64], grads: &mut Self) {
        let mut dx = Mat::zeros(cache.x.rows(), cache.x.cols());
        self.head.backward(&cache.x, &cache.head, dlogits, &mut grads.head, &mut dx);
        if self.train_embeddings {
            let pad = self.embedding.vocab().pad();
            for (r, &t) in cache.tokens.iter().enumerate() {
                if t != pad {
                    axpy(1.0, dx.row(r), grads.embedding.matrix_mut().row_mut(t));
                }
            }
        }
    }

    fn zeros_like(&self) -> Self {
        let table = if self.train_embeddings {
            let m = Mat::zeros(self.embedding.len(), self.embedding.dim());
            EmbeddingTable::new(Arc::clone(self.embedding.vocab()), m).expect("same shape as the source table")
        } else {
            self.embedding.clone()
        };
        CnnClassifier { embedding: table, head: self.head.zeros_like(), train_embeddings: self.train_embeddings }
    }

    fn param_count(&self, _deployment: bool) -> usize {
        self.embedding_param_count(false) + self.head.param_count()
    }

    fn embedding_param_count(&self, _deployment: bool) -> usize {
        self.embedding.len() * self.embedding.dim()
    }
}
