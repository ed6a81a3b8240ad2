use std::collections::HashMap;
use std::sync::Arc;

use super::cnn::{CnnClassifier, CnnConfig, CnnHead, HeadCache};
use super::layers::{maybe_mask, Activation, Dense, Mode};
use super::projection::{ProjectionDepth, ProjectionStack};
use super::{Classifier, Parameters};
use crate::data::{Checkpoint, EmbeddingTable, Vocab};
use crate::error::{domain, Error, Result};
use crate::math::{axpy, Mat};
use crate::rng::Rng;

/// Frozen source table → projection stack → CNN head.
///
/// Only the projection and the head train. Each distinct token is projected
/// once per forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentModel {
    pub source: Arc<EmbeddingTable>,
    pub projection: ProjectionStack,
    pub head: CnnHead,
    /// Dropout on the projected vectors.
    pub projection_dropout: f64,
}

#[derive(Debug, Clone)]
pub struct StudentCache {
    unique: Vec<usize>,
    slots: Vec<usize>,
    traces: Vec<Vec<Vec<f64>>>,
    masks: Vec<Option<Vec<f64>>>,
    x: Mat,
    head: HeadCache,
}

impl StudentModel {
    /// Student with the given projection depth and output width over `source`.
    pub fn new(
        source: Arc<EmbeddingTable>,
        depth: ProjectionDepth,
        distilled_dim: usize,
        config: CnnConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let projection = ProjectionStack::new(depth, source.dim(), distilled_dim, Activation::Tanh, rng);
        let head = CnnHead::new(config, distilled_dim, rng)?;
        StudentModel::from_parts(source, projection, head, 0.1)
    }

    pub fn from_parts(
        source: Arc<EmbeddingTable>,
        projection: ProjectionStack,
        head: CnnHead,
        projection_dropout: f64,
    ) -> Result<Self> {
        if projection.inputs() != source.dim() {
            return Err(domain(format!(
                "projection expects {}-d inputs, source table is {}-d",
                projection.inputs(),
                source.dim()
            )));
        }
        if projection.outputs() != head.dim {
            return Err(domain(format!(
                "projection emits {}-d vectors, head expects {}-d",
                projection.outputs(),
                head.dim
            )));
        }
        if !(0.0..1.0).contains(&projection_dropout) {
            return Err(domain(format!("dropout rate {projection_dropout} outside [0, 1)")));
        }
        Ok(StudentModel { source, projection, head, projection_dropout })
    }

    pub fn distilled_dim(&self) -> usize {
        self.projection.outputs()
    }

    /// Distilled table: every vocabulary row pushed through the projection.
    pub fn extract_distilled_embeddings(&self) -> EmbeddingTable {
        let dim = self.distilled_dim();
        let mut m = Mat::zeros(self.source.len(), dim);
        for r in 0..self.source.len() {
            m.row_mut(r).copy_from_slice(&self.projection.project(self.source.row(r)));
        }
        EmbeddingTable::new(Arc::clone(self.source.vocab()), m).expect("one row per vocabulary entry")
    }

    /// Standalone classifier over the distilled table; the source table and
    /// projection are no longer needed.
    pub fn deploy(&self) -> CnnClassifier {
        CnnClassifier::from_parts(self.extract_distilled_embeddings(), self.head.clone(), false)
            .expect("head width equals distilled width")
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new("student");
        ckpt.set_meta("vocab_hash", self.source.vocab().hash());
        ckpt.set_meta("table_hash", super::table_hash(&self.source));
        ckpt.set_meta("source_dim", self.source.dim());
        ckpt.set_meta("distilled_dim", self.distilled_dim());
        ckpt.set_meta("projection", self.projection.depth());
        ckpt.set_meta("activation", self.projection.activation());
        ckpt.set_meta("projection_dropout", self.projection_dropout);
        self.head.config.write_meta(&mut ckpt);
        for (i, layer) in self.projection.layers.iter().enumerate() {
            ckpt.push_tensor(format!("projection.{i}.weight"), layer.weight.clone());
            ckpt.push_tensor(format!("projection.{i}.bias"), layer.bias.clone());
        }
        self.head.write_tensors(&mut ckpt, "head.");
        ckpt
    }

    /// `source` must be the exact table the student was trained over.
    pub fn from_checkpoint(ckpt: &Checkpoint, source: Arc<EmbeddingTable>) -> Result<Self> {
        ckpt.expect_kind("student")?;
        ckpt.expect_vocab(source.vocab().hash())?;
        if ckpt.require_meta("table_hash")? != super::table_hash(&source) {
            return Err(Error::Version(
                "source embedding table differs from the one the student was trained on".into(),
            ));
        }
        let source_dim: usize = ckpt.parse_meta("source_dim")?;
        let distilled: usize = ckpt.parse_meta("distilled_dim")?;
        let depth: ProjectionDepth = ckpt.parse_meta("projection")?;
        let activation: Activation = ckpt.parse_meta("activation")?;
        let dims = match depth {
            ProjectionDepth::One => vec![(source_dim, distilled)],
            ProjectionDepth::Two => vec![(source_dim, source_dim), (source_dim, distilled)],
        };
        let layers = dims
            .into_iter()
            .enumerate()
            .map(|(i, (inp, out))| {
                Ok(Dense {
                    weight: ckpt.tensor_shaped(&format!("projection.{i}.weight"), out, inp)?,
                    bias: ckpt.tensor_shaped(&format!("projection.{i}.bias"), 1, out)?,
                    activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let config = CnnConfig::read_meta(ckpt)?;
        let head = CnnHead::read_tensors(config, distilled, ckpt, "head.")?;
        StudentModel::from_parts(
            source,
            ProjectionStack::from_layers(layers)?,
            head,
            ckpt.parse_meta("projection_dropout")?,
        )
        .map_err(|e| Error::Version(e.to_string()))
    }
}

impl Parameters for StudentModel {
    fn params(&self) -> Vec<&Mat> {
        let mut p = self.projection.params();
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Mat> {
        let mut p = self.projection.params_mut();
        p.extend(self.head.params_mut());
        p
    }
}

impl Classifier for StudentModel {
    type Cache = StudentCache;

    fn num_classes(&self) -> usize {
        self.head.config.classes
    }

    fn vocab(&self) -> &Vocab {
        self.source.vocab()
    }

    fn forward(&self, tokens: &[usize], mode: Mode, rng: &mut Rng) -> (Vec<f64>, StudentCache) {
        let pad = self.source.vocab().pad();
        let tokens = super::strip_padding(tokens, pad);
        let mut padded = tokens.to_vec();
        padded.resize(self.head.padded_len(tokens.len()), pad);

        let mut seen: HashMap<usize, usize> = HashMap::new();
        let mut unique = Vec::new();
        let slots: Vec<usize> = padded
            .iter()
            .map(|&t| {
                *seen.entry(t).or_insert_with(|| {
                    unique.push(t);
                    unique.len() - 1
                })
            })
            .collect();
        let traces: Vec<Vec<Vec<f64>>> =
            unique.iter().map(|&t| self.projection.forward_trace(self.source.row(t))).collect();

        let dim = self.distilled_dim();
        let mut x = Mat::zeros(padded.len(), dim);
        let mut masks = Vec::with_capacity(padded.len());
        for (r, &slot) in slots.iter().enumerate() {
            let projected = traces[slot].last().expect("non-empty stack");
            let mask = maybe_mask(dim, self.projection_dropout, mode, rng);
            let row = x.row_mut(r);
            match &mask {
                Some(m) => row.iter_mut().zip(projected.iter().zip(m)).for_each(|(o, (v, k))| *o = v * k),
                None => row.copy_from_slice(projected),
            }
            masks.push(mask);
        }
        let (logits, head) = self.head.forward(&x, tokens.len(), mode, rng);
        (logits, StudentCache { unique, slots, traces, masks, x, head })
    }

    fn backward(&self, cache: &StudentCache, dlogits: &[f64], grads: &mut Self) {
        let dim = self.distilled_dim();
        let mut dx = Mat::zeros(cache.x.rows(), dim);
        self.head.backward(&cache.x, &cache.head, dlogits, &mut grads.head, &mut dx);
        let mut dproj = vec![vec![0.0; dim]; cache.unique.len()];
        for (r, &slot) in cache.slots.iter().enumerate() {
            match &cache.masks[r] {
                Some(m) => dproj[slot].iter_mut().zip(dx.row(r).iter().zip(m)).for_each(|(d, (g, k))| *d += g * k),
                None => axpy(1.0, dx.row(r), &mut dproj[slot]),
            }
        }
        for (u, &tok) in cache.unique.iter().enumerate() {
            self.projection.backward(self.source.row(tok), &cache.traces[u], &dproj[u], &mut grads.projection);
        }
    }

    fn zeros_like(&self) -> Self {
        StudentModel {
            source: Arc::clone(&self.source),
            projection: self.projection.zeros_like(),
            head: self.head.zeros_like(),
            projection_dropout: self.projection_dropout,
        }
    }

    fn param_count(&self, deployment: bool) -> usize {
        let body = if deployment { 0 } else { self.projection.param_count() };
        self.embedding_param_count(deployment) + body + self.head.param_count()
    }

    fn embedding_param_count(&self, deployment: bool) -> usize {
        let dim = if deployment { self.distilled_dim() } else { self.source.dim() };
        self.source.len() * dim
    }
}
