use std::sync::Arc;

use super::layers::{apply_mask, maybe_mask, xavier, Activation, Dense, Mode};
use super::{Classifier, Parameters};
use crate::data::{Checkpoint, EmbeddingTable, Vocab};
use crate::error::{domain, Result};
use crate::math::{axpy, Mat};
use crate::rng::{Rng, SeedStream};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmConfig {
    /// Units per direction.
    pub units: usize,
    pub layers: usize,
    pub hidden: usize,
    pub classes: usize,
    pub dropout: f64,
}

impl LstmConfig {
    /// Two bidirectional layers feeding a 50-unit hidden layer, dropout 0.2.
    pub fn teacher(classes: usize) -> Self {
        LstmConfig { units: 50, layers: 2, hidden: 50, classes, dropout: 0.2 }
    }

    fn validate(&self) -> Result<()> {
        if self.units == 0 || self.layers == 0 || self.hidden == 0 || self.classes == 0 {
            return Err(domain("LSTM sizes must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(domain(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Gate weights for one direction of one layer; gate order is input,
/// forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    /// `4·units × inputs`
    pub w: Mat,
    /// `4·units × units`
    pub u: Mat,
    /// `1 × 4·units`
    pub b: Mat,
}

impl LstmCell {
    fn new(inputs: usize, units: usize, rng: &mut Rng) -> Self {
        LstmCell {
            w: xavier(4 * units, inputs, inputs, units, rng),
            u: xavier(4 * units, units, units, units, rng),
            b: Mat::zeros(1, 4 * units),
        }
    }

    fn zeros_like(&self) -> Self {
        LstmCell {
            w: Mat::zeros(self.w.rows(), self.w.cols()),
            u: Mat::zeros(self.u.rows(), self.u.cols()),
            b: Mat::zeros(1, self.b.cols()),
        }
    }

    fn units(&self) -> usize {
        self.u.cols()
    }

    fn param_count(&self) -> usize {
        self.w.len() + self.u.len() + self.b.len()
    }
}

/// Per-step state of one directional pass, stored in processing order.
#[derive(Debug, Clone)]
struct DirTrace {
    order: Vec<usize>,
    gates: Vec<Vec<f64>>,
    c_prev: Vec<Vec<f64>>,
    tanh_c: Vec<Vec<f64>>,
    h_prev: Vec<Vec<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Runs one direction over `xs` and returns the trace plus outputs indexed by time.
fn run_direction(cell: &LstmCell, xs: &Mat, reverse: bool) -> (DirTrace, Mat) {
    let n = xs.rows();
    let h_units = cell.units();
    let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
    let mut trace = DirTrace {
        order: order.clone(),
        gates: Vec::with_capacity(n),
        c_prev: Vec::with_capacity(n),
        tanh_c: Vec::with_capacity(n),
        h_prev: Vec::with_capacity(n),
    };
    let mut out = Mat::zeros(n, h_units);
    let mut h = vec![0.0; h_units];
    let mut c = vec![0.0; h_units];
    for &t in &order {
        let mut z = cell.w.affine(xs.row(t), cell.b.as_slice());
        let uz = cell.u.matvec(&h);
        axpy(1.0, &uz, &mut z);
        for k in 0..h_units {
            z[k] = sigmoid(z[k]);
            z[h_units + k] = sigmoid(z[h_units + k]);
            z[2 * h_units + k] = z[2 * h_units + k].tanh();
            z[3 * h_units + k] = sigmoid(z[3 * h_units + k]);
        }
        let mut c_new = vec![0.0; h_units];
        let mut tc = vec![0.0; h_units];
        let mut h_new = vec![0.0; h_units];
        for k in 0..h_units {
            c_new[k] = z[h_units + k] * c[k] + z[k] * z[2 * h_units + k];
            tc[k] = c_new[k].tanh();
            h_new[k] = z[3 * h_units + k] * tc[k];
        }
        out.row_mut(t).copy_from_slice(&h_new);
        trace.gates.push(z);
        trace.c_prev.push(std::mem::replace(&mut c, c_new));
        trace.tanh_c.push(tc);
        trace.h_prev.push(std::mem::replace(&mut h, h_new));
    }
    (trace, out)
}

/// Backpropagation through time for one direction. `dh_out` holds the
/// gradient reaching each time step's output; input gradients go into `dx`.
fn backprop_direction(cell: &LstmCell, xs: &Mat, trace: &DirTrace, dh_out: &Mat, grads: &mut LstmCell, dx: &mut Mat) {
    let h_units = cell.units();
    let mut dh_next = vec![0.0; h_units];
    let mut dc_next = vec![0.0; h_units];
    let mut dz = vec![0.0; 4 * h_units];
    for s in (0..trace.order.len()).rev() {
        let t = trace.order[s];
        let g = &trace.gates[s];
        let tc = &trace.tanh_c[s];
        let c_prev = &trace.c_prev[s];
        for k in 0..h_units {
            let (i, f, cand, o) = (g[k], g[h_units + k], g[2 * h_units + k], g[3 * h_units + k]);
            let dh = dh_out.get(t, k) + dh_next[k];
            let d_o = dh * tc[k];
            let dc = dh * o * (1.0 - tc[k] * tc[k]) + dc_next[k];
            dz[k] = dc * cand * i * (1.0 - i);
            dz[h_units + k] = dc * c_prev[k] * f * (1.0 - f);
            dz[2 * h_units + k] = dc * i * (1.0 - cand * cand);
            dz[3 * h_units + k] = d_o * o * (1.0 - o);
            dc_next[k] = dc * f;
        }
        grads.w.add_outer(&dz, xs.row(t));
        grads.u.add_outer(&dz, &trace.h_prev[s]);
        axpy(1.0, &dz, grads.b.as_mut_slice());
        cell.w.t_matvec_acc(&dz, dx.row_mut(t));
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        cell.u.t_matvec_acc(&dz, &mut dh_next);
    }
}

/// Stacked bidirectional LSTM over word vectors; the last forward state and
/// the last backward state of the top layer feed a dense hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmClassifier {
    pub config: LstmConfig,
    pub embedding: EmbeddingTable,
    /// Per layer: (forward, backward).
    pub layers: Vec<(LstmCell, LstmCell)>,
    pub hidden: Dense,
    pub output: Dense,
    pub train_embeddings: bool,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    tokens: Vec<usize>,
    /// Input to each layer (the embeddings for layer 0).
    inputs: Vec<Mat>,
    traces: Vec<(DirTrace, DirTrace)>,
    /// Dropout masks applied to each layer's output sequence, flattened.
    between_masks: Vec<Option<Vec<f64>>>,
    top_mask: Option<Vec<f64>>,
    top_dropped: Vec<f64>,
    hidden: Vec<f64>,
    hidden_mask: Option<Vec<f64>>,
    hidden_dropped: Vec<f64>,
}

impl LstmClassifier {
    pub fn new(embedding: EmbeddingTable, config: LstmConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::with_capacity(config.layers);
        let mut inputs = embedding.dim();
        for _ in 0..config.layers {
            layers.push((LstmCell::new(inputs, config.units, rng), LstmCell::new(inputs, config.units, rng)));
            inputs = 2 * config.units;
        }
        let hidden = Dense::new(2 * config.units, config.hidden, Activation::Tanh, rng);
        let output = Dense::new(config.hidden, config.classes, Activation::Identity, rng);
        Ok(LstmClassifier { config, embedding, layers, hidden, output, train_embeddings: true })
    }

    fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for l in 0..self.layers.len() {
            for dir in ["fwd", "bwd"] {
                for p in ["w", "u", "b"] {
                    names.push(format!("lstm.{l}.{dir}.{p}"));
                }
            }
        }
        names.extend(["hidden.weight", "hidden.bias", "output.weight", "output.bias"].map(String::from));
        names
    }

    fn cell_params(&self) -> Vec<&Mat> {
        let mut p = Vec::new();
        for (f, b) in &self.layers {
            p.extend([&f.w, &f.u, &f.b, &b.w, &b.u, &b.b]);
        }
        p.extend(self.hidden.params());
        p.extend(self.output.params());
        p
    }

    fn cell_params_mut(&mut self) -> Vec<&mut Mat> {
        let mut p = Vec::new();
        for (f, b) in &mut self.layers {
            p.extend([&mut f.w, &mut f.u, &mut f.b, &mut b.w, &mut b.u, &mut b.b]);
        }
        p.extend(self.hidden.params_mut());
        p.extend(self.output.params_mut());
        p
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new("lstm");
        ckpt.set_meta("vocab_hash", self.embedding.vocab().hash());
        ckpt.set_meta("dim", self.embedding.dim());
        ckpt.set_meta("units", self.config.units);
        ckpt.set_meta("layers", self.config.layers);
        ckpt.set_meta("hidden", self.config.hidden);
        ckpt.set_meta("classes", self.config.classes);
        ckpt.set_meta("dropout", self.config.dropout);
        ckpt.push_tensor("embedding", self.embedding.matrix().clone());
        for (name, t) in self.tensor_names().into_iter().zip(self.cell_params()) {
            ckpt.push_tensor(name, t.clone());
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, table: &EmbeddingTable) -> Result<Self> {
        ckpt.expect_kind("lstm")?;
        ckpt.expect_vocab(table.vocab().hash())?;
        let dim: usize = ckpt.parse_meta("dim")?;
        let config = LstmConfig {
            units: ckpt.parse_meta("units")?,
            layers: ckpt.parse_meta("layers")?,
            hidden: ckpt.parse_meta("hidden")?,
            classes: ckpt.parse_meta("classes")?,
            dropout: ckpt.parse_meta("dropout")?,
        };
        let emb = ckpt.tensor_shaped("embedding", table.len(), dim)?;
        let embedding = EmbeddingTable::new(Arc::clone(table.vocab()), emb)?;
        let mut model = LstmClassifier::new(embedding, config, &mut SeedStream::new(0).rng())?;
        let names = model.tensor_names();
        for (name, slot) in names.into_iter().zip(model.cell_params_mut()) {
            *slot = ckpt.tensor_shaped(&name, slot.rows(), slot.cols())?;
        }
        Ok(model)
    }
}

impl Parameters for LstmClassifier {
    fn params(&self) -> Vec<&Mat> {
        let mut p = Vec::new();
        if self.train_embeddings {
            p.push(self.embedding.matrix());
        }
        p.extend(self.cell_params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Mat> {
        let train = self.train_embeddings;
        let LstmClassifier { embedding, layers, hidden, output, .. } = self;
        let mut p = Vec::new();
        if train {
            p.push(embedding.matrix_mut());
        }
        for (f, b) in layers {
            p.extend([&mut f.w, &mut f.u, &mut f.b, &mut b.w, &mut b.u, &mut b.b]);
        }
        p.extend(hidden.params_mut());
        p.extend(output.params_mut());
        p
    }
}

impl Classifier for LstmClassifier {
    type Cache = LstmCache;

    fn num_classes(&self) -> usize {
        self.config.classes
    }

    fn vocab(&self) -> &Vocab {
        self.embedding.vocab()
    }

    fn forward(&self, tokens: &[usize], mode: Mode, rng: &mut Rng) -> (Vec<f64>, LstmCache) {
        let n = tokens.len();
        let units = self.config.units;
        let mut x = Mat::zeros(n, self.embedding.dim());
        for (r, &t) in tokens.iter().enumerate() {
            x.row_mut(r).copy_from_slice(self.embedding.row(t));
        }
        let mut inputs = vec![x];
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut between_masks = Vec::with_capacity(self.layers.len());
        let mut last = Mat::zeros(0, 0);
        for (li, (fwd, bwd)) in self.layers.iter().enumerate() {
            let input = &inputs[li];
            let (tf, of) = run_direction(fwd, input, false);
            let (tb, ob) = run_direction(bwd, input, true);
            let mut joined = Mat::zeros(n, 2 * units);
            for t in 0..n {
                joined.row_mut(t)[..units].copy_from_slice(of.row(t));
                joined.row_mut(t)[units..].copy_from_slice(ob.row(t));
            }
            traces.push((tf, tb));
            if li + 1 < self.layers.len() {
                let mask = maybe_mask(n * 2 * units, self.config.dropout, mode, rng);
                apply_mask(joined.as_mut_slice(), mask.as_ref());
                between_masks.push(mask);
                inputs.push(joined);
            } else {
                between_masks.push(None);
                last = joined;
            }
        }
        // Forward direction ends at the last token, backward at the first.
        let mut top = last.row(n - 1)[..units].to_vec();
        top.extend_from_slice(&last.row(0)[units..]);
        let top_mask = maybe_mask(top.len(), self.config.dropout, mode, rng);
        let mut top_dropped = top;
        apply_mask(&mut top_dropped, top_mask.as_ref());
        let hidden = self.hidden.forward(&top_dropped);
        let hidden_mask = maybe_mask(hidden.len(), self.config.dropout, mode, rng);
        let mut hidden_dropped = hidden.clone();
        apply_mask(&mut hidden_dropped, hidden_mask.as_ref());
        let logits = self.output.forward(&hidden_dropped);
        let cache = LstmCache {
            tokens: tokens.to_vec(),
            inputs,
            traces,
            between_masks,
            top_mask,
            top_dropped,
            hidden,
            hidden_mask,
            hidden_dropped,
        };
        (logits, cache)
    }

    fn backward(&self, cache: &LstmCache, dlogits: &[f64], grads: &mut Self) {
        let units = self.config.units;
        let n = cache.tokens.len();
        let mut dh_drop = vec![0.0; self.config.hidden];
        self.output.backward(&cache.hidden_dropped, dlogits, dlogits, &mut grads.output, Some(&mut dh_drop));
        apply_mask(&mut dh_drop, cache.hidden_mask.as_ref());
        let mut dtop = vec![0.0; 2 * units];
        self.hidden.backward(&cache.top_dropped, &cache.hidden, &dh_drop, &mut grads.hidden, Some(&mut dtop));
        apply_mask(&mut dtop, cache.top_mask.as_ref());

        // Gradient w.r.t. the top layer's joined output sequence.
        let mut dout = Mat::zeros(n, 2 * units);
        dout.row_mut(n - 1)[..units].copy_from_slice(&dtop[..units]);
        axpy(1.0, &dtop[units..], &mut dout.row_mut(0)[units..]);

        for li in (0..self.layers.len()).rev() {
            let (fwd, bwd) = &self.layers[li];
            let (gf, gb) = &mut grads.layers[li];
            let (tf, tb) = &cache.traces[li];
            let input = &cache.inputs[li];
            let mut dfwd = Mat::zeros(n, units);
            let mut dbwd = Mat::zeros(n, units);
            for t in 0..n {
                dfwd.row_mut(t).copy_from_slice(&dout.row(t)[..units]);
                dbwd.row_mut(t).copy_from_slice(&dout.row(t)[units..]);
            }
            let mut dx = Mat::zeros(n, input.cols());
            backprop_direction(fwd, input, tf, &dfwd, gf, &mut dx);
            backprop_direction(bwd, input, tb, &dbwd, gb, &mut dx);
            if li > 0 {
                apply_mask(dx.as_mut_slice(), cache.between_masks[li - 1].as_ref());
            }
            dout = dx;
        }

        if self.train_embeddings {
            let pad = self.embedding.vocab().pad();
            for (t, &tok) in cache.tokens.iter().enumerate() {
                if tok != pad {
                    axpy(1.0, dout.row(t), grads.embedding.matrix_mut().row_mut(tok));
                }
            }
        }
    }

    fn zeros_like(&self) -> Self {
        let m = Mat::zeros(self.embedding.len(), self.embedding.dim());
        LstmClassifier {
            config: self.config.clone(),
            embedding: EmbeddingTable::new(Arc::clone(self.embedding.vocab()), m).expect("same shape"),
            layers: self.layers.iter().map(|(f, b)| (f.zeros_like(), b.zeros_like())).collect(),
            hidden: self.hidden.zeros_like(),
            output: self.output.zeros_like(),
            train_embeddings: self.train_embeddings,
        }
    }

    fn param_count(&self, _deployment: bool) -> usize {
        let cells: usize = self.layers.iter().map(|(f, b)| f.param_count() + b.param_count()).sum();
        self.embedding_param_count(false) + cells + self.hidden.param_count() + self.output.param_count()
    }

    fn embedding_param_count(&self, _deployment: bool) -> usize {
        self.embedding.len() * self.embedding.dim()
    }
}
