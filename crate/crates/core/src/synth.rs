//! A generated two-class sentiment corpus with planted indicative words.
//!
//! Words are positive, negative, or neutral. Each sentence mixes Zipf-ranked
//! neutral words with indicative words that mostly, but not always, match the
//! sentence label. The large table places indicative words along a shared
//! polarity direction with a strong signal; the small table carries the same
//! polarity more weakly, so the large table holds more task knowledge.

use std::path::Path;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::analysis::SentimentLexicon;
use crate::data::{write_atomic, Dataset, EmbeddingTable, Instance, Partition, Vocab};
use crate::error::{domain, Result};
use crate::math::{norm, Mat};
use crate::rng::{Rng, SeedStream};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Total vocabulary, indicative words included.
    pub vocab: usize,
    /// Indicative words per class.
    pub indicative: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a token is an indicative word.
    pub indicative_rate: f64,
    /// Probability that an indicative word matches the sentence label.
    pub agreement: f64,
    pub zipf_exponent: f64,
    pub source_dim: usize,
    pub small_dim: usize,
    /// Length of the polarity component relative to unit-scale noise.
    pub source_signal: f64,
    pub small_signal: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab: 1000,
            indicative: 100,
            train: 2000,
            dev: 250,
            test: 250,
            min_len: 6,
            max_len: 14,
            indicative_rate: 0.3,
            agreement: 0.9,
            zipf_exponent: 1.0,
            source_dim: 400,
            small_dim: 50,
            source_signal: 0.5,
            small_signal: 0.15,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.indicative == 0 || 2 * self.indicative >= self.vocab {
            return Err(domain("need at least one indicative word per class and some neutral words"));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(domain("sentence lengths must satisfy 1 ≤ min ≤ max"));
        }
        if self.train == 0 || self.dev == 0 || self.test == 0 {
            return Err(domain("every partition needs at least one instance"));
        }
        for (name, p) in [("indicative rate", self.indicative_rate), ("agreement", self.agreement)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(domain(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.source_dim == 0 || self.small_dim == 0 {
            return Err(domain("embedding widths must be positive"));
        }
        Ok(())
    }
}

/// Labels in class-index order.
pub const LABELS: [&str; 2] = ["neg", "pos"];

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub source: Arc<EmbeddingTable>,
    pub small: Arc<EmbeddingTable>,
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
    /// The planted indicative words.
    pub lexicon: SentimentLexicon,
}

fn word_names(config: &SynthConfig) -> (Vec<String>, Vec<String>, Vec<String>) {
    let pos = (0..config.indicative).map(|i| format!("pos{i}")).collect();
    let neg = (0..config.indicative).map(|i| format!("neg{i}")).collect();
    let neutral = (0..config.vocab - 2 * config.indicative).map(|i| format!("w{i}")).collect();
    (pos, neg, neutral)
}

/// Rows: `signal · polarity · u + noise`, noise components `N(0, 1/dim)`.
/// The unknown row is the mean of the word rows and the padding row is zero.
fn table(vocab: &Arc<Vocab>, polarity: &[f64], dim: usize, signal: f64, rng: &mut Rng) -> EmbeddingTable {
    let mut u: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = norm(&u);
    u.iter_mut().for_each(|x| *x /= n);
    let noise = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("positive deviation");
    let words = polarity.len();
    let mut m = Mat::zeros(vocab.len(), dim);
    for (r, &p) in polarity.iter().enumerate() {
        for (x, &ui) in m.row_mut(r).iter_mut().zip(&u) {
            *x = signal * p * ui + noise.sample(rng);
        }
    }
    let mut mean = vec![0.0; dim];
    for r in 0..words {
        crate::math::axpy(1.0 / words as f64, m.row(r), &mut mean);
    }
    m.row_mut(vocab.unk()).copy_from_slice(&mean);
    EmbeddingTable::new(Arc::clone(vocab), m).expect("one row per vocabulary entry")
}

/// Zipf sampler over `n` ranks.
struct Zipf(Vec<f64>);

impl Zipf {
    fn new(n: usize, s: f64) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = (1..=n)
            .map(|k| {
                acc += (k as f64).powf(-s);
                acc
            })
            .collect();
        cdf.iter_mut().for_each(|c| *c /= acc);
        Zipf(cdf)
    }

    fn sample(&self, rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        self.0.partition_point(|&c| c < u).min(self.0.len() - 1)
    }
}

fn sentences(
    config: &SynthConfig,
    vocab: &Vocab,
    ids: &[Vec<usize>; 3],
    count: usize,
    partition: Partition,
    rng: &mut Rng,
) -> Result<Dataset> {
    let [neg, pos, neutral] = ids;
    let zipf_neutral = Zipf::new(neutral.len(), config.zipf_exponent);
    let zipf_indicative = Zipf::new(config.indicative, config.zipf_exponent);
    let instances = (0..count)
        .map(|_| {
            let label = rng.random_range(0..2);
            let len = rng.random_range(config.min_len..=config.max_len);
            let tokens = (0..len)
                .map(|_| {
                    if rng.random_bool(config.indicative_rate) {
                        let same = rng.random_bool(config.agreement);
                        let class = if same { label } else { 1 - label };
                        let list = if class == 1 { pos } else { neg };
                        list[zipf_indicative.sample(rng)]
                    } else {
                        neutral[zipf_neutral.sample(rng)]
                    }
                })
                .collect();
            Instance { tokens, label }
        })
        .collect();
    Dataset::new(instances, 2, partition, vocab)
}

pub fn generate(config: &SynthConfig, seed: u64) -> Result<SynthCorpus> {
    config.validate()?;
    let root = SeedStream::new(seed).child("synth");
    let (pos, neg, neutral) = word_names(config);
    let tokens: Vec<String> = pos.iter().chain(&neg).chain(&neutral).cloned().collect();
    let vocab = Arc::new(Vocab::new(tokens)?);
    let polarity: Vec<f64> = (0..config.vocab)
        .map(|i| {
            if i < config.indicative {
                1.0
            } else if i < 2 * config.indicative {
                -1.0
            } else {
                0.0
            }
        })
        .collect();
    let source = table(&vocab, &polarity, config.source_dim, config.source_signal, &mut root.child("source").rng());
    let small = table(&vocab, &polarity, config.small_dim, config.small_signal, &mut root.child("small").rng());

    let id = |names: &[String]| names.iter().map(|w| vocab.lookup(w)).collect::<Vec<_>>();
    let ids = [id(&neg), id(&pos), id(&neutral)];
    let train = sentences(config, &vocab, &ids, config.train, Partition::Train, &mut root.child("train").rng())?;
    let dev = sentences(config, &vocab, &ids, config.dev, Partition::Dev, &mut root.child("dev").rng())?;
    let test = sentences(config, &vocab, &ids, config.test, Partition::Test, &mut root.child("test").rng())?;
    let lexicon = SentimentLexicon::new(pos, neg, "planted")?;
    Ok(SynthCorpus { source: Arc::new(source), small: Arc::new(small), train, dev, test, lexicon })
}

fn dataset_text(ds: &Dataset, vocab: &Vocab) -> String {
    let mut s = String::new();
    for inst in &ds.instances {
        s.push_str(LABELS[inst.label]);
        s.push('\t');
        let words: Vec<&str> = inst.tokens.iter().map(|&t| vocab.token(t)).collect();
        s.push_str(&words.join(" "));
        s.push('\n');
    }
    s
}

impl SynthCorpus {
    /// Writes `train.tsv`, `dev.tsv`, `test.tsv`, `source.vec`, `small.vec`,
    /// `positive.txt` and `negative.txt` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let vocab = self.source.vocab();
        for (name, ds) in [("train.tsv", &self.train), ("dev.tsv", &self.dev), ("test.tsv", &self.test)] {
            write_atomic(&dir.join(name), dataset_text(ds, vocab).as_bytes())?;
        }
        self.source.save(dir.join("source.vec"))?;
        self.small.save(dir.join("small.vec"))?;
        for (name, set) in [("positive.txt", &self.lexicon.positive), ("negative.txt", &self.lexicon.negative)] {
            let body: String = set.iter().map(|w| format!("{w}\n")).collect();
            write_atomic(&dir.join(name), body.as_bytes())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_dataset, load_embeddings, LabelMap};
    use crate::models::table_hash;

    fn tiny() -> SynthConfig {
        SynthConfig {
            vocab: 60,
            indicative: 10,
            train: 50,
            dev: 10,
            test: 10,
            source_dim: 16,
            small_dim: 4,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn shapes_and_determinism() {
        let c = generate(&tiny(), 3).unwrap();
        assert_eq!(c.source.len(), 62);
        assert_eq!((c.source.dim(), c.small.dim()), (16, 4));
        assert_eq!((c.train.len(), c.dev.len(), c.test.len()), (50, 10, 10));
        assert!(c.train.instances.iter().all(|i| (6..=14).contains(&i.tokens.len())));
        let again = generate(&tiny(), 3).unwrap();
        assert_eq!(c.train, again.train);
        assert_eq!(*c.source, *again.source);
        assert_ne!(generate(&tiny(), 4).unwrap().train, c.train);
    }

    #[test]
    fn files_reload_identically() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate(&tiny(), 1).unwrap();
        c.write_to(dir.path()).unwrap();
        let source = load_embeddings(dir.path().join("source.vec")).unwrap();
        assert_eq!(table_hash(&source), table_hash(&c.source));
        let labels = LabelMap::infer(&[dir.path().join("train.tsv")]).unwrap();
        assert_eq!(labels.labels(), &LABELS.map(String::from));
        let train = load_dataset(dir.path().join("train.tsv"), &labels, source.vocab(), Partition::Train).unwrap();
        assert_eq!(train, c.train);
    }

    #[test]
    fn indicative_words_carry_the_polarity() {
        let c = generate(&SynthConfig { vocab: 200, indicative: 20, ..tiny() }, 2).unwrap();
        let report = crate::analysis::similarity_distributions(&c.source, &c.lexicon).unwrap();
        assert!(report.separation() > 0.1);
    }
}
