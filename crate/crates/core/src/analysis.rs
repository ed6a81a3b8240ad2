//! Sentiment-pair similarity distributions and parameter-reduction accounting.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::data::{EmbeddingTable, Vocab};
use crate::error::{Error, Result};
use crate::math::cosine_similarity;

/// Histogram bins over `[-1, 1]`.
pub const BINS: usize = 40;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentimentLexicon {
    pub positive: BTreeSet<String>,
    pub negative: BTreeSet<String>,
    /// Where the word lists came from.
    pub provenance: String,
}

impl SentimentLexicon {
    pub fn new<I, J, S, T>(positive: I, negative: J, provenance: impl Into<String>) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        J: IntoIterator<Item = T>,
        S: Into<String>,
        T: Into<String>,
    {
        let positive: BTreeSet<String> = positive.into_iter().map(Into::into).collect();
        let negative: BTreeSet<String> = negative.into_iter().map(Into::into).collect();
        if let Some(w) = positive.intersection(&negative).next() {
            return Err(Error::Analysis(format!("{w:?} is listed as both positive and negative")));
        }
        Ok(SentimentLexicon { positive, negative, provenance: provenance.into() })
    }

    /// Reads two files with one token per line; blank lines are skipped and
    /// tokens are lowercased to match dataset tokenization.
    pub fn load(positive: impl AsRef<Path>, negative: impl AsRef<Path>) -> Result<Self> {
        let read = |p: &Path| -> Result<Vec<String>> {
            Ok(std::fs::read_to_string(p)?.lines().map(|l| l.trim().to_lowercase()).filter(|l| !l.is_empty()).collect())
        };
        let (p, n) = (positive.as_ref(), negative.as_ref());
        SentimentLexicon::new(read(p)?, read(n)?, format!("{} + {}", p.display(), n.display()))
    }

    pub fn len(&self) -> usize {
        self.positive.len() + self.negative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Restricts a lexicon to words present in `vocab`.
pub fn intersect_lexicon(lexicon: &SentimentLexicon, vocab: &Vocab) -> Result<SentimentLexicon> {
    let keep = |set: &BTreeSet<String>| set.iter().filter(|w| vocab.get(w).is_some()).cloned().collect::<BTreeSet<_>>();
    let (positive, negative) = (keep(&lexicon.positive), keep(&lexicon.negative));
    if positive.is_empty() && negative.is_empty() {
        return Err(Error::Analysis("no lexicon word occurs in the vocabulary".into()));
    }
    Ok(SentimentLexicon { positive, negative, provenance: format!("{} ∩ vocabulary", lexicon.provenance) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityStats {
    /// `BINS + 1` edges from -1 to 1.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub pairs: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl SimilarityStats {
    pub fn from_values(values: &[f64]) -> Self {
        let edges: Vec<f64> = (0..=BINS).map(|i| -1.0 + 2.0 * i as f64 / BINS as f64).collect();
        let mut counts = vec![0; BINS];
        for &v in values {
            let b = (((v + 1.0) / 2.0 * BINS as f64).floor() as usize).min(BINS - 1);
            counts[b] += 1;
        }
        let n = values.len() as f64;
        let (mean, std) = if values.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let mean = values.iter().sum::<f64>() / n;
            (mean, (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt())
        };
        SimilarityStats { edges, counts, pairs: values.len(), mean, std }
    }

    pub fn is_empty(&self) -> bool {
        self.pairs == 0
    }

    /// `bin_low\tbin_high\tcount` per bin.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("bin_low\tbin_high\tcount\n");
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(s, "{:.3}\t{:.3}\t{c}", self.edges[i], self.edges[i + 1]).unwrap();
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityReport {
    /// Pairs within the positive set or within the negative set.
    pub same: SimilarityStats,
    /// One positive and one negative word.
    pub opposite: SimilarityStats,
    pub all: SimilarityStats,
    /// Classes with fewer than two words, which contribute no same pairs.
    pub flagged: Vec<String>,
}

impl SimilarityReport {
    /// Mean same-sentiment cosine minus mean opposite-sentiment cosine.
    pub fn separation(&self) -> f64 {
        self.same.mean - self.opposite.mean
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for (name, st) in [("same", &self.same), ("opposite", &self.opposite), ("all", &self.all)] {
            writeln!(s, "{name}\tpairs={}\tmean={:.6}\tstd={:.6}", st.pairs, st.mean, st.std).unwrap();
        }
        writeln!(s, "separation\t{:.6}", self.separation()).unwrap();
        for f in &self.flagged {
            writeln!(s, "flag\t{f}").unwrap();
        }
        s
    }
}

/// Cosine similarity over every unordered pair of distinct lexicon words.
pub fn similarity_distributions(table: &EmbeddingTable, lexicon: &SentimentLexicon) -> Result<SimilarityReport> {
    let mut words: Vec<(&[f64], bool)> = Vec::with_capacity(lexicon.len());
    for (set, positive) in [(&lexicon.positive, true), (&lexicon.negative, false)] {
        for w in set {
            let v = table.vector(w).ok_or_else(|| Error::Analysis(format!("{w:?} is not in the vocabulary")))?;
            words.push((v, positive));
        }
    }
    let (mut same, mut opposite, mut all) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..words.len() {
        for j in i + 1..words.len() {
            let c = cosine_similarity(words[i].0, words[j].0).map_err(|e| Error::Analysis(e.to_string()))?;
            if words[i].1 == words[j].1 {
                same.push(c);
            } else {
                opposite.push(c);
            }
            all.push(c);
        }
    }
    let mut flagged = Vec::new();
    for (name, set) in [("positive", &lexicon.positive), ("negative", &lexicon.negative)] {
        if set.len() < 2 {
            flagged.push(format!("{name} set has {} word(s); no same-sentiment pairs", set.len()));
        }
    }
    Ok(SimilarityReport {
        same: SimilarityStats::from_values(&same),
        opposite: SimilarityStats::from_values(&opposite),
        all: SimilarityStats::from_values(&all),
        flagged,
    })
}

/// Embedding-parameter totals of an ensemble of teachers against one
/// distilled student.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionReport {
    /// Per-teacher embedding parameters.
    pub teacher_params: Vec<usize>,
    /// Student embedding parameters while training (the source table it reads).
    pub student_train_params: usize,
    /// Student embedding parameters once deployed (the distilled table).
    pub deployed_params: usize,
}

impl ReductionReport {
    /// Training cost of a plain ensemble: all teachers.
    pub fn ensemble_train_total(&self) -> usize {
        self.teacher_params.iter().sum()
    }

    /// Training cost of distillation: all teachers plus the student.
    pub fn distill_train_total(&self) -> usize {
        self.ensemble_train_total() + self.student_train_params
    }

    /// Distillation training cost over plain-ensemble training cost.
    pub fn train_overhead(&self) -> f64 {
        self.distill_train_total() as f64 / self.ensemble_train_total() as f64
    }

    /// Largest single teacher over the deployed student.
    pub fn single_teacher_ratio(&self) -> f64 {
        *self.teacher_params.iter().max().unwrap_or(&0) as f64 / self.deployed_params as f64
    }

    /// Whole ensemble at deployment over the deployed student.
    pub fn ensemble_deploy_ratio(&self) -> f64 {
        self.ensemble_train_total() as f64 / self.deployed_params as f64
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("quantity\tvalue\n");
        writeln!(s, "teachers\t{}", self.teacher_params.len()).unwrap();
        writeln!(s, "ensemble_train_params\t{}", self.ensemble_train_total()).unwrap();
        writeln!(s, "distill_train_params\t{}", self.distill_train_total()).unwrap();
        writeln!(s, "deployed_params\t{}", self.deployed_params).unwrap();
        writeln!(s, "train_overhead\t{}", self.train_overhead()).unwrap();
        writeln!(s, "single_teacher_ratio\t{}", self.single_teacher_ratio()).unwrap();
        writeln!(s, "ensemble_deploy_ratio\t{}", self.ensemble_deploy_ratio()).unwrap();
        s
    }
}

pub fn reduction_report(
    teacher_params: &[usize],
    student_train_params: usize,
    deployed_params: usize,
) -> Result<ReductionReport> {
    if teacher_params.is_empty() || deployed_params == 0 || teacher_params.contains(&0) {
        return Err(Error::Analysis("reduction needs at least one teacher and non-empty tables".into()));
    }
    Ok(ReductionReport { teacher_params: teacher_params.to_vec(), student_train_params, deployed_params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Mat;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn table(words: &[&str], rows: &[Vec<f64>]) -> EmbeddingTable {
        let vocab = Vocab::new(words.iter().map(|s| s.to_string()).collect()).unwrap();
        let dim = rows[0].len();
        let mut m = Mat::zeros(vocab.len(), dim);
        for (i, r) in rows.iter().enumerate() {
            m.row_mut(i).copy_from_slice(r);
        }
        EmbeddingTable::new(Arc::new(vocab), m).unwrap()
    }

    #[test]
    fn one_word_per_class_gives_one_opposite_pair() {
        let t = table(&["a", "b"], &[vec![1.0, 2.0], vec![3.0, -1.0]]);
        let lex = SentimentLexicon::new(["a"], ["b"], "test").unwrap();
        let r = similarity_distributions(&t, &lex).unwrap();
        assert_eq!((r.same.pairs, r.opposite.pairs, r.all.pairs), (0, 1, 1));
        assert_eq!(r.flagged.len(), 2);
        assert!(r.same.is_empty());
    }

    #[test]
    fn orthogonal_classes_separate_fully() {
        let t = table(
            &["p1", "p2", "p3", "n1", "n2"],
            &[vec![1.0, 0.0], vec![2.0, 0.0], vec![0.5, 0.0], vec![0.0, 1.0], vec![0.0, 3.0]],
        );
        let lex = SentimentLexicon::new(["p1", "p2", "p3"], ["n1", "n2"], "test").unwrap();
        let r = similarity_distributions(&t, &lex).unwrap();
        assert_eq!(r.same.pairs, 4);
        assert_eq!(r.opposite.pairs, 6);
        assert!((r.same.mean - 1.0).abs() < 1e-12);
        assert!(r.opposite.mean.abs() < 1e-12);
        assert_eq!(r.same.counts[BINS - 1], 4);
        assert_eq!(r.opposite.counts[BINS / 2], 6);
        assert_eq!(r.same.to_tsv().lines().count(), BINS + 1);
    }

    #[test]
    fn lexicon_intersection() {
        let vocab = Vocab::new(vec!["good".into(), "bad".into(), "plot".into()]).unwrap();
        let lex = SentimentLexicon::new(["good"], ["bad"], "x").unwrap();
        let inside = intersect_lexicon(&lex, &vocab).unwrap();
        assert_eq!((inside.positive, inside.negative), (lex.positive.clone(), lex.negative.clone()));
        let outside = SentimentLexicon::new(["great"], ["awful"], "x").unwrap();
        assert!(matches!(intersect_lexicon(&outside, &vocab), Err(Error::Analysis(_))));
        assert!(SentimentLexicon::new(["a"], ["a"], "x").is_err());
    }

    #[test]
    fn ensemble_and_single_teacher_ratios() {
        let vocab = 1000;
        let r = reduction_report(&[vocab * 400; 10], vocab * 400, vocab * 50).unwrap();
        assert_eq!(r.single_teacher_ratio(), 8.0);
        assert_eq!(r.ensemble_deploy_ratio(), 80.0);
        assert_eq!(r.train_overhead(), 11.0 / 10.0);
        assert!(reduction_report(&[], 1, 1).is_err());
    }

    proptest! {
        #[test]
        fn pair_counts_match_combinatorics(p in 0usize..7, n in 0usize..7, seed in any::<u64>()) {
            prop_assume!(p + n >= 1);
            let names: Vec<String> = (0..p + n).map(|i| format!("w{i}")).collect();
            let mut rng = crate::rng::SeedStream::new(seed).rng();
            let rows: Vec<Vec<f64>> = (0..p + n).map(|_| {
                use rand::Rng as _;
                vec![rng.random_range(0.1..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
            }).collect();
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            let t = table(&refs, &rows);
            let lex = SentimentLexicon::new(names[..p].to_vec(), names[p..].to_vec(), "x").unwrap();
            let r = similarity_distributions(&t, &lex).unwrap();
            prop_assert_eq!(r.same.pairs, p * p.saturating_sub(1) / 2 + n * n.saturating_sub(1) / 2);
            prop_assert_eq!(r.opposite.pairs, p * n);
            prop_assert_eq!(r.all.counts.iter().sum::<usize>(), r.all.pairs);

            let reversed: Vec<Vec<f64>> = rows.iter().rev().cloned().collect();
            let rev_names: Vec<&str> = refs.iter().rev().copied().collect();
            let r2 = similarity_distributions(&table(&rev_names, &reversed), &lex).unwrap();
            prop_assert_eq!(&r.all.counts, &r2.all.counts);
        }
    }
}
