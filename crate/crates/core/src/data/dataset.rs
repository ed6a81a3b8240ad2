use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;

use super::embeddings::Vocab;
use crate::error::{domain, Error, Result};
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Partition {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partition::Train => "train",
            Partition::Dev => "dev",
            Partition::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub tokens: Vec<usize>,
    pub label: usize,
}

/// Ordered class names; a label's class index is its position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    labels: Vec<String>,
}

impl LabelMap {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        let unique: BTreeSet<&String> = labels.iter().collect();
        if labels.is_empty() || unique.len() != labels.len() {
            return Err(domain("label map must list distinct labels"));
        }
        Ok(LabelMap { labels })
    }

    /// Sorted distinct labels found in the first column of TSV files.
    pub fn infer<P: AsRef<Path>>(paths: &[P]) -> Result<Self> {
        let mut labels = BTreeSet::new();
        for p in paths {
            let reader = BufReader::new(File::open(p.as_ref())?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let (label, _) = line
                    .split_once('\t')
                    .ok_or_else(|| Error::Parse { line: i + 1, msg: "expected \"label<TAB>text\"".into() })?;
                labels.insert(label.trim().to_string());
            }
        }
        LabelMap::new(labels.into_iter().collect())
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Labeled token-id sequences bound to one vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub instances: Vec<Instance>,
    pub num_classes: usize,
    pub partition: Partition,
    pub vocab_hash: String,
}

impl Dataset {
    pub fn new(instances: Vec<Instance>, num_classes: usize, partition: Partition, vocab: &Vocab) -> Result<Self> {
        for (i, inst) in instances.iter().enumerate() {
            if inst.label >= num_classes {
                return Err(Error::Data(format!("instance {i}: label {} ≥ {num_classes} classes", inst.label)));
            }
            if inst.tokens.is_empty() {
                return Err(Error::Data(format!("instance {i}: empty token sequence")));
            }
            if let Some(t) = inst.tokens.iter().find(|&&t| t >= vocab.len()) {
                return Err(Error::Data(format!("instance {i}: token id {t} outside vocabulary")));
            }
        }
        Ok(Dataset { instances, num_classes, partition, vocab_hash: vocab.hash().to_string() })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.instances.iter().map(|i| i.label)
    }
}

/// Lowercases and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Parses `label<TAB>text` lines. Instances with empty text are skipped and
/// reported in the returned warnings.
pub fn read_dataset<R: BufRead>(
    reader: R,
    labels: &LabelMap,
    vocab: &Vocab,
    partition: Partition,
) -> Result<(Dataset, Vec<String>)> {
    let mut instances = Vec::new();
    let mut warnings = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (label, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::Parse { line: lineno, msg: "expected \"label<TAB>text\"".into() })?;
        let label = label.trim();
        let class =
            labels.index(label).ok_or_else(|| Error::Data(format!("line {lineno}: unknown label {label:?}")))?;
        let tokens: Vec<usize> = tokenize(text).iter().map(|t| vocab.lookup(t)).collect();
        if tokens.is_empty() {
            let msg = format!("line {lineno}: empty text, instance skipped");
            log::warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        instances.push(Instance { tokens, label: class });
    }
    Ok((Dataset::new(instances, labels.len(), partition, vocab)?, warnings))
}

pub fn load_dataset(path: impl AsRef<Path>, labels: &LabelMap, vocab: &Vocab, partition: Partition) -> Result<Dataset> {
    let file = File::open(path.as_ref())?;
    Ok(read_dataset(BufReader::new(file), labels, vocab, partition)?.0)
}

/// Seeded shuffle, then the first `max(1, floor(fraction · N))` instances
/// become the dev partition. Both parts keep their original relative order.
pub fn split_train_dev(dataset: &Dataset, dev_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(domain(format!("dev fraction must lie in (0, 1), got {dev_fraction}")));
    }
    let n = dataset.len();
    let n_dev = ((dev_fraction * n as f64).floor() as usize).max(1);
    if n_dev >= n {
        return Err(domain(format!("fraction {dev_fraction} of {n} instances leaves an empty partition")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut SeedStream::new(seed).child("split").rng());
    let mut dev_idx = order[..n_dev].to_vec();
    let mut train_idx = order[n_dev..].to_vec();
    dev_idx.sort_unstable();
    train_idx.sort_unstable();
    let take = |idx: &[usize], partition| Dataset {
        instances: idx.iter().map(|&i| dataset.instances[i].clone()).collect(),
        num_classes: dataset.num_classes,
        partition,
        vocab_hash: dataset.vocab_hash.clone(),
    };
    Ok((take(&train_idx, Partition::Train), take(&dev_idx, Partition::Dev)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn vocab() -> Vocab {
        Vocab::new(vec!["good".into(), "movie".into(), "bad".into()]).unwrap()
    }

    fn labels() -> LabelMap {
        LabelMap::new(vec!["neg".into(), "pos".into()]).unwrap()
    }

    fn numbered(n: usize, v: &Vocab) -> Dataset {
        let inst = (0..n).map(|i| Instance { tokens: vec![i % 3], label: i % 2 }).collect();
        Dataset::new(inst, 2, Partition::Train, v).unwrap()
    }

    #[test]
    fn reads_one_instance() {
        let v = vocab();
        let (d, _) = read_dataset("pos\tGood movie\n".as_bytes(), &labels(), &v, Partition::Train).unwrap();
        assert_eq!(d.instances, vec![Instance { tokens: vec![0, 1], label: 1 }]);
    }

    #[test]
    fn unseen_tokens_map_to_unknown() {
        let v = vocab();
        let (d, _) = read_dataset("neg\tawful movie\n".as_bytes(), &labels(), &v, Partition::Train).unwrap();
        assert_eq!(d.instances[0].tokens, vec![v.unk(), 1]);
    }

    #[test]
    fn empty_texts_are_skipped() {
        let v = vocab();
        let mut text = String::new();
        for i in 0..100 {
            if i % 33 == 5 {
                text.push_str("pos\t   \n");
            } else {
                text.push_str("neg\tbad movie\n");
            }
        }
        let (d, w) = read_dataset(text.as_bytes(), &labels(), &v, Partition::Train).unwrap();
        assert_eq!(d.len(), 97);
        assert_eq!(w.len(), 3);
    }

    #[test]
    fn unknown_label_is_data_error() {
        let v = vocab();
        let err = read_dataset("meh\tgood\n".as_bytes(), &labels(), &v, Partition::Train).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn split_is_deterministic_partition() {
        let v = vocab();
        let d = numbered(100, &v);
        let (t1, d1) = split_train_dev(&d, 0.1, 7).unwrap();
        let (t2, d2) = split_train_dev(&d, 0.1, 7).unwrap();
        assert_eq!((t1.len(), d1.len()), (90, 10));
        assert_eq!((&t1, &d1), (&t2, &d2));
        assert_eq!(d1.partition, Partition::Dev);
    }

    #[test]
    fn extreme_fraction_follows_floor_rule() {
        let v = vocab();
        let d = numbered(100, &v);
        let (t, dv) = split_train_dev(&d, 0.999, 1).unwrap();
        assert_eq!((t.len(), dv.len()), (1, 99));
        assert!(split_train_dev(&numbered(1, &v), 0.5, 1).is_err());
        assert!(split_train_dev(&d, 1.0, 1).is_err());
    }

    #[test]
    fn seeds_change_dev_membership() {
        // Instances carry their position so membership can be compared.
        let v = Vocab::new((0..200).map(|i| format!("t{i}")).collect()).unwrap();
        let inst = (0..200).map(|i| Instance { tokens: vec![i], label: 0 }).collect();
        let d = Dataset::new(inst, 1, Partition::Train, &v).unwrap();
        let members = |seed| -> HashSet<usize> {
            split_train_dev(&d, 0.1, seed).unwrap().1.instances.iter().map(|i| i.tokens[0]).collect()
        };
        assert_ne!(members(1), members(2));
    }
}
