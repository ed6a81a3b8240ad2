use std::fmt::Write as _;

use crate::data::{Dataset, Partition};
use crate::error::{domain, Error, Result};
use crate::models::Classifier;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassCounts {
    /// Instances with this gold label.
    pub total: usize,
    /// Of those, how many were predicted correctly.
    pub correct: usize,
    /// Instances predicted as this class.
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub partition: Partition,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub per_class: Vec<ClassCounts>,
    pub train_params: usize,
    pub deploy_params: usize,
}

impl EvalReport {
    /// `key\tvalue` lines followed by one line per class.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "partition\t{}", self.partition).unwrap();
        writeln!(s, "accuracy\t{:.6}", self.accuracy).unwrap();
        writeln!(s, "correct\t{}", self.correct).unwrap();
        writeln!(s, "total\t{}", self.total).unwrap();
        writeln!(s, "train_params\t{}", self.train_params).unwrap();
        writeln!(s, "deploy_params\t{}", self.deploy_params).unwrap();
        writeln!(s, "class\ttotal\tcorrect\tpredicted").unwrap();
        for (c, k) in self.per_class.iter().enumerate() {
            writeln!(s, "{c}\t{}\t{}\t{}", k.total, k.correct, k.predicted).unwrap();
        }
        s
    }
}

/// Eval-mode predictions for every instance.
pub fn predictions<M: Classifier>(model: &M, dataset: &Dataset) -> Vec<usize> {
    dataset.instances.iter().map(|inst| model.predict(&inst.tokens)).collect()
}

pub(crate) fn accuracy<M: Classifier>(model: &M, dataset: &Dataset) -> f64 {
    let correct = predictions(model, dataset).into_iter().zip(dataset.labels()).filter(|(p, y)| p == y).count();
    correct as f64 / dataset.len() as f64
}

pub fn evaluate<M: Classifier>(model: &M, dataset: &Dataset) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(domain(format!("{} partition is empty", dataset.partition)));
    }
    if dataset.vocab_hash != model.vocab().hash() {
        return Err(Error::Data("dataset is bound to a different vocabulary than the model".into()));
    }
    if dataset.num_classes != model.num_classes() {
        return Err(Error::Data(format!(
            "dataset has {} classes, model has {}",
            dataset.num_classes,
            model.num_classes()
        )));
    }
    let mut per_class = vec![ClassCounts::default(); dataset.num_classes];
    let mut correct = 0;
    for (pred, gold) in predictions(model, dataset).into_iter().zip(dataset.labels()) {
        per_class[gold].total += 1;
        per_class[pred].predicted += 1;
        if pred == gold {
            per_class[gold].correct += 1;
            correct += 1;
        }
    }
    Ok(EvalReport {
        partition: dataset.partition,
        accuracy: correct as f64 / dataset.len() as f64,
        correct,
        total: dataset.len(),
        per_class,
        train_params: model.param_count(false),
        deploy_params: model.param_count(true),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{EmbeddingTable, Instance, Vocab};
    use crate::math::{argmax, Mat};
    use crate::models::{CnnClassifier, CnnConfig, Parameters};
    use crate::rng::SeedStream;
    use std::sync::Arc;

    fn setup() -> (CnnClassifier, Dataset) {
        let vocab = Arc::new(Vocab::new((0..6).map(|i| format!("w{i}")).collect()).unwrap());
        let mut rng = SeedStream::new(2).rng();
        let m = crate::models::xavier(vocab.len(), 4, 4, 4, &mut rng);
        let table = EmbeddingTable::new(Arc::clone(&vocab), m).unwrap();
        let cfg = CnnConfig { widths: vec![1, 2], filters: 3, hidden: 4, classes: 2, hidden_dropout: 0.5 };
        let model = CnnClassifier::new(table, cfg, &mut rng).unwrap();
        let instances =
            (0..40).map(|i| Instance { tokens: vec![i % 6, (i * 7) % 6, (i + 1) % 6], label: i % 2 }).collect();
        (model, Dataset::new(instances, 2, Partition::Test, &vocab).unwrap())
    }

    #[test]
    fn constant_predictor_scores_half_on_balanced_data() {
        let (mut model, ds) = setup();
        model.zero();
        model.head.output.bias = Mat::from_vec(1, 2, vec![0.0, 1.0]).unwrap();
        let r = evaluate(&model, &ds).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.per_class[1].predicted, 40);
    }

    #[test]
    fn accuracy_matches_an_independent_recount() {
        let (model, ds) = setup();
        let r = evaluate(&model, &ds).unwrap();
        let mut hits = 0;
        for inst in &ds.instances {
            let (logits, _) = model.forward(&inst.tokens, crate::models::Mode::Eval, &mut SeedStream::new(99).rng());
            hits += usize::from(argmax(&logits) == inst.label);
        }
        assert_eq!(r.correct, hits);
        assert_eq!(r.accuracy, hits as f64 / 40.0);
        assert_eq!(r.per_class.iter().map(|c| c.total).sum::<usize>(), 40);
    }

    #[test]
    fn memorized_labels_score_one() {
        let (model, ds) = setup();
        let preds = predictions(&model, &ds);
        let relabeled: Vec<Instance> =
            ds.instances.iter().zip(&preds).map(|(i, &p)| Instance { tokens: i.tokens.clone(), label: p }).collect();
        let ds = Dataset::new(relabeled, 2, Partition::Test, model.vocab()).unwrap();
        assert_eq!(evaluate(&model, &ds).unwrap().accuracy, 1.0);
    }

    #[test]
    fn empty_partition_is_a_domain_error() {
        let (model, ds) = setup();
        let empty = Dataset { instances: vec![], ..ds };
        assert!(matches!(evaluate(&model, &empty), Err(Error::Domain(_))));
    }
}
