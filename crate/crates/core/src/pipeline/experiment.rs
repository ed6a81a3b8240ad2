//! Table-style experiments: named cells, each run as a plan of stages for
//! several seeds, summarized as mean and standard deviation.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use super::eval::{evaluate, EvalReport};
use super::manifest::Manifest;
use super::train::{train, TrainConfig, TrainTargets};
use crate::autoencoder::{init_student_from_autoencoder, pretrain_projection, AeConfig, AutoencoderModel};
use crate::data::{write_atomic, Dataset, EmbeddingTable};
use crate::distill::{generate_teacher_logits, LossSpec};
use crate::ensemble::{combine_cached, RoutingConfig, RoutingMode};
use crate::error::{domain, Error, Result};
use crate::models::{CnnClassifier, CnnConfig, LstmClassifier, LstmConfig, ProjectionDepth, StudentModel};
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StudentLoss {
    Lm,
    Nlm,
    Stm,
}

/// One row of a results table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    /// Encoding layer trained on gold labels only, no teacher.
    Enc,
    Cnn400,
    Lstm400,
    /// CNN over the small table, trained on gold labels.
    Cnn50,
    /// Teacher-student embedding distillation from the CNN teacher.
    Tsed {
        loss: StudentLoss,
        pretrain: bool,
        depth: ProjectionDepth,
    },
    /// Student distilled from the routed logits of several CNN teachers.
    Ensemble(RoutingMode),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Enc => f.write_str("ENC"),
            Cell::Cnn400 => f.write_str("CNN-400"),
            Cell::Lstm400 => f.write_str("LSTM-400"),
            Cell::Cnn50 => f.write_str("CNN-50"),
            Cell::Tsed { loss, pretrain, depth } => {
                let l = match loss {
                    StudentLoss::Lm => "LM",
                    StudentLoss::Nlm => "NLM",
                    StudentLoss::Stm => "STM",
                };
                write!(f, "{l}+TSED")?;
                if *pretrain {
                    f.write_str("+PT")?;
                }
                if *depth == ProjectionDepth::Two {
                    f.write_str("+2L")?;
                }
                Ok(())
            }
            Cell::Ensemble(RoutingMode::Agreement) => f.write_str("RAE"),
            Cell::Ensemble(RoutingMode::Disagreement) => f.write_str("RDE"),
        }
    }
}

impl FromStr for Cell {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let upper = s.to_ascii_uppercase();
        let cell = match upper.as_str() {
            "ENC" => Cell::Enc,
            "CNN-400" => Cell::Cnn400,
            "LSTM-400" => Cell::Lstm400,
            "CNN-50" => Cell::Cnn50,
            "RAE" => Cell::Ensemble(RoutingMode::Agreement),
            "RDE" => Cell::Ensemble(RoutingMode::Disagreement),
            _ => {
                let mut parts = upper.split('+');
                let loss = match parts.next() {
                    Some("LM") => StudentLoss::Lm,
                    Some("NLM") => StudentLoss::Nlm,
                    Some("STM") => StudentLoss::Stm,
                    _ => return Err(domain(format!("unknown cell {s:?}"))),
                };
                if parts.next() != Some("TSED") {
                    return Err(domain(format!("unknown cell {s:?}")));
                }
                let (mut pretrain, mut depth) = (false, ProjectionDepth::One);
                for p in parts {
                    match p {
                        "PT" => pretrain = true,
                        "2L" => depth = ProjectionDepth::Two,
                        "1L" => depth = ProjectionDepth::One,
                        _ => return Err(domain(format!("unknown cell modifier {p:?} in {s:?}"))),
                    }
                }
                Cell::Tsed { loss, pretrain, depth }
            }
        };
        Ok(cell)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    TrainTeacher,
    GenLogits,
    PretrainAe,
    TrainStudent,
    Evaluate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::TrainTeacher => "train-teacher",
            Stage::GenLogits => "gen-logits",
            Stage::PretrainAe => "pretrain-ae",
            Stage::TrainStudent => "train-student",
            Stage::Evaluate => "evaluate",
        })
    }
}

impl Cell {
    /// The stages that produce this cell, in dependency order.
    pub fn plan(&self) -> Vec<Stage> {
        use Stage::*;
        match self {
            Cell::Enc | Cell::Cnn50 => vec![TrainStudent, Evaluate],
            Cell::Cnn400 | Cell::Lstm400 => vec![TrainTeacher, Evaluate],
            Cell::Tsed { pretrain: true, .. } => {
                vec![TrainTeacher, GenLogits, PretrainAe, TrainStudent, Evaluate]
            }
            Cell::Tsed { .. } | Cell::Ensemble(_) => {
                vec![TrainTeacher, GenLogits, TrainStudent, Evaluate]
            }
        }
    }

    fn uses_teacher_logits(&self) -> bool {
        matches!(self, Cell::Tsed { .. } | Cell::Ensemble(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub distilled_dim: usize,
    /// Teachers behind the RAE/RDE cells.
    pub ensemble_size: usize,
    pub routing_iterations: usize,
    /// Projection depth of ensemble students.
    pub ensemble_depth: ProjectionDepth,
    /// Teachers trained per seed; the one with the best dev accuracy is kept.
    pub teacher_trials: usize,
    pub nlm: LossSpec,
    pub stm: LossSpec,
    pub autoencoder: AeConfig,
    /// Whether teachers and the small-table baseline update their tables.
    pub fine_tune_embeddings: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train: TrainConfig::default(),
            distilled_dim: 50,
            ensemble_size: 10,
            routing_iterations: RoutingConfig::DEFAULT_ITERATIONS,
            ensemble_depth: ProjectionDepth::One,
            teacher_trials: 1,
            nlm: LossSpec::nlm(),
            stm: LossSpec::stm(),
            autoencoder: AeConfig::default(),
            fine_tune_embeddings: false,
        }
    }
}

impl ExperimentConfig {
    fn describe(&self, m: &mut Manifest) {
        m.set("learning_rate", self.train.optimizer.learning_rate);
        m.set("batch_size", self.train.batch_size);
        m.set("max_epochs", self.train.max_epochs);
        m.set("patience", self.train.patience);
        m.set("distilled_dim", self.distilled_dim);
        m.set("ensemble_size", self.ensemble_size);
        m.set("routing_iterations", self.routing_iterations);
        m.set("ensemble_depth", self.ensemble_depth);
        m.set("teacher_trials", self.teacher_trials);
        m.set("nlm", self.nlm);
        m.set("stm", self.stm);
        m.set("ae_epochs", self.autoencoder.epochs);
        m.set("fine_tune_embeddings", self.fine_tune_embeddings);
    }
}

/// Embedding tables and partitions shared by every cell.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    /// Large table read by teachers and students.
    pub source: Arc<EmbeddingTable>,
    /// Small table for the CNN-50 baseline.
    pub small: Option<Arc<EmbeddingTable>>,
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub cell: String,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    /// `(cell, mean, sample std)` per cell in first-appearance order.
    pub fn summary(&self) -> Vec<(String, f64, f64)> {
        let mut order: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !order.contains(&r.cell.as_str()) {
                order.push(&r.cell);
            }
        }
        order
            .into_iter()
            .map(|cell| {
                let xs: Vec<f64> = self.rows.iter().filter(|r| r.cell == cell).map(|r| r.accuracy).collect();
                let (mean, std) = mean_std(&xs);
                (cell.to_string(), mean, std)
            })
            .collect()
    }

    pub fn results_tsv(&self) -> String {
        let mut s = String::from("cell\tseed\taccuracy\n");
        for r in &self.rows {
            writeln!(s, "{}\t{}\t{:.6}", r.cell, r.seed, r.accuracy).unwrap();
        }
        s
    }

    pub fn summary_tsv(&self) -> String {
        let mut s = String::from("cell\tmean\tstd\n");
        for (cell, mean, std) in self.summary() {
            writeln!(s, "{cell}\t{mean:.6}\t{std:.6}").unwrap();
        }
        s
    }
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trained teachers reused by every cell of the same seed.
#[derive(Debug, Default)]
pub struct TeacherCache {
    cnn: HashMap<(u64, usize), CnnClassifier>,
    lstm: HashMap<u64, LstmClassifier>,
}

#[derive(Debug, Clone)]
pub enum TrainedModel {
    Cnn(CnnClassifier),
    Lstm(LstmClassifier),
    Student(StudentModel),
}

impl TrainedModel {
    pub fn evaluate(&self, data: &Dataset) -> Result<EvalReport> {
        match self {
            TrainedModel::Cnn(m) => evaluate(m, data),
            TrainedModel::Lstm(m) => evaluate(m, data),
            TrainedModel::Student(m) => evaluate(&m.deploy(), data),
        }
    }

    pub fn to_checkpoint(&self) -> crate::data::Checkpoint {
        match self {
            TrainedModel::Cnn(m) => m.to_checkpoint(),
            TrainedModel::Lstm(m) => m.to_checkpoint(),
            TrainedModel::Student(m) => m.to_checkpoint(),
        }
    }
}

#[derive(Default)]
struct Artifacts {
    teachers: Option<Vec<CnnClassifier>>,
    logits: Option<Vec<Vec<f64>>>,
    autoencoder: Option<AutoencoderModel>,
    model: Option<TrainedModel>,
}

fn missing(stage: Stage, needs: Stage, what: &str) -> Error {
    Error::Stage(format!("{stage} needs {what} from {needs}, which has not run"))
}

/// Seed of teacher `index` for a run seeded with `seed`.
pub fn teacher_stream(seed: u64, index: usize) -> SeedStream {
    SeedStream::new(seed).child("teacher").index(index as u64)
}

fn train_cnn_teacher(data: &ExperimentData, config: &ExperimentConfig, stream: SeedStream) -> Result<CnnClassifier> {
    let classes = data.train.num_classes;
    let mut best: Option<(CnnClassifier, f64)> = None;
    for trial in 0..config.teacher_trials.max(1) {
        let s = stream.child("trial").index(trial as u64);
        let mut model =
            CnnClassifier::new((*data.source).clone(), CnnConfig::teacher(classes), &mut s.child("init").rng())?;
        model.train_embeddings = config.fine_tune_embeddings;
        let cfg = TrainConfig { seed: s.child("train").raw(), ..config.train };
        let (model, h) = train(model, TrainTargets::gold(&data.train), &data.dev, &LossSpec::Ce, &cfg)?;
        if best.as_ref().is_none_or(|(_, acc)| h.best_dev_accuracy > *acc) {
            best = Some((model, h.best_dev_accuracy));
        }
    }
    Ok(best.expect("at least one trial").0)
}

/// The CNN teacher for `(seed, index)`, trained on first use.
pub fn cnn_teacher(
    cache: &mut TeacherCache,
    data: &ExperimentData,
    config: &ExperimentConfig,
    seed: u64,
    index: usize,
) -> Result<CnnClassifier> {
    if let Some(t) = cache.cnn.get(&(seed, index)) {
        return Ok(t.clone());
    }
    let t = train_cnn_teacher(data, config, teacher_stream(seed, index))?;
    cache.cnn.insert((seed, index), t.clone());
    Ok(t)
}

/// Runs `plan` for one cell and seed, returning the test-set report and the
/// final model. Stages whose inputs were not produced by an earlier stage
/// of the plan fail with [`Error::Stage`].
pub fn run_plan(
    cell: Cell,
    plan: &[Stage],
    seed: u64,
    data: &ExperimentData,
    config: &ExperimentConfig,
    cache: &mut TeacherCache,
) -> Result<(EvalReport, TrainedModel)> {
    let stream = SeedStream::new(seed).child(&cell.to_string());
    let classes = data.train.num_classes;
    let mut art = Artifacts::default();
    let mut report = None;
    for &stage in plan {
        log::info!("{cell} seed {seed}: {stage}");
        match stage {
            Stage::TrainTeacher => match cell {
                Cell::Lstm400 => {
                    let t = match cache.lstm.get(&seed) {
                        Some(t) => t.clone(),
                        None => {
                            let s = teacher_stream(seed, 0).child("lstm");
                            let mut m = LstmClassifier::new(
                                (*data.source).clone(),
                                LstmConfig::teacher(classes),
                                &mut s.child("init").rng(),
                            )?;
                            m.train_embeddings = config.fine_tune_embeddings;
                            let cfg = TrainConfig { seed: s.child("train").raw(), ..config.train };
                            let (m, _) = train(m, TrainTargets::gold(&data.train), &data.dev, &LossSpec::Ce, &cfg)?;
                            cache.lstm.insert(seed, m.clone());
                            m
                        }
                    };
                    art.model = Some(TrainedModel::Lstm(t));
                }
                _ => {
                    let count = if matches!(cell, Cell::Ensemble(_)) { config.ensemble_size } else { 1 };
                    let teachers =
                        (0..count).map(|i| cnn_teacher(cache, data, config, seed, i)).collect::<Result<Vec<_>>>()?;
                    art.model = Some(TrainedModel::Cnn(teachers[0].clone()));
                    art.teachers = Some(teachers);
                }
            },
            Stage::GenLogits => {
                let teachers =
                    art.teachers.as_ref().ok_or_else(|| missing(stage, Stage::TrainTeacher, "trained teachers"))?;
                let caches =
                    teachers.iter().map(|t| generate_teacher_logits(t, &data.train)).collect::<Result<Vec<_>>>()?;
                let rows = match cell {
                    Cell::Ensemble(mode) => {
                        let routing = RoutingConfig { mode, iterations: config.routing_iterations };
                        combine_cached(&caches, routing)?
                    }
                    _ => caches.into_iter().next().expect("one teacher"),
                };
                art.logits = Some(rows.into_iter().map(|r| r.logits).collect());
            }
            Stage::PretrainAe => {
                let ae_cfg = AeConfig { bottleneck: config.distilled_dim, ..config.autoencoder };
                let (ae, curve) = pretrain_projection(&data.source, &ae_cfg, &mut stream.child("autoencoder").rng())?;
                log::info!("autoencoder reconstruction error {:?}", curve.last());
                art.autoencoder = Some(ae);
            }
            Stage::TrainStudent => {
                let cfg = TrainConfig { seed: stream.child("train").raw(), ..config.train };
                let mut init = stream.child("init").rng();
                let model = match cell {
                    Cell::Cnn50 => {
                        let small = data
                            .small
                            .as_ref()
                            .ok_or_else(|| Error::Stage("CNN-50 needs a small embedding table".into()))?;
                        let mut m = CnnClassifier::new((**small).clone(), CnnConfig::student(classes), &mut init)?;
                        m.train_embeddings = config.fine_tune_embeddings;
                        TrainedModel::Cnn(train(m, TrainTargets::gold(&data.train), &data.dev, &LossSpec::Ce, &cfg)?.0)
                    }
                    Cell::Enc => {
                        let m = StudentModel::new(
                            Arc::clone(&data.source),
                            ProjectionDepth::One,
                            config.distilled_dim,
                            CnnConfig::student(classes),
                            &mut init,
                        )?;
                        TrainedModel::Student(
                            train(m, TrainTargets::gold(&data.train), &data.dev, &LossSpec::Ce, &cfg)?.0,
                        )
                    }
                    Cell::Tsed { .. } | Cell::Ensemble(_) => {
                        let (loss, pretrain, depth) = match cell {
                            Cell::Tsed { loss, pretrain, depth } => {
                                let spec = match loss {
                                    StudentLoss::Lm => LossSpec::Lm,
                                    StudentLoss::Nlm => config.nlm,
                                    StudentLoss::Stm => config.stm,
                                };
                                (spec, pretrain, depth)
                            }
                            _ => (LossSpec::Lm, false, config.ensemble_depth),
                        };
                        let logits =
                            art.logits.as_ref().ok_or_else(|| missing(stage, Stage::GenLogits, "teacher logits"))?;
                        let mut m = StudentModel::new(
                            Arc::clone(&data.source),
                            depth,
                            config.distilled_dim,
                            CnnConfig::student(classes),
                            &mut init,
                        )?;
                        if pretrain {
                            let ae = art
                                .autoencoder
                                .as_ref()
                                .ok_or_else(|| missing(stage, Stage::PretrainAe, "an autoencoder"))?;
                            m = init_student_from_autoencoder(m, ae, &mut init)?;
                        }
                        let targets = TrainTargets::new(&data.train, Some(logits))?;
                        TrainedModel::Student(train(m, targets, &data.dev, &loss, &cfg)?.0)
                    }
                    Cell::Cnn400 | Cell::Lstm400 => {
                        return Err(Error::Stage(format!("{cell} is a teacher cell and has no {stage} stage")));
                    }
                };
                art.model = Some(model);
            }
            Stage::Evaluate => {
                let needs = if matches!(cell, Cell::Cnn400 | Cell::Lstm400) {
                    Stage::TrainTeacher
                } else {
                    Stage::TrainStudent
                };
                let model = art.model.as_ref().ok_or_else(|| missing(stage, needs, "a trained model"))?;
                if needs == Stage::TrainStudent
                    && !matches!(model, TrainedModel::Student(_))
                    && cell.uses_teacher_logits()
                {
                    return Err(missing(stage, needs, "a trained student"));
                }
                report = Some(model.evaluate(&data.test)?);
            }
        }
    }
    let report = report.ok_or_else(|| Error::Stage(format!("plan for {cell} has no evaluate stage")))?;
    Ok((report, art.model.expect("evaluate ran on a model")))
}

/// Runs every cell for every seed and collects test accuracies. With `out`,
/// each run's model checkpoint and manifest are written under
/// `out/<cell>/seed-<seed>/`, and the two TSV tables under `out/`.
pub fn run_experiment(
    cells: &[Cell],
    seeds: &[u64],
    data: &ExperimentData,
    config: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<ResultTable> {
    if cells.is_empty() || seeds.is_empty() {
        return Err(domain("experiment needs at least one cell and one seed"));
    }
    let mut cache = TeacherCache::default();
    let mut table = ResultTable::default();
    for &cell in cells {
        for &seed in seeds {
            let (report, model) = run_plan(cell, &cell.plan(), seed, data, config, &mut cache)?;
            if let Some(out) = out {
                let dir = out.join(cell.to_string()).join(format!("seed-{seed}"));
                let mut m = Manifest::new();
                m.set("cell", cell);
                m.set("seed", seed);
                config.describe(&mut m);
                m.set("status", "running");
                m.save(dir.join("manifest.txt"))?;
                model.to_checkpoint().save(dir.join("model.ckpt"))?;
                write_atomic(&dir.join("report.tsv"), report.to_tsv().as_bytes())?;
                m.set("accuracy", format!("{:.6}", report.accuracy));
                m.set("status", "done");
                m.save(dir.join("manifest.txt"))?;
            }
            table.rows.push(ResultRow { cell: cell.to_string(), seed, accuracy: report.accuracy });
        }
    }
    if let Some(out) = out {
        write_atomic(&out.join("results.tsv"), table.results_tsv().as_bytes())?;
        write_atomic(&out.join("summary.tsv"), table.summary_tsv().as_bytes())?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_names_round_trip() {
        let cells = [
            Cell::Enc,
            Cell::Cnn400,
            Cell::Lstm400,
            Cell::Cnn50,
            Cell::Tsed { loss: StudentLoss::Lm, pretrain: false, depth: ProjectionDepth::One },
            Cell::Tsed { loss: StudentLoss::Nlm, pretrain: false, depth: ProjectionDepth::Two },
            Cell::Tsed { loss: StudentLoss::Stm, pretrain: true, depth: ProjectionDepth::Two },
            Cell::Ensemble(RoutingMode::Agreement),
            Cell::Ensemble(RoutingMode::Disagreement),
        ];
        for c in cells {
            assert_eq!(c.to_string().parse::<Cell>().unwrap(), c);
        }
        assert_eq!("LM+TSED+PT+2L".parse::<Cell>().unwrap().to_string(), "LM+TSED+PT+2L");
        assert!("XYZ".parse::<Cell>().is_err());
        assert!("LM+TSED+Q".parse::<Cell>().is_err());
    }

    #[test]
    fn summary_counts_and_formats() {
        let mut t = ResultTable::default();
        for (seed, acc) in [(1, 0.5), (2, 0.7), (3, 0.6)] {
            t.rows.push(ResultRow { cell: "A".into(), seed, accuracy: acc });
        }
        t.rows.push(ResultRow { cell: "B".into(), seed: 1, accuracy: 0.25 });
        assert_eq!(t.summary_tsv(), "cell\tmean\tstd\nA\t0.600000\t0.100000\nB\t0.250000\t0.000000\n");
        assert_eq!(t.results_tsv().lines().count(), 5);
    }
}
