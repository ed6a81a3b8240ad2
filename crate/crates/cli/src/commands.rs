//! One function per subcommand. Each resolves its settings, opens a run
//! manifest in `--out`, and records every artifact it writes.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use embdistill::analysis::{intersect_lexicon, reduction_report, similarity_distributions, SentimentLexicon};
use embdistill::autoencoder::{init_student_from_autoencoder, pretrain_projection, AutoencoderModel};
use embdistill::data::{
    load_dataset, load_embeddings, logits_for_dataset, logits_from_checkpoint, logits_to_checkpoint, split_train_dev,
    Checkpoint, Dataset, EmbeddingTable, LabelMap, LogitRecord, Partition,
};
use embdistill::distill::{generate_teacher_logits, LossSpec};
use embdistill::ensemble::{combine_cached, RoutingConfig, RoutingMode};
use embdistill::models::{
    AnyModel, Classifier, CnnClassifier, CnnConfig, LstmClassifier, LstmConfig, ProjectionDepth, StudentModel,
};
use embdistill::pipeline::{
    evaluate as evaluate_model, run_experiment, train, Cell, EvalReport, ExperimentData, History, TrainTargets,
};
use embdistill::rng::SeedStream;
use embdistill::synth::generate;
use embdistill::Error;

use crate::config::Settings;
use crate::error::CliError;
use crate::run::Run;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Arch {
    Cnn,
    Lstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PartitionArg {
    Train,
    Dev,
    Test,
}

/// Settings plus the output directory every command shares.
pub struct Ctx {
    pub settings: Settings,
    pub out: PathBuf,
}

impl Ctx {
    fn seed(&self) -> Result<u64> {
        self.settings.get("seed")
    }

    fn begin(&self, command: &str, inputs: &[(&str, &Path)]) -> Result<Run> {
        Run::begin(command, &self.settings, &self.out, inputs)
    }
}

fn labels(data: &Path) -> Result<LabelMap> {
    Ok(LabelMap::infer(&[data.join("train.tsv")])?)
}

/// Files of `data` that [`train_dev`] reads.
fn train_dev_inputs(data: &Path) -> Vec<(&'static str, PathBuf)> {
    let mut v = vec![("train", data.join("train.tsv"))];
    if data.join("dev.tsv").exists() {
        v.push(("dev", data.join("dev.tsv")));
    }
    v
}

/// The train and dev partitions. Without `dev.tsv`, dev is split off the
/// training file with `dev_fraction` and `split_seed`.
fn train_dev(data: &Path, table: &EmbeddingTable, settings: &Settings) -> Result<(Dataset, Dataset)> {
    let labels = labels(data)?;
    let train_set = load_dataset(data.join("train.tsv"), &labels, table.vocab(), Partition::Train)?;
    let dev_path = data.join("dev.tsv");
    if dev_path.exists() {
        let dev = load_dataset(dev_path, &labels, table.vocab(), Partition::Dev)?;
        return Ok((train_set, dev));
    }
    let fraction: f64 = settings.get("dev_fraction")?;
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CliError::Config(format!("dev_fraction must lie in (0, 1), got {fraction}")));
    }
    Ok(split_train_dev(&train_set, fraction, settings.get("split_seed")?)?)
}

fn table(path: &Path) -> Result<Arc<EmbeddingTable>> {
    Ok(Arc::new(load_embeddings(path)?))
}

fn evaluate_any(model: &AnyModel, data: &Dataset) -> Result<EvalReport> {
    Ok(match model {
        AnyModel::Cnn(m) => evaluate_model(m, data)?,
        AnyModel::Lstm(m) => evaluate_model(m, data)?,
        AnyModel::Student(m) => evaluate_model(m, data)?,
    })
}

fn logits_any(model: &AnyModel, data: &Dataset) -> Result<Vec<LogitRecord>> {
    Ok(match model {
        AnyModel::Cnn(m) => generate_teacher_logits(m, data)?,
        AnyModel::Lstm(m) => generate_teacher_logits(m, data)?,
        AnyModel::Student(m) => generate_teacher_logits(m, data)?,
    })
}

fn load_model(path: &Path, table: &Arc<EmbeddingTable>) -> Result<AnyModel> {
    Ok(AnyModel::load(&Checkpoint::load(path)?, table)?)
}

/// Saves the model, its training history, and its dev report.
fn save_trained(run: &mut Run, ckpt: Checkpoint, history: &History, report: &EvalReport) -> Result<()> {
    ckpt.save(run.path("model.ckpt"))?;
    run.record("model.ckpt");
    run.write("history.tsv", &history.to_tsv())?;
    run.write("report.tsv", &report.to_tsv())?;
    run.note("best_epoch", history.best_epoch);
    run.note("dev_accuracy", format!("{:.6}", report.accuracy));
    Ok(())
}

pub fn train_teacher(ctx: &Ctx, arch: Arch, emb: &Path, data: &Path) -> Result<()> {
    let mut inputs = vec![("emb", emb.to_path_buf())];
    inputs.extend(train_dev_inputs(data));
    let refs: Vec<(&str, &Path)> = inputs.iter().map(|(n, p)| (*n, p.as_path())).collect();
    let mut run = ctx.begin("train-teacher", &refs)?;
    let result = (|| {
        let table = table(emb)?;
        let (train_set, dev) = train_dev(data, &table, &ctx.settings)?;
        let classes = train_set.num_classes;
        let stream = SeedStream::new(ctx.seed()?).child("train-teacher");
        let trials: usize = ctx.settings.get("teacher_trials")?;
        let fine_tune: bool = ctx.settings.get("fine_tune_embeddings")?;
        let mut best: Option<(Checkpoint, History, EvalReport)> = None;
        for trial in 0..trials.max(1) {
            let s = stream.child("trial").index(trial as u64);
            let cfg = ctx.settings.train_config(s.child("train").raw())?;
            let mut init = s.child("init").rng();
            let targets = TrainTargets::gold(&train_set);
            let (ckpt, history, report) = match arch {
                Arch::Cnn => {
                    let mut m = CnnClassifier::new((*table).clone(), CnnConfig::teacher(classes), &mut init)?;
                    m.train_embeddings = fine_tune;
                    let (m, h) = train(m, targets, &dev, &LossSpec::Ce, &cfg)?;
                    (m.to_checkpoint(), h, evaluate_model(&m, &dev)?)
                }
                Arch::Lstm => {
                    let mut m = LstmClassifier::new((*table).clone(), LstmConfig::teacher(classes), &mut init)?;
                    m.train_embeddings = fine_tune;
                    let (m, h) = train(m, targets, &dev, &LossSpec::Ce, &cfg)?;
                    (m.to_checkpoint(), h, evaluate_model(&m, &dev)?)
                }
            };
            log::info!("trial {trial}: dev accuracy {:.4}", report.accuracy);
            if best.as_ref().is_none_or(|(_, _, r)| report.accuracy > r.accuracy) {
                best = Some((ckpt, history, report));
            }
        }
        let (ckpt, history, report) = best.expect("at least one trial");
        save_trained(&mut run, ckpt, &history, &report)
    })();
    run.finish(result)
}

pub fn gen_logits(ctx: &Ctx, teacher: &Path, emb: &Path, data: &Path) -> Result<()> {
    let mut inputs = vec![("teacher", teacher.to_path_buf()), ("emb", emb.to_path_buf())];
    inputs.extend(train_dev_inputs(data));
    let refs: Vec<(&str, &Path)> = inputs.iter().map(|(n, p)| (*n, p.as_path())).collect();
    let mut run = ctx.begin("gen-logits", &refs)?;
    let result = (|| {
        let table = table(emb)?;
        let model = load_model(teacher, &table)?;
        let (train_set, _) = train_dev(data, &table, &ctx.settings)?;
        let records = logits_any(&model, &train_set)?;
        logits_to_checkpoint(&records, table.vocab().hash())?.save(run.path("logits.ckpt"))?;
        run.record("logits.ckpt");
        run.note("instances", records.len());
        Ok(())
    })();
    run.finish(result)
}

pub fn pretrain_ae(ctx: &Ctx, emb: &Path) -> Result<()> {
    let mut run = ctx.begin("pretrain-ae", &[("emb", emb)])?;
    let result = (|| {
        let table = table(emb)?;
        let cfg = ctx.settings.autoencoder()?;
        let mut rng = SeedStream::new(ctx.seed()?).child("pretrain-ae").rng();
        let (ae, curve) = pretrain_projection(&table, &cfg, &mut rng)?;
        ae.to_checkpoint(&table).save(run.path("autoencoder.ckpt"))?;
        run.record("autoencoder.ckpt");
        let mut tsv = String::from("epoch\tmse\n");
        for (i, mse) in curve.iter().enumerate() {
            tsv.push_str(&format!("{}\t{mse:.9}\n", i + 1));
        }
        run.write("curve.tsv", &tsv)?;
        if let Some(last) = curve.last() {
            run.note("final_mse", format!("{last:.9}"));
        }
        Ok(())
    })();
    run.finish(result)
}

/// Teacher logits from a cache (`kind: logits`) or by running a model
/// checkpoint over the training set.
fn teacher_logits(path: &Path, table: &Arc<EmbeddingTable>, train_set: &Dataset) -> Result<Vec<Vec<f64>>> {
    let ckpt = Checkpoint::load(path)?;
    let records = if ckpt.kind == "logits" {
        ckpt.expect_vocab(table.vocab().hash())?;
        logits_from_checkpoint(&ckpt)?
    } else {
        logits_any(&AnyModel::load(&ckpt, table)?, train_set)?
    };
    Ok(logits_for_dataset(&records, train_set)?)
}

/// Student training shared by `distill-student` and `ensemble-distill`, so
/// that the two agree exactly for the same targets and seed.
fn fit_student(
    ctx: &Ctx,
    run: &mut Run,
    table: &Arc<EmbeddingTable>,
    sets: (&Dataset, &Dataset),
    targets: &[Vec<f64>],
    loss: LossSpec,
    autoencoder: Option<&Path>,
) -> Result<()> {
    let (train_set, dev) = sets;
    let depth: ProjectionDepth = ctx.settings.get("projection")?;
    let stream = SeedStream::new(ctx.seed()?).child("student");
    let mut init = stream.child("init").rng();
    let classes = train_set.num_classes;
    let dim: usize = ctx.settings.get("distilled_dim")?;
    let mut student = StudentModel::new(Arc::clone(table), depth, dim, CnnConfig::student(classes), &mut init)?;
    if let Some(path) = autoencoder {
        let ckpt = Checkpoint::load(path)?;
        ckpt.expect_vocab(table.vocab().hash())?;
        student = init_student_from_autoencoder(student, &AutoencoderModel::from_checkpoint(&ckpt)?, &mut init)?;
    }
    let cfg = ctx.settings.train_config(stream.child("train").raw())?;
    let (student, history) = train(student, TrainTargets::new(train_set, Some(targets))?, dev, &loss, &cfg)?;
    let report = evaluate_model(&student, dev)?;
    save_trained(run, student.to_checkpoint(), &history, &report)
}

pub fn distill_student(ctx: &Ctx, emb: &Path, data: &Path, logits: &Path, autoencoder: Option<&Path>) -> Result<()> {
    let mut inputs = vec![("emb", emb.to_path_buf()), ("logits", logits.to_path_buf())];
    inputs.extend(train_dev_inputs(data));
    if let Some(ae) = autoencoder {
        inputs.push(("autoencoder", ae.to_path_buf()));
    }
    let refs: Vec<(&str, &Path)> = inputs.iter().map(|(n, p)| (*n, p.as_path())).collect();
    let mut run = ctx.begin("distill-student", &refs)?;
    let result = (|| {
        let table = table(emb)?;
        let (train_set, dev) = train_dev(data, &table, &ctx.settings)?;
        let loss = ctx.settings.loss()?;
        let targets = teacher_logits(logits, &table, &train_set)?;
        fit_student(ctx, &mut run, &table, (&train_set, &dev), &targets, loss, autoencoder)
    })();
    run.finish(result)
}

pub fn ensemble_distill(ctx: &Ctx, emb: &Path, data: &Path, teachers: &[PathBuf]) -> Result<()> {
    let names: Vec<String> = (0..teachers.len()).map(|i| format!("teacher.{i}")).collect();
    let mut refs: Vec<(&str, &Path)> = vec![("emb", emb)];
    let data_inputs = train_dev_inputs(data);
    refs.extend(data_inputs.iter().map(|(n, p)| (*n, p.as_path())));
    refs.extend(names.iter().zip(teachers).map(|(n, p)| (n.as_str(), p.as_path())));
    let mut run = ctx.begin("ensemble-distill", &refs)?;
    let result = (|| {
        if teachers.is_empty() {
            return Err(CliError::Config("--teachers needs at least one path".into()));
        }
        let table = table(emb)?;
        let (train_set, dev) = train_dev(data, &table, &ctx.settings)?;
        let mode: RoutingMode = ctx.settings.get("routing_mode")?;
        let routing = RoutingConfig { mode, iterations: ctx.settings.get("routing_iterations")? };
        let caches = teachers
            .iter()
            .map(|p| {
                let rows = teacher_logits(p, &table, &train_set)?;
                Ok(rows.into_iter().enumerate().map(|(index, logits)| LogitRecord { index, logits }).collect())
            })
            .collect::<Result<Vec<Vec<LogitRecord>>>>()?;
        let targets: Vec<Vec<f64>> = combine_cached(&caches, routing)?.into_iter().map(|r| r.logits).collect();
        fit_student(ctx, &mut run, &table, (&train_set, &dev), &targets, LossSpec::Lm, None)
    })();
    run.finish(result)
}

pub fn evaluate(ctx: &Ctx, model: &Path, emb: &Path, data: &Path, partition: PartitionArg) -> Result<()> {
    let file = match partition {
        PartitionArg::Train => "train.tsv",
        PartitionArg::Dev if !data.join("dev.tsv").exists() => "train.tsv",
        PartitionArg::Dev => "dev.tsv",
        PartitionArg::Test => "test.tsv",
    };
    let split_source = data.join(file);
    let labels_file = data.join("train.tsv");
    let mut refs: Vec<(&str, &Path)> = vec![("model", model), ("emb", emb), ("labels", labels_file.as_path())];
    if split_source.exists() {
        refs.push(("partition", split_source.as_path()));
    }
    let mut run = ctx.begin("evaluate", &refs)?;
    let result = (|| {
        let table = table(emb)?;
        let m = load_model(model, &table)?;
        let dataset = match partition {
            PartitionArg::Train => train_dev(data, &table, &ctx.settings)?.0,
            PartitionArg::Dev => train_dev(data, &table, &ctx.settings)?.1,
            PartitionArg::Test => load_dataset(&split_source, &labels(data)?, table.vocab(), Partition::Test)?,
        };
        if dataset.num_classes != m.num_classes() {
            return Err(Error::Data(format!(
                "model predicts {} classes, data has {}",
                m.num_classes(),
                dataset.num_classes
            ))
            .into());
        }
        let report = evaluate_any(&m, &dataset)?;
        run.write("report.tsv", &report.to_tsv())?;
        run.note("accuracy", format!("{:.6}", report.accuracy));
        println!("{} accuracy {:.6} ({}/{})", report.partition, report.accuracy, report.correct, report.total);
        Ok(())
    })();
    run.finish(result)
}

fn load_student(path: &Path, table: &Arc<EmbeddingTable>) -> Result<StudentModel> {
    match load_model(path, table)? {
        AnyModel::Student(s) => Ok(s),
        _ => Err(Error::Data(format!("{} is not a student checkpoint", path.display())).into()),
    }
}

pub fn extract_embeddings(ctx: &Ctx, model: &Path, emb: &Path) -> Result<()> {
    let mut run = ctx.begin("extract-embeddings", &[("model", model), ("emb", emb)])?;
    let result = (|| {
        let table = table(emb)?;
        let student = load_student(model, &table)?;
        student.extract_distilled_embeddings().save(run.path("distilled.vec"))?;
        run.record("distilled.vec");
        student.deploy().to_checkpoint().save(run.path("deployed.ckpt"))?;
        run.record("deployed.ckpt");
        Ok(())
    })();
    run.finish(result)
}

pub fn analyze(ctx: &Ctx, emb: &Path, positive: &Path, negative: &Path) -> Result<()> {
    let mut run = ctx.begin("analyze", &[("emb", emb), ("positive", positive), ("negative", negative)])?;
    let result = (|| {
        let table = table(emb)?;
        let lexicon = intersect_lexicon(&SentimentLexicon::load(positive, negative)?, table.vocab())?;
        let report = similarity_distributions(&table, &lexicon)?;
        run.write("same.tsv", &report.same.to_tsv())?;
        run.write("opposite.tsv", &report.opposite.to_tsv())?;
        run.write("all.tsv", &report.all.to_tsv())?;
        run.write("summary.tsv", &report.summary())?;
        run.note("separation", format!("{:.6}", report.separation()));
        print!("{}", report.summary());
        Ok(())
    })();
    run.finish(result)
}

pub fn report_reduction(ctx: &Ctx, teachers: &[PathBuf], student: &Path, emb: &Path) -> Result<()> {
    let names: Vec<String> = (0..teachers.len()).map(|i| format!("teacher.{i}")).collect();
    let mut refs: Vec<(&str, &Path)> = vec![("student", student), ("emb", emb)];
    refs.extend(names.iter().zip(teachers).map(|(n, p)| (n.as_str(), p.as_path())));
    let mut run = ctx.begin("report-reduction", &refs)?;
    let result = (|| {
        let table = table(emb)?;
        let teacher_params = teachers
            .iter()
            .map(|p| Ok(load_model(p, &table)?.embedding_param_count(true)))
            .collect::<Result<Vec<_>>>()?;
        let s = load_student(student, &table)?;
        let report = reduction_report(&teacher_params, s.embedding_param_count(false), s.embedding_param_count(true))?;
        run.write("reduction.tsv", &report.to_tsv())?;
        print!("{}", report.to_tsv());
        Ok(())
    })();
    run.finish(result)
}

pub fn synth_corpus(ctx: &Ctx) -> Result<()> {
    let mut run = ctx.begin("synth-corpus", &[])?;
    let result = (|| {
        let corpus = generate(&ctx.settings.synth()?, ctx.seed()?)?;
        corpus.write_to(&ctx.out)?;
        for name in ["train.tsv", "dev.tsv", "test.tsv", "source.vec", "small.vec", "positive.txt", "negative.txt"] {
            run.record(name);
        }
        Ok(())
    })();
    run.finish(result)
}

pub fn experiment(
    ctx: &Ctx,
    emb: &Path,
    small: Option<&Path>,
    data: &Path,
    cells: &[String],
    seeds: &[u64],
) -> Result<()> {
    let mut refs: Vec<(&str, &Path)> = vec![("emb", emb)];
    if let Some(s) = small {
        refs.push(("small_emb", s));
    }
    let data_inputs = train_dev_inputs(data);
    refs.extend(data_inputs.iter().map(|(n, p)| (*n, p.as_path())));
    let test_path = data.join("test.tsv");
    refs.push(("test", test_path.as_path()));
    let mut run = ctx.begin("experiment", &refs)?;
    let result = (|| {
        let cells = cells
            .iter()
            .map(|c| c.parse::<Cell>().map_err(|e| CliError::Config(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let source = table(emb)?;
        let small = small.map(table).transpose()?;
        let (train_set, dev) = train_dev(data, &source, &ctx.settings)?;
        let test = load_dataset(&test_path, &labels(data)?, source.vocab(), Partition::Test)?;
        let data = ExperimentData { source, small, train: train_set, dev, test };
        let table = run_experiment(&cells, seeds, &data, &ctx.settings.experiment(0)?, Some(&ctx.out))?;
        run.record("results.tsv");
        run.record("summary.tsv");
        print!("{}", table.summary_tsv());
        Ok(())
    })();
    run.finish(result)
}
