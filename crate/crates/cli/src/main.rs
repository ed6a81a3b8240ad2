//! `embdistill`: train teachers, distill students, and analyze embeddings.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or
//! artifact error, 3 non-finite training loss.

mod commands;
mod config;
mod error;
mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::{Arch, Ctx, PartitionArg};
use config::Settings;
use error::CliError;

#[derive(Parser)]
#[command(name = "embdistill", version, about = "Teacher-student embedding distillation for text classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Plain-text `key=value` settings file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides one setting; may be repeated. Takes precedence over --config.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_key_value)]
    set: Vec<(String, String)>,
    /// Root seed for every random draw of the command.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; created if missing.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train a CNN or biLSTM teacher on the gold labels.
    TrainTeacher {
        #[arg(long, value_enum)]
        arch: Arch,
        /// Word-vector file in text format.
        #[arg(long, value_name = "FILE")]
        emb: PathBuf,
        /// Directory with train.tsv and optionally dev.tsv.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Cache a teacher's logits on the training set.
    GenLogits {
        #[arg(long, value_name = "CKPT")]
        teacher: PathBuf,
        #[arg(long, value_name = "FILE")]
        emb: PathBuf,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain the projection encoder as an autoencoder over the table.
    PretrainAe {
        #[arg(long, value_name = "FILE")]
        emb: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train a student against one teacher's cached logits.
    DistillStudent {
        #[arg(long, value_name = "FILE")]
        emb: PathBuf,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Logit cache from gen-logits, or a teacher checkpoint.
        #[arg(long, value_name = "FILE")]
        logits: PathBuf,
        #[arg(long, value_parser = ["lm", "nlm", "stm"])]
        loss: Option<String>,
        #[arg(long, value_parser = ["1l", "2l"])]
        projection: Option<String>,
        /// Autoencoder checkpoint that initializes the top projection layer.
        #[arg(long, value_name = "CKPT")]
        pretrained_ae: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a student against the routed logits of several teachers.
    EnsembleDistill {
        #[arg(long, value_name = "FILE")]
        emb: PathBuf,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Comma-separated logit caches or teacher checkpoints.
        #[arg(long, value_name = "LIST", value_delimiter = ',', required = true)]
        teachers: Vec<PathBuf>,
        #[arg(long, value_parser = ["rae", "rde"])]
        mode: Option<String>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long, value_parser = ["1l", "2l"])]
        projection: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Accuracy and per-class counts of a checkpoint on one partition.
    Evaluate {
        #[arg(long, value_name = "CKPT")]
        model: PathBuf,
        /// The table the model was built over: the source table for
        /// students, the distilled table for deployed models.
        #[arg(long, value_name = "FILE")]
        emb: PathBuf,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        partition: PartitionArg,
        #[command(flatten)]
        common: Common,
    },
    /// Write a student's distilled table and its standalone deployed model.
    ExtractEmbeddings {
        #[arg(long, value_name = "CKPT")]
        model: PathBuf,
        /// The student's source table.
        #[arg(long, value_name = "FILE")]
        emb: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Cosine-similarity distributions over a sentiment lexicon.
    Analyze {
        #[arg(long, value_name = "FILE")]
        emb: PathBuf,
        /// One positive word per line.
        #[arg(long, value_name = "FILE")]
        positive: PathBuf,
        /// One negative word per line.
        #[arg(long, value_name = "FILE")]
        negative: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Embedding-parameter reduction of a student against its teachers.
    ReportReduction {
        #[arg(long, value_name = "LIST", value_delimiter = ',', required = true)]
        teachers: Vec<PathBuf>,
        #[arg(long, value_name = "CKPT")]
        student: PathBuf,
        /// Source table shared by the teachers and the student.
        #[arg(long, value_name = "FILE")]
        emb: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic two-class corpus with planted sentiment words.
    SynthCorpus {
        #[command(flatten)]
        common: Common,
    },
    /// Run experiment cells over several seeds and tabulate test accuracy.
    Experiment {
        #[arg(long, value_name = "FILE")]
        emb: PathBuf,
        /// Small table for the CNN-50 cell.
        #[arg(long, value_name = "FILE")]
        small_emb: Option<PathBuf>,
        /// Directory with train.tsv, test.tsv and optionally dev.tsv.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Comma-separated cells, e.g. CNN-400,LM+TSED+PT+2L,RDE.
        #[arg(long, value_name = "LIST", value_delimiter = ',', required = true)]
        cells: Vec<String>,
        #[arg(long, value_name = "LIST", value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        #[command(flatten)]
        common: Common,
    },
}

fn parse_key_value(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))
}

fn context(common: Common, flags: &[(&str, Option<String>)]) -> Result<Ctx, CliError> {
    let mut overrides = common.set;
    if let Some(seed) = common.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    for (key, value) in flags {
        if let Some(v) = value {
            overrides.push((key.to_string(), v.clone()));
        }
    }
    let settings = Settings::resolve(common.config.as_deref(), &overrides)?;
    Ok(Ctx { settings, out: common.out })
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::TrainTeacher { arch, emb, data, common } => {
            commands::train_teacher(&context(common, &[])?, arch, &emb, &data)
        }
        Command::GenLogits { teacher, emb, data, common } => {
            commands::gen_logits(&context(common, &[])?, &teacher, &emb, &data)
        }
        Command::PretrainAe { emb, common } => commands::pretrain_ae(&context(common, &[])?, &emb),
        Command::DistillStudent { emb, data, logits, loss, projection, pretrained_ae, common } => {
            let ctx = context(common, &[("loss", loss), ("projection", projection)])?;
            commands::distill_student(&ctx, &emb, &data, &logits, pretrained_ae.as_deref())
        }
        Command::EnsembleDistill { emb, data, teachers, mode, iterations, projection, common } => {
            let flags = [
                ("routing_mode", mode),
                ("routing_iterations", iterations.map(|n| n.to_string())),
                ("projection", projection),
            ];
            commands::ensemble_distill(&context(common, &flags)?, &emb, &data, &teachers)
        }
        Command::Evaluate { model, emb, data, partition, common } => {
            commands::evaluate(&context(common, &[])?, &model, &emb, &data, partition)
        }
        Command::ExtractEmbeddings { model, emb, common } => {
            commands::extract_embeddings(&context(common, &[])?, &model, &emb)
        }
        Command::Analyze { emb, positive, negative, common } => {
            commands::analyze(&context(common, &[])?, &emb, &positive, &negative)
        }
        Command::ReportReduction { teachers, student, emb, common } => {
            commands::report_reduction(&context(common, &[])?, &teachers, &student, &emb)
        }
        Command::SynthCorpus { common } => commands::synth_corpus(&context(common, &[])?),
        Command::Experiment { emb, small_emb, data, cells, seeds, common } => {
            commands::experiment(&context(common, &[])?, &emb, small_emb.as_deref(), &data, &cells, &seeds)
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { 1 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = dispatch(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
