//! Resolved settings: library defaults, then a `key=value` file, then flags.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use embdistill::autoencoder::AeConfig;
use embdistill::distill::{LossSpec, NoiseGranularity};
use embdistill::ensemble::{RoutingConfig, RoutingMode};
use embdistill::models::ProjectionDepth;
use embdistill::optim::AdamConfig;
use embdistill::pipeline::{ExperimentConfig, TrainConfig};
use embdistill::synth::SynthConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn defaults() -> BTreeMap<String, String> {
    let train = TrainConfig::default();
    let exp = ExperimentConfig::default();
    let ae = AeConfig::default();
    let synth = SynthConfig::default();
    let (sigma, lambda, tau) = (LossSpec::DEFAULT_SIGMA, LossSpec::DEFAULT_LAMBDA, LossSpec::DEFAULT_TAU);
    let entries: Vec<(&str, String)> = vec![
        ("seed", "0".into()),
        ("learning_rate", train.optimizer.learning_rate.to_string()),
        ("batch_size", train.batch_size.to_string()),
        ("max_epochs", train.max_epochs.to_string()),
        ("patience", train.patience.to_string()),
        ("teacher_trials", exp.teacher_trials.to_string()),
        ("fine_tune_embeddings", exp.fine_tune_embeddings.to_string()),
        ("dev_fraction", "0.1".into()),
        ("split_seed", "0".into()),
        ("distilled_dim", exp.distilled_dim.to_string()),
        ("projection", ProjectionDepth::One.to_string()),
        ("loss", "lm".into()),
        ("nlm_sigma", sigma.to_string()),
        ("nlm_noise", "vector".into()),
        ("stm_lambda", lambda.to_string()),
        ("stm_tau", tau.to_string()),
        ("routing_mode", RoutingMode::Agreement.to_string()),
        ("routing_iterations", RoutingConfig::DEFAULT_ITERATIONS.to_string()),
        ("ensemble_size", exp.ensemble_size.to_string()),
        ("ensemble_projection", exp.ensemble_depth.to_string()),
        ("ae_epochs", ae.epochs.to_string()),
        ("ae_batch_size", ae.batch_size.to_string()),
        ("synth_vocab", synth.vocab.to_string()),
        ("synth_indicative", synth.indicative.to_string()),
        ("synth_train", synth.train.to_string()),
        ("synth_dev", synth.dev.to_string()),
        ("synth_test", synth.test.to_string()),
        ("synth_indicative_rate", synth.indicative_rate.to_string()),
        ("synth_agreement", synth.agreement.to_string()),
        ("synth_source_dim", synth.source_dim.to_string()),
        ("synth_small_dim", synth.small_dim.to_string()),
    ];
    entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Parses `key=value` lines; blank lines and lines starting with `#` are skipped.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("config line {}: expected key=value, got {line:?}", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl Settings {
    /// Defaults overlaid by `file` (if any) and then by `overrides`, in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut s = Settings { values: defaults() };
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
            for (k, v) in parse_config(&text)? {
                s.set(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            s.set(k, v)?;
        }
        Ok(s)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(CliError::Config(format!("unknown config key {key:?}"))),
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("{key} has a default"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse().map_err(|e| CliError::Config(format!("{key} = {raw:?}: {e}")))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig, CliError> {
        let cfg = TrainConfig {
            optimizer: AdamConfig::with_learning_rate(self.get("learning_rate")?),
            batch_size: self.get("batch_size")?,
            max_epochs: self.get("max_epochs")?,
            patience: self.get("patience")?,
            seed,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn loss(&self) -> Result<LossSpec, CliError> {
        let spec = match self.raw("loss").to_ascii_lowercase().as_str() {
            "lm" => LossSpec::Lm,
            "nlm" => {
                let noise = match self.raw("nlm_noise") {
                    "vector" => NoiseGranularity::PerVector,
                    "component" => NoiseGranularity::PerComponent,
                    other => {
                        return Err(CliError::Config(format!("nlm_noise must be vector or component, got {other:?}")))
                    }
                };
                LossSpec::Nlm { sigma: self.get("nlm_sigma")?, noise }
            }
            "stm" => LossSpec::Stm { lambda: self.get("stm_lambda")?, tau: self.get("stm_tau")? },
            other => return Err(CliError::Config(format!("loss must be lm, nlm or stm, got {other:?}"))),
        };
        spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn autoencoder(&self) -> Result<AeConfig, CliError> {
        Ok(AeConfig {
            bottleneck: self.get("distilled_dim")?,
            epochs: self.get("ae_epochs")?,
            batch_size: self.get("ae_batch_size")?,
            optimizer: AdamConfig::with_learning_rate(self.get("learning_rate")?),
            ..AeConfig::default()
        })
    }

    pub fn experiment(&self, seed: u64) -> Result<ExperimentConfig, CliError> {
        let nlm = Settings { values: self.values.clone() }.with("loss", "nlm").loss()?;
        let stm = Settings { values: self.values.clone() }.with("loss", "stm").loss()?;
        Ok(ExperimentConfig {
            train: self.train_config(seed)?,
            distilled_dim: self.get("distilled_dim")?,
            ensemble_size: self.get("ensemble_size")?,
            routing_iterations: self.get("routing_iterations")?,
            ensemble_depth: self.get("ensemble_projection")?,
            teacher_trials: self.get("teacher_trials")?,
            nlm,
            stm,
            autoencoder: self.autoencoder()?,
            fine_tune_embeddings: self.get("fine_tune_embeddings")?,
        })
    }

    pub fn synth(&self) -> Result<SynthConfig, CliError> {
        let cfg = SynthConfig {
            vocab: self.get("synth_vocab")?,
            indicative: self.get("synth_indicative")?,
            train: self.get("synth_train")?,
            dev: self.get("synth_dev")?,
            test: self.get("synth_test")?,
            indicative_rate: self.get("synth_indicative_rate")?,
            agreement: self.get("synth_agreement")?,
            source_dim: self.get("synth_source_dim")?,
            small_dim: self.get("synth_small_dim")?,
            ..SynthConfig::default()
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    fn with(mut self, key: &str, value: &str) -> Self {
        self.values.insert(key.to_string(), value.to_string());
        self
    }
}
