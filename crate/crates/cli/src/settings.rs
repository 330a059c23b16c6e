//! Command-line flags, the `[cli]` config section, and how the two merge
//! with a run config file into the effective configuration.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use fet_core::trainer::{MScope, RunConfig};
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Parser)]
#[command(name = "fet", version, about = "Few-shot fine-grained entity typing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML run config. Flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Train the correlation matrix; writes a checkpoint and a run log.
    Train,
    /// Predict labels for `input` (default: the test split).
    Predict,
    /// Generate same-type instances for `input` (default: the train split).
    Generate,
    /// Score `pred` against `gold`.
    Eval,
    /// Draw the few-shot train/dev split from the corpus.
    Sample,
    /// Train once per value of `param`.
    Sweep,
}

/// Every flag here is also a config key; the key is given in brackets.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// [seed]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// [m_scope] mention | type
    #[arg(long, global = true, value_parser = parse_scope)]
    pub m_scope: Option<MScope>,
    /// [regen_every]
    #[arg(long, global = true)]
    pub regen_every: Option<usize>,
    /// [template_preset]
    #[arg(long, global = true)]
    pub template_preset: Option<String>,
    /// [output_dir]
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,

    /// [hyperparams.alpha]
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// [hyperparams.epsilon]
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    /// [hyperparams.lambda]
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// [hyperparams.lambda_new]
    #[arg(long, global = true)]
    pub lambda_new: Option<f64>,
    /// [hyperparams.m]
    #[arg(long, global = true)]
    pub m: Option<usize>,
    /// [hyperparams.epochs]
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// [hyperparams.shots]
    #[arg(long, global = true)]
    pub shots: Option<usize>,
    /// [hyperparams.lr]
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    /// [hyperparams.beam_width]
    #[arg(long, global = true)]
    pub beam_width: Option<usize>,
    /// [hyperparams.batch_size]
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,

    /// [templates.typing_pattern]
    #[arg(long, global = true)]
    pub typing_pattern: Option<String>,
    /// [templates.generation_pattern]
    #[arg(long, global = true)]
    pub generation_pattern: Option<String>,

    /// [data.corpus]
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// [data.train]
    #[arg(long, global = true)]
    pub train: Option<PathBuf>,
    /// [data.dev]
    #[arg(long, global = true)]
    pub dev: Option<PathBuf>,
    /// [data.test]
    #[arg(long, global = true)]
    pub test: Option<PathBuf>,
    /// [data.hierarchy]
    #[arg(long, global = true)]
    pub hierarchy: Option<PathBuf>,

    /// [provider.oracle]
    #[arg(long, global = true)]
    pub oracle: Option<PathBuf>,
    /// [provider.endpoint]
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    /// [provider.max_in_flight]
    #[arg(long, global = true)]
    pub max_in_flight: Option<usize>,
    /// [provider.timeout_secs]
    #[arg(long, global = true)]
    pub timeout_secs: Option<u64>,

    /// [cli.checkpoint] default: <output_dir>/checkpoint.json
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// [cli.input]
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// [cli.output] default: stdout
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// [cli.gold] default: data.test
    #[arg(long, global = true)]
    pub gold: Option<PathBuf>,
    /// [cli.pred]
    #[arg(long, global = true)]
    pub pred: Option<PathBuf>,
    /// [cli.resume] continue from the checkpoint
    #[arg(long, global = true)]
    pub resume: bool,
    /// [cli.param] alpha | epsilon | m
    #[arg(long, global = true)]
    pub param: Option<String>,
    /// [cli.values] comma separated
    #[arg(long, global = true, value_delimiter = ',', num_args = 1..)]
    pub values: Option<Vec<f64>>,
}

fn parse_scope(s: &str) -> Result<MScope, String> {
    s.parse().map_err(|e: fet_core::Error| e.to_string())
}

impl Overrides {
    /// `(dotted config key, value)` for every flag that was given.
    pub fn entries(&self) -> Result<Vec<(&'static str, toml::Value)>, Failure> {
        let mut out = Vec::new();
        macro_rules! put {
            ($($field:ident => $key:literal),* $(,)?) => {$(
                if let Some(v) = &self.$field {
                    let value = toml::Value::try_from(v)
                        .map_err(|e| Failure::usage(format!("--{}: {e}", stringify!($field).replace('_', "-"))))?;
                    out.push(($key, value));
                }
            )*};
        }
        put!(
            seed => "seed",
            m_scope => "m_scope",
            regen_every => "regen_every",
            template_preset => "template_preset",
            output_dir => "output_dir",
            alpha => "hyperparams.alpha",
            epsilon => "hyperparams.epsilon",
            lambda => "hyperparams.lambda",
            lambda_new => "hyperparams.lambda_new",
            m => "hyperparams.m",
            epochs => "hyperparams.epochs",
            shots => "hyperparams.shots",
            lr => "hyperparams.lr",
            beam_width => "hyperparams.beam_width",
            batch_size => "hyperparams.batch_size",
            typing_pattern => "templates.typing_pattern",
            generation_pattern => "templates.generation_pattern",
            corpus => "data.corpus",
            train => "data.train",
            dev => "data.dev",
            test => "data.test",
            hierarchy => "data.hierarchy",
            oracle => "provider.oracle",
            endpoint => "provider.endpoint",
            max_in_flight => "provider.max_in_flight",
            timeout_secs => "provider.timeout_secs",
            checkpoint => "cli.checkpoint",
            input => "cli.input",
            output => "cli.output",
            gold => "cli.gold",
            pred => "cli.pred",
            param => "cli.param",
            values => "cli.values",
        );
        if self.resume {
            out.push(("cli.resume", toml::Value::Boolean(true)));
        }
        Ok(out)
    }
}

/// Keys under `[cli]`: inputs and outputs of individual commands.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliSection {
    pub checkpoint: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub pred: Option<PathBuf>,
    pub resume: bool,
    pub param: Option<String>,
    pub values: Option<Vec<f64>>,
}

impl CliSection {
    fn rebase(&mut self, base: &Path) {
        for p in [&mut self.checkpoint, &mut self.input, &mut self.output, &mut self.gold, &mut self.pred]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    #[serde(flatten)]
    pub run: RunConfig,
    pub cli: CliSection,
}

impl Settings {
    /// Reads the config file (if any), resolves its relative paths against
    /// its directory, then applies the flags. Flag paths stay relative to
    /// the working directory.
    pub fn resolve(config: Option<&Path>, overrides: &Overrides) -> Result<Self, Failure> {
        let mut table = match config {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?
            }
            None => toml::Table::new(),
        };
        let mut settings = Self::from_table(&mut table)?;
        if let Some(base) = config.and_then(Path::parent) {
            settings.run.rebase(base);
            settings.cli.rebase(base);
        }
        let mut table = settings.to_table()?;
        for (key, value) in overrides.entries()? {
            set(&mut table, key, value);
        }
        Self::from_table(&mut table)
    }

    fn from_table(table: &mut toml::Table) -> Result<Self, Failure> {
        let cli = match table.remove("cli") {
            Some(v) => v.try_into::<CliSection>().map_err(|e| Failure::usage(format!("[cli]: {e}")))?,
            None => CliSection::default(),
        };
        let run = table.clone().try_into::<RunConfig>().map_err(|e| Failure::usage(e.to_string()))?;
        Ok(Self { run, cli })
    }

    fn to_table(&self) -> Result<toml::Table, Failure> {
        toml::Table::try_from(self).map_err(|e| Failure::usage(e.to_string()))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("settings serialize")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.cli.checkpoint.clone().unwrap_or_else(|| self.run.output_dir.join("checkpoint.json"))
    }
}

fn set(table: &mut toml::Table, dotted: &str, value: toml::Value) {
    let mut parts: Vec<&str> = dotted.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut t = table;
    for p in parts {
        t = t
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .expect("config sections are tables");
    }
    t.insert(last.to_string(), value);
}
