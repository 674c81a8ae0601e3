//! Effective run settings: a flat key=value config file merged with command
//! line flags (flags win).
//!
//! File grammar: one `key = value` pair per line, `#` starts a comment,
//! blank lines are ignored. Keys use snake_case or kebab-case. Unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use sagechain_core::error::{Error, Result};
use sagechain_core::layers::sage::{AggregatorKind, NormalizeMode, SageVariant};
use sagechain_core::model::config::{CombineMode, TrainConfig, Variant};
use sagechain_core::DatasetId;

pub const DATA_DIR_ENV: &str = "SAGECHAIN_DATA_DIR";

#[derive(Debug, Clone, Default)]
pub struct Settings {
    pub dataset: Option<DatasetId>,
    pub path: Option<PathBuf>,
    pub task: Option<String>,
    pub variant: Option<Variant>,
    pub epochs: Option<usize>,
    pub window: Option<usize>,
    pub threshold: Option<f64>,
    pub leak_alpha: Option<f64>,
    pub lr_graph: Option<f64>,
    pub lr_seq: Option<f64>,
    pub weight_decay: Option<f64>,
    pub lambda: [Option<f64>; 3],
    pub k_folds: Option<usize>,
    pub seed: Option<u64>,
    pub n_layers: Option<usize>,
    pub aggregator: Option<AggregatorKind>,
    pub sage_variant: Option<SageVariant>,
    pub normalize: Option<NormalizeMode>,
    pub combiner: Option<CombineMode>,
    pub lstm_hidden: Option<usize>,
    pub n_heads: Option<usize>,
    pub grad_clip: Option<f64>,
    pub parallel_folds: Option<usize>,
    pub export_embeddings: Option<bool>,
    pub out: Option<PathBuf>,
    pub layers_list: Option<Vec<usize>>,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse '{value}' for key '{key}'")))
}

pub fn parse_layer_list(value: &str) -> Result<Vec<usize>> {
    let layers: Vec<usize> = value
        .split(',')
        .map(|p| parse::<usize>("layers", p))
        .collect::<Result<_>>()?;
    if layers.is_empty() {
        return Err(Error::Config("layer list is empty".into()));
    }
    Ok(layers)
}

impl Settings {
    /// Apply one key/value pair; unknown keys are an error.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let norm = key.trim().to_lowercase().replace('-', "_");
        match norm.as_str() {
            "dataset" => self.dataset = Some(DatasetId::parse(value)?),
            "path" => self.path = Some(PathBuf::from(value.trim())),
            "task" => self.task = Some(value.trim().to_string()),
            "variant" => self.variant = Some(Variant::parse(value)?),
            "epochs" => self.epochs = Some(parse(key, value)?),
            "window" | "window_size" => self.window = Some(parse(key, value)?),
            "threshold" => self.threshold = Some(parse(key, value)?),
            "leak_alpha" => self.leak_alpha = Some(parse(key, value)?),
            "lr_graph" => self.lr_graph = Some(parse(key, value)?),
            "lr_seq" => self.lr_seq = Some(parse(key, value)?),
            "weight_decay" => self.weight_decay = Some(parse(key, value)?),
            "lambda1" => self.lambda[0] = Some(parse(key, value)?),
            "lambda2" => self.lambda[1] = Some(parse(key, value)?),
            "lambda3" => self.lambda[2] = Some(parse(key, value)?),
            "k_folds" => self.k_folds = Some(parse(key, value)?),
            "seed" => self.seed = Some(parse(key, value)?),
            "n_layers" => self.n_layers = Some(parse(key, value)?),
            "aggregator" => self.aggregator = Some(AggregatorKind::parse(value)?),
            "sage_variant" => self.sage_variant = Some(SageVariant::parse(value)?),
            "normalize" => self.normalize = Some(NormalizeMode::parse(value)?),
            "combiner" => self.combiner = Some(CombineMode::parse(value)?),
            "lstm_hidden" => self.lstm_hidden = Some(parse(key, value)?),
            "n_heads" => self.n_heads = Some(parse(key, value)?),
            "grad_clip" => self.grad_clip = Some(parse(key, value)?),
            "parallel_folds" => self.parallel_folds = Some(parse(key, value)?),
            "export_embeddings" => self.export_embeddings = Some(parse(key, value)?),
            "out" => self.out = Some(PathBuf::from(value.trim())),
            "layers" => self.layers_list = Some(parse_layer_list(value)?),
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parse a flat config file into the settings.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config '{}': {e}", path.display())))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected 'key = value', got '{raw}'",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.apply(key, value)?;
        }
        Ok(())
    }

    pub fn dataset(&self) -> Result<DatasetId> {
        self.dataset
            .ok_or_else(|| Error::Config("missing dataset (use --dataset or a config file)".into()))
    }

    /// Dataset file: the explicit path, else `$SAGECHAIN_DATA_DIR/<id>.csv`.
    pub fn resolve_data_path(&self) -> Result<PathBuf> {
        if let Some(p) = &self.path {
            return Ok(p.clone());
        }
        let id = self.dataset()?;
        let root = std::env::var(DATA_DIR_ENV)
            .map_err(|_| {
                Error::Config(format!(
                    "no --path given and {DATA_DIR_ENV} is not set; cannot locate the {id} csv"
                ))
            })?;
        Ok(PathBuf::from(root).join(format!("{}.csv", id.as_str().replace('-', "_"))))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("sagechain-out"))
    }

    /// Materialize the training configuration; unset knobs keep defaults.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let dataset = self.dataset()?;
        let task = self
            .task
            .clone()
            .ok_or_else(|| Error::Config("missing task (use --task)".into()))?;
        let mut c = TrainConfig::new(dataset, &task);
        if let Some(v) = self.variant {
            c.variant = v;
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.window {
            c.window_size = v;
        }
        if let Some(v) = self.threshold {
            c.threshold = v;
        }
        if let Some(v) = self.leak_alpha {
            c.leak_alpha = v;
        }
        if let Some(v) = self.lr_graph {
            c.lr_graph = v;
        }
        if let Some(v) = self.lr_seq {
            c.lr_seq = v;
        }
        if let Some(v) = self.weight_decay {
            c.weight_decay = v;
        }
        for (i, l) in self.lambda.iter().enumerate() {
            if let Some(v) = l {
                c.loss_weights[i] = *v;
            }
        }
        if let Some(v) = self.k_folds {
            c.k_folds = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.n_layers {
            c.n_layers = v;
        }
        if let Some(v) = self.aggregator {
            c.aggregator = v;
        }
        if let Some(v) = self.sage_variant {
            c.sage_variant = v;
        }
        if let Some(v) = self.normalize {
            c.normalize = v;
        }
        if let Some(v) = self.combiner {
            c.combiner = v;
        }
        if self.lstm_hidden.is_some() {
            c.lstm_hidden = self.lstm_hidden;
        }
        if let Some(v) = self.n_heads {
            c.n_heads = v;
        }
        if self.grad_clip.is_some() {
            c.grad_clip = self.grad_clip;
        }
        if let Some(v) = self.parallel_folds {
            c.parallel_folds = v;
        }
        if let Some(v) = self.export_embeddings {
            c.export_embeddings = v;
        }
        c.validate()?;
        Ok(c)
    }
}
