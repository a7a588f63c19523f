//! Resolving configs and datasets named on the command line.

use std::path::{Path, PathBuf};

use binorm::data::{parse_synthetic, read_dataset, Dataset};
use binorm::models::{Architecture, ModelConfig};
use binorm::train::TrainConfig;
use serde::Deserialize;

use crate::error::{CliError, CliResult};

/// A run file: a model config plus optional training settings. A bare model
/// config is accepted too.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunFile {
    model: ModelConfig,
    #[serde(default)]
    train: Option<TrainConfig>,
}

pub struct RunConfig {
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
}

/// `name` is a JSON file or, failing that, a preset name with an optional
/// `.json` suffix and directory.
pub fn resolve_config(name: &str) -> CliResult<RunConfig> {
    let path = Path::new(name);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(CliError::io(format!("reading {name}")))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{name} is not valid JSON: {e}")))?;
        if value.get("model").is_some() {
            let run: RunFile =
                serde_json::from_value(value).map_err(|e| CliError::Usage(format!("{name}: {e}")))?;
            run.model.validate()?;
            return Ok(RunConfig { model: run.model, train: run.train });
        }
        return Ok(RunConfig { model: ModelConfig::from_json(&text)?, train: None });
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(name);
    match ModelConfig::preset(stem) {
        Ok(model) => Ok(RunConfig { model, train: None }),
        Err(_) => Err(CliError::Usage(format!(
            "no config file '{name}' and no preset named '{stem}' (presets: {})",
            ModelConfig::PRESETS.join(", ")
        ))),
    }
}

pub enum DataSource {
    Synthetic(String),
    File(PathBuf),
}

/// Checks a `--data` argument without generating or reading anything.
pub fn data_source(spec: &str) -> CliResult<DataSource> {
    if spec.starts_with("synthetic:") {
        return Ok(DataSource::Synthetic(spec.to_string()));
    }
    let path = PathBuf::from(spec);
    if !path.is_file() {
        return Err(CliError::Usage(format!("data file '{spec}' does not exist")));
    }
    Ok(DataSource::File(path))
}

pub fn load_data(source: &DataSource, seed: u64) -> CliResult<Dataset> {
    Ok(match source {
        DataSource::Synthetic(spec) => parse_synthetic(spec, seed)?,
        DataSource::File(path) => read_dataset(path)?,
    })
}

/// Rejects data the model cannot consume before any work starts.
pub fn check_compatible(model: &ModelConfig, data: &Dataset) -> CliResult<()> {
    let bad = |msg: String| Err(CliError::Core(binorm::Error::Data(msg)));
    match (&model.arch, data) {
        (Architecture::Bcvnn(c), Dataset::Images(d)) => {
            let shape = d.images.shape();
            let div = c.spatial_divisor();
            if shape[3] != c.input_channels {
                return bad(format!("images have {} channels, model expects {}", shape[3], c.input_channels));
            }
            if shape[1] % div != 0 || shape[2] % div != 0 {
                return bad(format!("image size {}x{} is not a multiple of {div}", shape[1], shape[2]));
            }
            if d.num_classes > c.num_classes {
                return bad(format!("data has {} classes, model outputs {}", d.num_classes, c.num_classes));
            }
        }
        (Architecture::Blm(c), Dataset::Tokens(d)) => {
            if d.vocab_size > c.vocab_size {
                return bad(format!("data vocabulary {} exceeds model vocabulary {}", d.vocab_size, c.vocab_size));
            }
            if d.context_len() > c.max_len {
                return bad(format!("sequences need context {}, model max_len is {}", d.context_len(), c.max_len));
            }
        }
        (_, data) => {
            return bad(format!("a {} model cannot use {} data", model.kind_name(), data.kind_name()));
        }
    }
    Ok(())
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))
}
