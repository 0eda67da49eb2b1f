//! JSON configuration documents. Unknown keys are rejected everywhere.

use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thorax_core::classify::ClassifierConfig;
use thorax_core::hemithorax::SnakeMode;
use thorax_core::SnakeParams;

use crate::error::{IoError, IoResult};
use crate::imageio::DEFAULT_MASK_THRESHOLD;

/// Everything a pipeline run can be configured with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub snake: SnakeParams,
    pub mode: SnakeMode,
    pub classifier: ClassifierConfig,
    /// Intensity at or above which a mask pixel is a member.
    pub mask_threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            snake: SnakeParams::default(),
            mode: SnakeMode::OneSnake,
            classifier: ClassifierConfig::default(),
            mask_threshold: DEFAULT_MASK_THRESHOLD,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), thorax_core::Error> {
        self.snake.validate()?;
        self.classifier.validate()
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> IoResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoError::parse(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> IoResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| IoError::io(path, e))
}

/// Snake parameters document with exactly the seven parameter keys.
pub fn load_snake_params(path: &Path) -> IoResult<SnakeParams> {
    let params: SnakeParams = read_json(path)?;
    params.validate().map_err(|e| IoError::core(path.display(), e))?;
    Ok(params)
}

/// Accepts a full pipeline document or a bare snake parameters document.
pub fn load_config(path: &Path) -> IoResult<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let config = match serde_json::from_str::<PipelineConfig>(&text) {
        Ok(c) => c,
        Err(full) => match serde_json::from_str::<SnakeParams>(&text) {
            Ok(snake) => PipelineConfig { snake, ..PipelineConfig::default() },
            Err(_) => return Err(IoError::parse(path, full)),
        },
    };
    config.validate().map_err(|e| IoError::core(path.display(), e))?;
    Ok(config)
}

/// `path` if given, defaults otherwise.
pub fn config_or_default(path: Option<&Path>) -> IoResult<PipelineConfig> {
    path.map_or_else(|| Ok(PipelineConfig::default()), load_config)
}
