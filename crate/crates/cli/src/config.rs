//! JSON configuration file and flag layering.

use std::path::Path;

use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub task: TaskSection,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub c: Option<f64>,
    pub lambda_bar: Option<f64>,
    pub r0: Option<f64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub nodes: Option<usize>,
    pub rule: Option<String>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub n_paths: Option<usize>,
    pub dt: Option<f64>,
    pub seed: Option<u64>,
}

/// Command-specific keys. Each command reads the keys it understands and
/// ignores the rest.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub t: Option<f64>,
    #[serde(rename = "T")]
    pub maturity: Option<f64>,
    pub r_t: Option<f64>,
    pub method: Option<String>,
    pub maturities: Option<Vec<f64>>,
    pub order: Option<usize>,
    pub times: Option<Vec<f64>>,
    pub tuples: Option<Vec<Vec<f64>>>,
    pub modes: Option<Vec<(f64, f64)>>,
    pub samples: Option<usize>,
    pub fast: Option<bool>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input("ConfigError", format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::input("ConfigError", format!("invalid config {}: {e}", path.display())))
    }
}

/// Flag value if given, else the file value, else the default.
pub fn layer<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
