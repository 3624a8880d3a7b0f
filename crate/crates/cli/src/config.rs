//! Run configuration: a versioned TOML file.
//!
//! ```toml
//! schema = 1
//! mode = "oracle"            # or "data"
//!
//! [data]
//! observed = "observed.csv"  # or: scenario = "spec.toml"
//! future = "future.csv"
//!
//! [[method]]
//! kind = "exact_matching"
//! ```
//!
//! Relative paths resolve against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::failure::Failure;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Data,
    Oracle,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Data => "data",
            Mode::Oracle => "oracle",
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub observed: Option<PathBuf>,
    pub future: Option<PathBuf>,
    /// Scenario spec; the scenario is generated instead of read.
    pub scenario: Option<PathBuf>,
    pub panel: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub kind: String,
    /// Treatments to estimate or audit; all declared treatments by default.
    pub treatments: Option<Vec<u32>>,
    pub partition: Option<PathBuf>,
    /// `rct`, `exact_matching`, `coarsened_matching`, `future_cell_means`,
    /// `arm_means`, or a CSV table.
    pub predictor: Option<String>,
    /// `one`, `inverse_propensity`, `composition`, or a CSV table.
    pub weights: Option<String>,
    /// Doubly robust arm whose nuisance is taken as correct: `means` or `weights`.
    pub arm: Option<String>,
    pub policy: Option<PathBuf>,
    /// Future covariate weights for policy evaluation; the future population by default.
    pub composition: Option<PathBuf>,
    /// APO estimator inside policy evaluation.
    pub estimator: Option<String>,
    pub k0: Option<f64>,
    pub k1: Option<f64>,
    pub eps: Option<f64>,
    pub delta: Option<f64>,
    pub gamma: Option<f64>,
    /// Mean-treatment target of the instrument regression.
    pub target: Option<f64>,
    pub tolerance: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub methods: Vec<String>,
    pub replications: Option<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default, rename = "method")]
    pub methods: Vec<MethodConfig>,
    pub sweep: Option<SweepSection>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, Failure> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start)).unwrap_or(0);
            Failure::Schema(format!("config line {line}: {}", e.message()))
        })?;
        if config.schema != SCHEMA_VERSION {
            let offset = text.find("schema").unwrap_or(0);
            return Err(Failure::Schema(format!(
                "config line {}: unsupported schema {} (expected {SCHEMA_VERSION})",
                line_of(text, offset),
                config.schema
            )));
        }
        config.base_dir = base_dir.to_path_buf();
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Schema(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_is_required_and_versioned() {
        let ok = RunConfig::parse(
            "schema = 1\n[[method]]\nkind = \"rct\"\n",
            Path::new("/tmp"),
        )
        .unwrap();
        assert_eq!(ok.methods.len(), 1);
        assert!(matches!(
            RunConfig::parse("mode = \"data\"\n", Path::new(".")),
            Err(Failure::Schema(_))
        ));
        let Err(Failure::Schema(msg)) = RunConfig::parse("\nschema = 2\n", Path::new(".")) else {
            panic!()
        };
        assert!(msg.contains("line 2"), "{msg}");
        let Err(Failure::Schema(msg)) =
            RunConfig::parse("schema = 1\n\n[[method]]\nknd = 1\n", Path::new("."))
        else {
            panic!()
        };
        assert!(msg.contains("line 4"), "{msg}");
    }
}
