use std::path::{Path, PathBuf};

use salbench::benchmark::fixture::FixtureConfig;
use salbench::fusion::NetConfig;
use salbench::selfcheck::SelfcheckConfig;
use salbench::synthetic::{CorpusConfig, TrainConfig};
use serde::{Deserialize, Serialize};

pub const CONFIG_ECHO: &str = "config_echo.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Eval,
    Stats,
    Infer,
    TrainToy,
    Selfcheck,
    Fixture,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InferInputs {
    /// Weights file; when absent the network is initialised from `seed` and `net`.
    pub weights: Option<PathBuf>,
    pub rgb: Option<PathBuf>,
    pub thermal: Option<PathBuf>,
    /// Output name; defaults to the RGB file stem.
    pub id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsOptions {
    pub bins: usize,
    /// Only the tag co-occurrence; referenced images are neither required nor read.
    pub annotations_only: bool,
}

impl Default for StatsOptions {
    fn default() -> Self {
        StatsOptions {
            bins: 10,
            annotations_only: false,
        }
    }
}

/// Everything a run depends on. Written next to the outputs as `config_echo.json`; running
/// the echo again reproduces the outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: CommandKind,
    pub index_path: Option<PathBuf>,
    pub saliency_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub net: NetConfig,
    pub trainer: TrainConfig,
    pub corpus: CorpusConfig,
    pub infer: InferInputs,
    pub stats: StatsOptions,
    pub selfcheck: SelfcheckConfig,
    pub fixture: FixtureConfig,
    /// Also write saliency maps for the fixture's test split: `perfect` or `noisy`.
    pub fixture_saliency: Option<String>,
}

impl RunConfig {
    pub fn new(command: CommandKind, output_dir: PathBuf) -> Self {
        RunConfig {
            command,
            index_path: None,
            saliency_dir: None,
            output_dir,
            seed: 0,
            net: NetConfig::default(),
            trainer: TrainConfig::default(),
            corpus: CorpusConfig::default(),
            infer: InferInputs::default(),
            stats: StatsOptions::default(),
            selfcheck: SelfcheckConfig::default(),
            fixture: FixtureConfig::default(),
            fixture_saliency: None,
        }
    }

    /// Applies `seed` to every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.trainer.seed = seed;
        self.selfcheck.seed = seed;
        self.fixture.seed = seed;
        self
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        text
    }

    pub fn load(path: &Path) -> Result<Self, salbench::Error> {
        let text = std::fs::read_to_string(path).map_err(|e| salbench::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| salbench::Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Five comma-separated block widths, e.g. `8,16,32,32,32`.
pub fn parse_channels(s: &str) -> Result<[usize; 5], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|v: Vec<usize>| format!("expected 5 block widths, found {}", v.len()))
}
