//! Layered settings: built-in defaults, then a TOML config file, then flags.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use tensor_dti::pipeline::{KdUnits, NegStrategy};
use tensor_dti::screening::DEFAULT_K_GRID;
use tensor_dti::{Error, Result};

const TOP_LEVEL: [&str; 11] = [
    "mode",
    "seed",
    "threads",
    "embedding_format",
    "model",
    "train",
    "synth",
    "split",
    "labels",
    "negatives",
    "screen",
];

/// Parsed config file; empty when no file was given.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    root: Map<String, Value>,
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {}", one_line(&e.to_string()))))?;
        let root = match serde_json::to_value(table)? {
            Value::Object(m) => m,
            _ => unreachable!("a TOML document is a table"),
        };
        if let Some(k) = root.keys().find(|k| !TOP_LEVEL.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown config key '{k}'")));
        }
        Ok(Self { root })
    }

    pub fn has(&self, key: &str) -> bool {
        self.root.contains_key(key)
    }

    /// A scalar top-level value.
    pub fn top<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        self.root
            .get(key)
            .map(|v| serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("{key}: {e}"))))
            .transpose()
    }

    /// `default` with the keys of section `name` laid over it.
    pub fn section<T: Serialize + DeserializeOwned>(&self, name: &str, default: T) -> Result<T> {
        let Some(over) = self.root.get(name) else {
            return Ok(default);
        };
        if !over.is_object() {
            return Err(Error::Config(format!("[{name}] must be a table")));
        }
        let mut base = serde_json::to_value(default)?;
        merge(&mut base, over);
        serde_json::from_value(base).map_err(|e| Error::Config(format!("[{name}]: {e}")))
    }
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

/// `[labels]`: optional Kd thresholding of affinities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelConfig {
    pub from_affinity: bool,
    pub kd_threshold_nm: f64,
    pub units: KdUnits,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            from_affinity: false,
            kd_threshold_nm: tensor_dti::pipeline::DEFAULT_KD_THRESHOLD_NM,
            units: KdUnits::Nanomolar,
        }
    }
}

/// `[negatives]`: sampling is enabled by the section's presence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NegativeConfig {
    pub strategy: NegStrategy,
    pub ratio: f64,
    pub threshold: f64,
    /// `pocket_a pocket_b score` table for pocket-dissimilar sampling.
    pub similarity: Option<PathBuf>,
}

impl Default for NegativeConfig {
    fn default() -> Self {
        Self {
            strategy: NegStrategy::RandomPair,
            ratio: 1.0,
            threshold: 0.7,
            similarity: None,
        }
    }
}

/// `[screen]`: ranking, reliability and enrichment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreenConfig {
    pub k_grid: Vec<f64>,
    pub trials: usize,
    pub unf_threshold: f64,
    pub docking_method: Option<String>,
    /// Method name of model scores in screening tables.
    pub method_name: String,
    /// Probability cut for predicted labels and confusion summaries.
    pub threshold: f64,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        Self {
            k_grid: DEFAULT_K_GRID.to_vec(),
            trials: 10_000,
            unf_threshold: 1.0,
            docking_method: None,
            method_name: "tensor-dti".into(),
            threshold: 0.5,
        }
    }
}
