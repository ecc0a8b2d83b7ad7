use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cluster::KMeansOptions;
use crate::error::{Error, Result};
use crate::imaging::{self, Dataset, Size};
use crate::net::{NetConfig, TransferScope};
use crate::rng::{derive_seed, Key};
use crate::select::Method;
use crate::seg::SegConfig;
use crate::ssl::SslConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Synth,
    Dir,
    Manifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: Source,
    /// Working resolution `(height, width)`; also the network input size.
    pub size: Size,
    pub synth_n: usize,
    pub synth_seed: u64,
    pub images: Option<PathBuf>,
    pub masks: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: Source::Synth,
            size: (64, 64),
            synth_n: 500,
            synth_seed: 7,
            images: None,
            masks: None,
            manifest: None,
        }
    }
}

impl DataConfig {
    pub fn load(&self) -> Result<Dataset> {
        match self.source {
            Source::Synth => imaging::synth_dataset(self.synth_n, self.size, self.synth_seed),
            Source::Dir => {
                let images = self
                    .images
                    .as_deref()
                    .ok_or_else(|| Error::Config("data.images is required for source = \"dir\"".into()))?;
                imaging::load_dir(images, self.masks.as_deref(), self.size)
            }
            Source::Manifest => {
                let manifest = self
                    .manifest
                    .as_deref()
                    .ok_or_else(|| Error::Config("data.manifest is required for source = \"manifest\"".into()))?;
                imaging::load_manifest(manifest, self.size)
            }
        }
    }
}

/// The unlabeled pool and the test set, carved from the id-sorted dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub pool_size: usize,
    pub test_size: usize,
    /// Permute ids with `seeds.global` before cutting; otherwise take them in id order.
    pub shuffle: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            pool_size: 400,
            test_size: 100,
            shuffle: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlConfig {
    pub method: Method,
    pub warm_start: bool,
    /// Initial annotation budget.
    pub budget: usize,
    /// Samples added per query round.
    pub batch: usize,
    /// Number of query rounds after the base round.
    pub iterations: usize,
    pub clusters: usize,
    /// Adaptive pooling grid side.
    pub grid: usize,
    pub kmeans: KMeansOptions,
    /// Re-cluster the remaining pool before every query round.
    pub recluster: bool,
    /// Z-score feature dimensions before clustering.
    pub standardize: bool,
    pub transfer: TransferScope,
}

impl Default for AlConfig {
    fn default() -> Self {
        Self {
            method: Method::Representative,
            warm_start: false,
            budget: 40,
            batch: 10,
            iterations: 4,
            clusters: 5,
            grid: 2,
            kmeans: KMeansOptions::default(),
            recluster: false,
            standardize: false,
            transfer: TransferScope::EncoderDecoder,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub global: u64,
    pub kmeans: u64,
    pub selection: u64,
    pub training: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            global: 0,
            kmeans: 1,
            selection: 2,
            training: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub al: AlConfig,
    pub net: NetConfig,
    pub ssl: SslConfig,
    pub seg: SegConfig,
    pub seeds: Seeds,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "desk".into(),
            out_dir: PathBuf::from("runs/desk"),
            data: DataConfig::default(),
            split: SplitConfig::default(),
            al: AlConfig::default(),
            net: NetConfig::default(),
            ssl: SslConfig::default(),
            seg: SegConfig::default(),
            seeds: Seeds::default(),
        }
    }
}

impl ExperimentConfig {
    /// ISIC-scale protocol: 256x256 inputs, 512x16x16 bottleneck, 1600/400
    /// split, 300 initial labels, 9 rounds of 35, 10 clusters, 2x2 pooling.
    pub fn full_protocol() -> Self {
        let mut cfg = Self {
            name: "full".into(),
            out_dir: PathBuf::from("runs/full"),
            ..Self::default()
        };
        cfg.data.source = Source::Dir;
        cfg.data.size = (256, 256);
        cfg.split = SplitConfig {
            pool_size: 1600,
            test_size: 400,
            shuffle: true,
        };
        cfg.al.budget = 300;
        cfg.al.batch = 35;
        cfg.al.iterations = 9;
        cfg.al.clusters = 10;
        cfg.al.grid = 2;
        cfg.net.base_channels = 64;
        cfg.net.input_size = (256, 256);
        cfg.ssl.deform.shuffle_max_frac = 0.125;
        cfg
    }

    /// Network config for this experiment; the input size always follows `data.size`.
    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            input_size: self.data.size,
            ..self.net.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.net_config().validate()?;
        self.ssl.validate()?;
        self.seg.validate()?;
        let al = &self.al;
        if al.batch < 1 && al.iterations > 0 {
            return Err(Error::Config("al.batch must be >= 1".into()));
        }
        if al.budget < 1 {
            return Err(Error::Config("al.budget must be >= 1".into()));
        }
        if al.clusters < 1 || al.grid < 1 {
            return Err(Error::Config("al.clusters and al.grid must be >= 1".into()));
        }
        let (bh, bw) = self.net_config().bottleneck_size();
        if al.grid > bh || al.grid > bw {
            return Err(Error::Config(format!("al.grid {} exceeds the {bh}x{bw} bottleneck", al.grid)));
        }
        if self.split.pool_size < 1 || self.split.test_size < 1 {
            return Err(Error::Config("split sizes must be >= 1".into()));
        }
        let needed = al.budget + al.iterations * al.batch;
        if needed > self.split.pool_size {
            return Err(Error::Budget(format!(
                "budget {} + {} rounds x {} = {needed} exceeds pool of {}",
                al.budget, al.iterations, al.batch, self.split.pool_size
            )));
        }
        if al.method == Method::Representative && al.clusters > al.budget {
            return Err(Error::Config(format!(
                "al.clusters {} exceeds the initial budget {}",
                al.clusters, al.budget
            )));
        }
        Ok(())
    }

    /// Copy with every seed derived from `seed`, writing under `out_dir/seed_<seed>`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut cfg = self.clone();
        let d = |name: &str| derive_seed(seed, &[Key::Str(name)]);
        cfg.seeds = Seeds {
            global: d("global"),
            kmeans: d("kmeans"),
            selection: d("selection"),
            training: d("training"),
        };
        cfg.ssl.seed = d("ssl");
        cfg.out_dir = self.out_dir.join(format!("seed_{seed}"));
        cfg
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("serializing config: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    /// Read a TOML (or `.json`) config, apply `key.path=value` overrides, validate.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                if p.extension().and_then(|e| e.to_str()) == Some("json") {
                    let json: serde_json::Value = serde_json::from_str(&text)
                        .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                    toml::Value::try_from(json).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                } else {
                    text.parse::<toml::Table>()
                        .map(toml::Value::Table)
                        .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
            }
            None => toml::Value::Table(toml::Table::new()),
        };
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        let cfg: ExperimentConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Set `a.b.c=value` inside a TOML tree. The value is parsed as a TOML
/// literal when possible and kept as a bare string otherwise.
pub fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override {assignment:?} has an empty key")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key}: {part} is not a table")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    node.as_table_mut()
        .ok_or_else(|| Error::Config(format!("override {key}: parent is not a table")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
