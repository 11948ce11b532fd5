use std::path::PathBuf;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::data::{
    generate_synthetic, read_cifar_binary, read_ppm_directory, AugmentationSpec, CifarVariant, Dataset, Split, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::nn::{ArchitectureSpec, Variant};
use crate::optim::{Algorithm, HyperParams, Preset};
use crate::rng::InitializerKind;

pub const DEFAULT_SEED: u64 = 1699806;
pub const DEFAULT_BATCH_SIZE: usize = 128;
pub const PRESET_SEEDS: [u64; 12] = [
    0, 100, 500, 1000, 1500, 10000, 15000, 100000, 150000, 1000000, 1500000, 1699806,
];

/// Epoch budget: 100 for default presets, 50 for tuned, 30 for large problems.
pub fn default_epochs(preset: Preset, large: bool) -> usize {
    match (large, preset) {
        (true, _) => 30,
        (false, Preset::Tuned) => 50,
        (false, Preset::Default) => 100,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Cifar10,
    Cifar100,
    Ppm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub source: DataSource,
    pub synthetic: SyntheticSpec,
    /// CIFAR training batch files.
    pub train_files: Vec<PathBuf>,
    /// CIFAR test batch files; when empty the training files are split.
    pub test_files: Vec<PathBuf>,
    /// PPM root with one subdirectory per class.
    pub root: Option<PathBuf>,
    /// Train share of the stratified split for sources without a test set.
    pub train_fraction: f64,
    pub split_seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            synthetic: SyntheticSpec::default(),
            train_files: Vec::new(),
            test_files: Vec::new(),
            root: None,
            train_fraction: 0.8,
            split_seed: DEFAULT_SEED,
        }
    }
}

impl DatasetSpec {
    pub fn tag(&self) -> &'static str {
        match self.source {
            DataSource::Synthetic => "synthetic",
            DataSource::Cifar10 => "cifar10",
            DataSource::Cifar100 => "cifar100",
            DataSource::Ppm => "ppm",
        }
    }

    /// Loads the training and test sets.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        let full = match self.source {
            DataSource::Synthetic => {
                let spec = SyntheticSpec {
                    train_fraction: self.train_fraction,
                    ..self.synthetic.clone()
                };
                generate_synthetic(&spec)?
            }
            DataSource::Cifar10 | DataSource::Cifar100 => {
                let variant = if self.source == DataSource::Cifar10 {
                    CifarVariant::Cifar10
                } else {
                    CifarVariant::Cifar100
                };
                if self.train_files.is_empty() {
                    return Err(Error::invalid("dataset.train_files", "CIFAR sources need at least one file"));
                }
                let train = read_cifar_binary(&self.train_files, variant)?;
                if !self.test_files.is_empty() {
                    let test = read_cifar_binary(&self.test_files, variant)?;
                    return Ok((train.with_split(Split::Train), test.with_split(Split::Test)));
                }
                train
            }
            DataSource::Ppm => {
                let root = self
                    .root
                    .as_ref()
                    .ok_or_else(|| Error::invalid("dataset.root", "PPM sources need a root directory"))?;
                read_ppm_directory(root)?
            }
        };
        full.train_test_split(self.train_fraction, self.split_seed)
    }

    fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid("dataset.train_fraction", "must lie in (0, 1)"));
        }
        if self.source == DataSource::Synthetic {
            self.synthetic
                .validate()
                .map_err(|e| Error::invalid("dataset.synthetic", e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseArchitecture {
    /// Three CDBs (8/16/32), a 64-unit FCB.
    BaselineMini,
    /// Five CDBs (16..256), a 512-unit FCB.
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchitectureConfig {
    pub base: BaseArchitecture,
    pub variant: Variant,
    /// SiLU, mean pooling, no dropout. `None` turns it on for L-BFGS only.
    pub smooth: Option<bool>,
    /// FCB dropout rate.
    pub dropout: f64,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            base: BaseArchitecture::BaselineMini,
            variant: Variant::Baseline,
            smooth: None,
            dropout: 0.0,
        }
    }
}

impl ArchitectureConfig {
    pub fn tag(&self) -> String {
        let base = match self.base {
            BaseArchitecture::BaselineMini => "baseline-mini",
            BaseArchitecture::Baseline => "baseline",
        };
        let variant = match self.variant {
            Variant::Baseline => "",
            Variant::Wide => "+wide",
            Variant::Deep => "+deep",
            Variant::DeepWide => "+deep-wide",
            Variant::Custom => "+custom",
        };
        format!("{base}{variant}")
    }

    /// Builds the network for `[C, H, W]` inputs and `classes` outputs.
    pub fn build(&self, input: [usize; 3], classes: usize, smooth: bool) -> Result<ArchitectureSpec> {
        let mut spec = match self.base {
            BaseArchitecture::BaselineMini => ArchitectureSpec::baseline_mini(),
            BaseArchitecture::Baseline => ArchitectureSpec::full_baseline(input[1], input[2], classes),
        };
        spec.input = input;
        spec.classes = classes;
        if let Some(last) = spec.layers.last_mut() {
            last.channels = classes;
        }
        for l in spec.layers.iter_mut().filter(|l| l.kind == crate::nn::BlockKind::Fcb) {
            l.dropout = self.dropout;
        }
        spec = match self.variant {
            Variant::Baseline => spec,
            Variant::Wide => spec.wide(),
            Variant::Deep => spec.deep(),
            Variant::DeepWide => spec.deep_wide(),
            Variant::Custom => return Err(Error::invalid("problem.architecture.variant", "custom is not buildable here")),
        };
        if smooth {
            spec = spec.smooth();
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemSpec {
    /// Identifier used to group records; derived from the parts when empty.
    pub name: String,
    pub architecture: ArchitectureConfig,
    pub dataset: DatasetSpec,
}

impl ProblemSpec {
    pub fn id(&self) -> String {
        if self.name.is_empty() {
            format!("{}/{}", self.architecture.tag(), self.dataset.tag())
        } else {
            self.name.clone()
        }
    }
}

/// Algorithm, preset, and the resolved hyperparameters.
///
/// In JSON the hyperparameters sit next to `name` and `preset`, e.g.
/// `{"name": "adam", "preset": "tuned", "eta": 0.001}`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSpec {
    pub name: Algorithm,
    pub preset: Preset,
    pub hyper: HyperParams,
}

impl OptimizerSpec {
    pub fn preset(name: Algorithm, preset: Preset) -> Self {
        Self {
            name,
            preset,
            hyper: HyperParams::preset(name, preset),
        }
    }
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self::preset(Algorithm::Adam, Preset::Default)
    }
}

impl Serialize for OptimizerSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut v = serde_json::to_value(self.hyper).map_err(serde::ser::Error::custom)?;
        let map = v.as_object_mut().expect("struct serializes to an object");
        let mut out = serde_json::Map::new();
        out.insert("name".into(), Value::String(self.name.name().into()));
        out.insert("preset".into(), Value::String(self.preset.name().into()));
        out.append(map);
        Value::Object(out).serialize(s)
    }
}

impl<'de> Deserialize<'de> for OptimizerSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let mut v = Value::deserialize(d)?;
        let map = v
            .as_object_mut()
            .ok_or_else(|| D::Error::custom("optimizer must be an object"))?;
        let name = match map.remove("name") {
            Some(Value::String(s)) => Algorithm::parse(&s).map_err(D::Error::custom)?,
            Some(_) => return Err(D::Error::custom("optimizer.name must be a string")),
            None => Algorithm::Adam,
        };
        let preset = match map.remove("preset") {
            Some(Value::String(s)) => Preset::parse(&s).map_err(D::Error::custom)?,
            Some(_) => return Err(D::Error::custom("optimizer.preset must be a string")),
            None => Preset::Default,
        };
        let mut base = serde_json::to_value(HyperParams::preset(name, preset)).map_err(D::Error::custom)?;
        merge(&mut base, v, "optimizer").map_err(D::Error::custom)?;
        let hyper = serde_json::from_value(base).map_err(D::Error::custom)?;
        Ok(Self { name, preset, hyper })
    }
}

/// One training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub optimizer: OptimizerSpec,
    /// Epochs for mini-batch methods, iterations for L-BFGS. `None` uses the
    /// preset's budget.
    pub epochs: Option<usize>,
    pub batch_size: usize,
    pub augmentation: AugmentationSpec,
    pub initializer: InitializerKind,
    pub seed: u64,
    /// Record wall-clock seconds. Off keeps output files byte-reproducible.
    pub timing: bool,
    /// Evaluate test accuracy every this many epochs (0: only at the end).
    pub eval_every: usize,
    /// Selects the 30-epoch budget when `epochs` is unset.
    pub large: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: ProblemSpec::default(),
            optimizer: OptimizerSpec::default(),
            epochs: None,
            batch_size: DEFAULT_BATCH_SIZE,
            augmentation: AugmentationSpec::default(),
            initializer: InitializerKind::GlorotUniform,
            seed: DEFAULT_SEED,
            timing: false,
            eval_every: 0,
            large: false,
        }
    }
}

impl RunConfig {
    pub fn epochs(&self) -> usize {
        self.epochs
            .unwrap_or_else(|| default_epochs(self.optimizer.preset, self.large))
    }

    pub fn algorithm(&self) -> Algorithm {
        self.optimizer.name
    }

    pub fn smooth(&self) -> bool {
        self.problem
            .architecture
            .smooth
            .unwrap_or(self.algorithm() == Algorithm::Lbfgs)
    }

    pub fn solver_id(&self) -> String {
        self.algorithm().name().to_string()
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer
            .hyper
            .validate()
            .map_err(|e| Error::invalid("optimizer", e.to_string()))?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if self.algorithm() == Algorithm::Lbfgs && !self.smooth() {
            return Err(Error::invalid(
                "problem.architecture.smooth",
                "L-BFGS needs the smooth network (SiLU, mean pooling, no dropout)",
            ));
        }
        let d = self.problem.architecture.dropout;
        if !(0.0..1.0).contains(&d) {
            return Err(Error::invalid("problem.architecture.dropout", "must lie in [0, 1)"));
        }
        self.augmentation
            .validate()
            .map_err(|e| Error::invalid("augmentation", e.to_string()))?;
        self.problem.dataset.validate()
    }

    /// SHA-256 of the canonical JSON, as 16 hex digits.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..8])
    }

    /// Parses JSON text, applies dotted overrides, and validates.
    pub fn from_json(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let tree = parse_json(text)?;
        resolve(tree, overrides)
    }
}

/// JSON parse with the failure position.
pub fn parse_json(text: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| Error::ParseError {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Writes `value` at the dotted `key`, creating intermediate objects.
pub fn set_dotted(tree: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::invalid(key, "empty key segment"));
    }
    for part in &parts[..parts.len() - 1] {
        if !node.is_object() {
            return Err(Error::invalid(key, "override path crosses a non-object value"));
        }
        node = node
            .as_object_mut()
            .expect("checked")
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    match node.as_object_mut() {
        Some(map) => {
            map.insert(parts[parts.len() - 1].to_string(), value);
            Ok(())
        }
        None => Err(Error::invalid(key, "override path crosses a non-object value")),
    }
}

/// Interprets an override value as JSON, falling back to a plain string.
pub fn override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Recursively overlays `user` on `base`; keys absent from `base` are errors.
pub fn merge(base: &mut Value, user: Value, path: &str) -> Result<()> {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &sub)?,
                    None => return Err(Error::UnknownKey(sub)),
                }
            }
            Ok(())
        }
        // optional sections are null by default and take the user's value whole
        (slot, v) => {
            if slot.is_object() && !v.is_object() && !v.is_null() {
                return Err(Error::invalid(path, "expected an object"));
            }
            *slot = v;
            Ok(())
        }
    }
}

fn optimizer_choice(tree: &Value) -> Result<(Algorithm, Preset)> {
    let opt = tree.get("optimizer");
    let name = match opt.and_then(|o| o.get("name")) {
        None => Algorithm::Adam,
        Some(Value::String(s)) => Algorithm::parse(s)?,
        Some(_) => return Err(Error::invalid("optimizer.name", "must be a string")),
    };
    let preset = match opt.and_then(|o| o.get("preset")) {
        None => Preset::Default,
        Some(Value::String(s)) => Preset::parse(s).map_err(|_| Error::invalid("optimizer.preset", s.clone()))?,
        Some(_) => return Err(Error::invalid("optimizer.preset", "must be a string")),
    };
    Ok((name, preset))
}

/// Applies overrides to a parsed tree and builds a validated config.
pub fn resolve(mut tree: Value, overrides: &[(String, String)]) -> Result<RunConfig> {
    if !tree.is_object() {
        return Err(Error::invalid("", "config must be a JSON object"));
    }
    for (k, v) in overrides {
        set_dotted(&mut tree, k, override_value(v))?;
    }
    let (name, preset) = optimizer_choice(&tree)?;
    let defaults = RunConfig {
        optimizer: OptimizerSpec::preset(name, preset),
        ..RunConfig::default()
    };
    let mut base = serde_json::to_value(&defaults)?;
    merge(&mut base, tree, "")?;
    let config: RunConfig = serde_json::from_value(base).map_err(|e| Error::invalid("config", e.to_string()))?;
    config.validate()?;
    Ok(config)
}
