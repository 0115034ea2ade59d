//! Run configuration: one TOML file, `IMU4D_*` environment overrides, then flags.

use std::fmt;
use std::path::{Path, PathBuf};

use imu4d_core::imu::{Slot, SlotSet, NUM_SLOTS};
use imu4d_core::model::{AugmentConfig, ModelConfig, Stage};
use imu4d_core::nn::AdamWConfig;
use imu4d_core::scene::ClassTaxonomy;
use imu4d_core::tokenizer::TokenizerConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const ENV_PREFIX: &str = "IMU4D_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig { data_dir: "data".into(), checkpoint_dir: "checkpoints".into(), report_dir: "reports".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub count: usize,
    pub seed: u64,
    /// Seconds per scenario.
    pub duration: f64,
    pub fps: u32,
    /// Size of the object taxonomy, 16..=63.
    pub classes: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { count: 100, seed: 0, duration: 2.0, fps: 30, classes: 63 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_frac: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub stage: u8,
    /// Train on every sequence regardless of the split manifest.
    pub all_splits: bool,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let opt = AdamWConfig::default();
        TrainConfig {
            steps: 1000,
            batch_size: 8,
            lr: opt.lr,
            weight_decay: opt.weight_decay,
            warmup_frac: opt.warmup_frac,
            clip_norm: opt.clip_norm,
            seed: 0,
            stage: 1,
            all_splits: false,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            warmup_frac: self.warmup_frac,
            clip_norm: self.clip_norm,
            total_steps: self.steps,
            ..AdamWConfig::default()
        }
    }

    pub fn stage(&self) -> Stage {
        Stage::from_number(self.stage).unwrap_or(Stage::One)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSel {
    Train,
    Val,
    Test,
    All,
}

/// Which devices are worn at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DeviceSpec {
    All,
    /// A plausible subset of this size, drawn per sequence from the eval seed.
    Count(usize),
    Slots(SlotSet),
}

impl std::str::FromStr for DeviceSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s == "all" {
            return Ok(DeviceSpec::All);
        }
        if let Ok(n) = s.parse::<usize>() {
            return if (1..=NUM_SLOTS).contains(&n) { Ok(DeviceSpec::Count(n)) } else { Err(format!("device count {n} outside 1..=5")) };
        }
        let slots = s
            .split(',')
            .map(|name| Slot::from_name(name.trim()).ok_or_else(|| format!("unknown device slot '{}'", name.trim())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DeviceSpec::Slots(SlotSet::from_slots(&slots)))
    }
}

impl TryFrom<String> for DeviceSpec {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl fmt::Display for DeviceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeviceSpec::All => f.write_str("all"),
            DeviceSpec::Count(n) => write!(f, "{n}"),
            DeviceSpec::Slots(set) => {
                let names: Vec<&str> = Slot::ALL.iter().filter(|s| set.contains(s.index())).map(|s| s.name()).collect();
                f.write_str(&names.join(","))
            }
        }
    }
}

impl From<DeviceSpec> for String {
    fn from(d: DeviceSpec) -> String {
        d.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub frames: usize,
    /// Evaluate `long_frames` instead of `frames`.
    pub long_horizon: bool,
    pub long_frames: usize,
    pub temperature: f64,
    pub seed: u64,
    pub split: SplitSel,
    pub devices: DeviceSpec,
    pub shifted_average: bool,
    /// Score the ground truth against itself instead of running the model.
    pub oracle: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            frames: 60,
            long_horizon: false,
            long_frames: 200,
            temperature: 0.0,
            seed: 0,
            split: SplitSel::Test,
            devices: DeviceSpec::All,
            shifted_average: false,
            oracle: false,
        }
    }
}

impl EvalConfig {
    pub fn frame_budget(&self) -> usize {
        if self.long_horizon {
            self.long_frames
        } else {
            self.frames
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub synth: SynthConfig,
    pub tokenizer: TokenizerConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub eval: EvalConfig,
}

fn cfg_err(e: impl fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// Parses an override value as a TOML literal, falling back to a bare string.
fn env_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}")).ok().and_then(|mut t| t.remove("v")).unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets `rest` (lower-cased, `_`-joined) inside `table`, descending into a
/// sub-table when the leading segment names one.
fn set_path(table: &mut toml::Table, rest: &str, value: toml::Value, var: &str) -> CliResult<()> {
    if let Some((head, tail)) = rest.split_once('_') {
        if let Some(toml::Value::Table(sub)) = table.get_mut(head) {
            return set_path(sub, tail, value, var);
        }
    }
    if rest.is_empty() {
        return Err(CliError::Config(format!("{var}: missing key")));
    }
    table.insert(rest.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Reads `path` (or the defaults), applies overrides from `env` and validates.
    pub fn load(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> CliResult<Self> {
        let text = match path {
            Some(p) => crate::error::read_to_string(p)?,
            None => String::new(),
        };
        Self::from_toml_with_env(&text, env)
    }

    pub fn from_toml_with_env(text: &str, env: impl IntoIterator<Item = (String, String)>) -> CliResult<Self> {
        let file: toml::Table = toml::from_str(text).map_err(cfg_err)?;
        // Overlay the file onto a full default tree so overrides can address nested keys.
        let mut root = toml::Table::try_from(RunConfig::default()).map_err(cfg_err)?;
        merge(&mut root, file);
        let mut vars: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        vars.sort();
        for (var, raw) in vars {
            let rest = var[ENV_PREFIX.len()..].to_ascii_lowercase();
            let (section, key) = rest.split_once('_').ok_or_else(|| CliError::Config(format!("{var}: expected IMU4D_<SECTION>_<KEY>")))?;
            let Some(toml::Value::Table(sub)) = root.get_mut(section) else {
                return Err(CliError::Config(format!("{var}: unknown section '{section}'")));
            };
            set_path(sub, key, env_value(&raw), &var)?;
        }
        let cfg: RunConfig = toml::Value::Table(root).try_into().map_err(cfg_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        self.tokenizer.validate()?;
        self.model.validate()?;
        ClassTaxonomy::with_classes(self.synth.classes)?;
        if self.model.body_window != self.tokenizer.body_window {
            return Err(CliError::Config("model.body_window must equal tokenizer.body_window".into()));
        }
        if Stage::from_number(self.train.stage).is_none() {
            return Err(CliError::Config(format!("train.stage must be 1 or 2, got {}", self.train.stage)));
        }
        if self.train.steps == 0 || self.train.batch_size == 0 {
            return Err(CliError::Config("train.steps and train.batch_size must be positive".into()));
        }
        if !(self.train.lr > 0.0) || !(0.0..1.0).contains(&self.train.warmup_frac) {
            return Err(CliError::Config("train.lr must be positive and train.warmup_frac in [0, 1)".into()));
        }
        if !(self.synth.duration > 0.0) || self.synth.fps == 0 {
            return Err(CliError::Config("synth.duration and synth.fps must be positive".into()));
        }
        if !(1..=NUM_SLOTS).contains(&self.augment.min_devices) || !(0.0..=1.0).contains(&self.augment.text_dropout) {
            return Err(CliError::Config("augment.min_devices must lie in 1..=5 and augment.text_dropout in [0, 1]".into()));
        }
        if self.eval.frame_budget() < self.tokenizer.window || !(self.eval.temperature >= 0.0) {
            return Err(CliError::Config("eval frame budget must cover one window and temperature must be ≥ 0".into()));
        }
        Ok(())
    }

    pub fn taxonomy(&self) -> ClassTaxonomy {
        ClassTaxonomy::with_classes(self.synth.classes).expect("validated class count")
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
