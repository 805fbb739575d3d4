//! The run configuration: every knob of the pipeline in one TOML document,
//! resolved as defaults, then the config file, then `key=value` overrides.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::codebook::KMeansConfig;
use crate::error::{Error, Result};
use crate::eval::ConditionMode;
use crate::longgen::LongGenPlan;
use crate::model::{LrSchedule, TrainConfig, TransformerConfig};
use crate::sampler::SamplerParams;
use crate::world::{DatasetConfig, WorldConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodebookConfig {
    pub k: usize,
    pub patch: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub tolerance: f64,
    /// Clips used for fitting, taken at an even stride over the dataset.
    pub fit_clips: usize,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        let km = KMeansConfig::default();
        CodebookConfig { k: 256, patch: 4, seed: 0, max_iters: km.max_iters, tolerance: km.tolerance, fit_clips: 768 }
    }
}

impl CodebookConfig {
    pub fn kmeans(&self) -> KMeansConfig {
        KMeansConfig { max_iters: self.max_iters, tolerance: self.tolerance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub samples: usize,
    pub mode: ConditionMode,
    /// Prompt of the diversity report; empty skips it.
    pub diversity_prompt: String,
    pub diversity_samples: usize,
    /// Write a GIF and record per evaluated sample.
    pub artifacts: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            samples: 200,
            mode: ConditionMode::TextOnly,
            diversity_prompt: String::new(),
            diversity_samples: 20,
            artifacts: true,
        }
    }
}

/// Inputs of `generate`, `extrapolate` and `interpolate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub text: String,
    /// PNG whose non-black patches are frozen as the first frame; empty for
    /// text-only generation.
    pub partial_image: PathBuf,
    /// Also write one PNG per mask-predict iteration under `trace/`.
    pub trace: bool,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            text: "a large red square is moving in straight path towards northeast".into(),
            partial_image: PathBuf::new(),
            trace: false,
        }
    }
}

/// Where prerequisite artifacts are read from. Empty paths are filled with the
/// newest matching run under the output root when a command resolves them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset: PathBuf,
    pub codebook: PathBuf,
    pub checkpoint: PathBuf,
}

/// Defaults to the smoke configuration: a narrower transformer than
/// [`TransformerConfig::default`] with a higher, cosine-decayed learning rate,
/// sized to train on a single CPU core.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub world: WorldConfig,
    pub dataset: DatasetConfig,
    pub codebook: CodebookConfig,
    pub model: TransformerConfig,
    pub train: TrainConfig,
    pub sampler: SamplerParams,
    pub eval: EvalConfig,
    pub longgen: LongGenPlan,
    pub generate: GenerateConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            world: WorldConfig::default(),
            dataset: DatasetConfig::default(),
            codebook: CodebookConfig::default(),
            model: TransformerConfig { heads: 2, model_dim: 64, ffn_dim: 256, dropout: 0.0, ..TransformerConfig::default() },
            train: TrainConfig { lr: 1e-3, schedule: LrSchedule::Cosine, ..TrainConfig::default() },
            sampler: SamplerParams::default(),
            eval: EvalConfig::default(),
            longgen: LongGenPlan::default(),
            generate: GenerateConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        resolve_str(text, &[])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    /// Every settable dotted key, sorted.
    pub fn valid_keys() -> Vec<String> {
        let mut keys = BTreeSet::new();
        leaf_keys(&defaults_table(), "", &mut keys);
        keys.into_iter().collect()
    }
}

fn defaults_table() -> Table {
    Table::try_from(RunConfig::default()).expect("default config serializes")
}

fn leaf_keys(t: &Table, prefix: &str, out: &mut BTreeSet<String>) {
    for (k, v) in t {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(inner) => leaf_keys(inner, &key, out),
            _ => {
                out.insert(key);
            }
        }
    }
}

fn unknown(key: &str) -> Error {
    Error::UnknownConfigKey { key: key.to_string(), valid: RunConfig::valid_keys() }
}

/// Looks up the default value at `key`, which must name a leaf.
fn default_at<'a>(defaults: &'a Table, key: &str) -> Result<&'a Value> {
    let mut parts = key.split('.').peekable();
    let mut table = defaults;
    while let Some(p) = parts.next() {
        match (table.get(p), parts.peek()) {
            (Some(Value::Table(inner)), Some(_)) => table = inner,
            (Some(Value::Table(_)), None) | (None, _) | (Some(_), Some(_)) => return Err(unknown(key)),
            (Some(v), None) => return Ok(v),
        }
    }
    Err(unknown(key))
}

/// Integers given for float settings are widened.
fn coerce(value: Value, like: &Value) -> Value {
    match (value, like) {
        (Value::Integer(i), Value::Float(_)) => Value::Float(i as f64),
        (Value::Array(items), Value::Array(proto)) if !proto.is_empty() => {
            Value::Array(items.into_iter().map(|v| coerce(v, &proto[0])).collect())
        }
        (v, _) => v,
    }
}

fn set(table: &mut Table, key: &str, value: Value) {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut t = table;
    for p in parts {
        t = t
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .expect("intermediate config keys are tables");
    }
    t.insert(last.to_string(), value);
}

/// Writes every leaf of `file` over `base`, rejecting keys absent from the
/// defaults.
fn merge(base: &mut Table, file: Table, prefix: &str, defaults: &Table) -> Result<()> {
    for (k, v) in file {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (v, default_at(defaults, &key)) {
            (v, Ok(like)) => set(base, &key, coerce(v, like)),
            (Value::Table(inner), Err(_)) => merge(base, inner, &key, defaults)?,
            (_, Err(e)) => return Err(e),
        }
    }
    Ok(())
}

/// Parses the right-hand side of an override: TOML syntax when it parses,
/// otherwise a bare string.
fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn resolve_str(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let defaults = defaults_table();
    let file: Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    let mut table = defaults.clone();
    merge(&mut table, file, "", &defaults)?;
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
        let key = key.trim();
        let like = default_at(&defaults, key)?;
        set(&mut table, key, coerce(parse_value(raw.trim()), like));
    }
    let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    Ok(cfg)
}

/// Defaults, then the file at `path` (if any), then `overrides` of the form
/// `dotted.key=value`.
pub fn resolve_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(p.to_path_buf()),
            _ => Error::io(p, e),
        })?,
        None => String::new(),
    };
    resolve_str(&text, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip_is_identical() {
        let mut cfg = RunConfig::default();
        cfg.sampler.beams = 5;
        cfg.train.lr = 1e-3;
        cfg.paths.checkpoint = "some/model.ckpt".into();
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml().unwrap(), text);
    }

    #[test]
    fn beam_override_changes_only_beams() {
        let cfg = resolve_str("", &["sampler.B=5".into()]).unwrap();
        let mut expected = RunConfig::default();
        expected.sampler.beams = 5;
        assert_eq!(cfg, expected);
    }

    #[test]
    fn overrides_beat_the_file() {
        let file = "seed = 3\n[train]\nlr = 1\nsteps = 10\n";
        let cfg = resolve_str(file, &["train.steps=7".into(), "eval.mode=text_plus_partial_image".into()]).unwrap();
        assert_eq!((cfg.seed, cfg.train.lr, cfg.train.steps), (3, 1.0, 7));
        assert_eq!(cfg.eval.mode, ConditionMode::TextPlusPartialImage);
        let cfg = resolve_str("", &["generate.text=a red circle".into(), "train.masking.strategy_probs=[1,0,0,0]".into()])
            .unwrap();
        assert_eq!(cfg.generate.text, "a red circle");
        assert_eq!(cfg.train.masking.strategy_probs, [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn unknown_keys_list_valid_ones() {
        for err in [
            resolve_str("", &["sampler.beams=5".into()]).unwrap_err(),
            resolve_str("[sampler]\nwidth = 2\n", &[]).unwrap_err(),
            resolve_str("", &["train=3".into()]).unwrap_err(),
        ] {
            match err {
                Error::UnknownConfigKey { valid, .. } => {
                    assert!(valid.contains(&"sampler.B".to_string()));
                    assert!(valid.contains(&"train.masking.keep_frames_prob".to_string()));
                }
                other => panic!("unexpected {other:?}"),
            }
        }
        assert!(matches!(resolve_str("", &["seed".into()]), Err(Error::Config(_))));
    }

    #[test]
    fn missing_file_is_named() {
        let p = Path::new("/nonexistent/run.toml");
        match resolve_config(Some(p), &[]) {
            Err(Error::MissingArtifact(q)) => assert_eq!(q, p),
            other => panic!("unexpected {other:?}"),
        }
    }
}
