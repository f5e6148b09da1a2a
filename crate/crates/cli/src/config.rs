//! Pipeline configuration file.
//!
//! INI layout, one section per stage:
//!
//! ```ini
//! [run]
//! seed = 7
//! out_dir = runs/demo
//!
//! [cut]
//! train.lr = 0.0002
//! generator.base_filters = 8
//! ```
//!
//! Keys inside a section are dotted paths into that stage's config struct.
//! Every key must already exist in the defaults, and its value is parsed
//! with the type of the default value.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::Value;
use skullcut_core::cut::CutConfig;
use skullcut_core::lapsrn::{AugmentationConfig, PyramidSpec, SrTrainConfig};
use skullcut_core::metrics::DEFAULT_SURFACE_TOLERANCE_MM;
use skullcut_core::postprocess::SegmentationParams;
use skullcut_core::volume_io::DEFAULT_FLOOR_HU;

use crate::error::CliError;

pub const SECTIONS: [&str; 6] = ["data", "cut", "lapsrn", "postprocess", "metrics", "run"];

/// Keys owned by `[run] seed`; setting them directly is refused.
const DERIVED_KEYS: [&str; 2] = ["cut.train.seed", "lapsrn.train.seed"];

/// Spellings people reach for, mapped to the real leaf name.
const ALIASES: [(&str, &str); 6] = [
    ("learning_rate", "lr"),
    ("epochs", "max_epochs"),
    ("patience", "plateau_patience_epochs"),
    ("threshold", "bone_threshold_hu"),
    ("tolerance", "tolerance_mm"),
    ("output_dir", "out_dir"),
];

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// MR volumes for translation training.
    pub mr_dir: String,
    /// CT volumes (HU) for translation training.
    pub ct_dir: String,
    /// High-resolution CT volumes (HU) for super-resolution training; empty reuses `ct_dir`.
    pub sr_dir: String,
    pub floor_hu: f32,
    /// Resample training volumes to this shape first; empty keeps the native grid.
    pub shape: Vec<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { mr_dir: String::new(), ct_dir: String::new(), sr_dir: String::new(), floor_hu: DEFAULT_FLOOR_HU, shape: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LapsrnConfig {
    pub pyramid: PyramidSpec,
    pub train: SrTrainConfig,
    pub augmentation: AugmentationConfig,
    /// Chunk core at inference, in input voxels.
    pub infer_core_size: usize,
    /// Chunk halo at inference, in input voxels; 0 picks the network's receptive radius.
    pub infer_halo: usize,
}

impl Default for LapsrnConfig {
    fn default() -> Self {
        Self {
            pyramid: PyramidSpec::default(),
            train: SrTrainConfig::default(),
            augmentation: AugmentationConfig::default(),
            infer_core_size: 64,
            infer_halo: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub tolerance_mm: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { tolerance_mm: DEFAULT_SURFACE_TOLERANCE_MM }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of all randomness; training components derive their own streams from it.
    pub seed: u64,
    pub out_dir: String,
    /// Stop a training run after this many optimizer steps in total (0 = run to the end).
    pub stop_after_steps: u64,
    /// Also checkpoint every this many steps (0 = epoch ends only).
    pub checkpoint_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { seed: 0, out_dir: "runs".into(), stop_after_steps: 0, checkpoint_every: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataConfig,
    pub cut: CutConfig,
    pub lapsrn: LapsrnConfig,
    pub postprocess: SegmentationParams,
    pub metrics: MetricsConfig,
    pub run: RunConfig,
}

impl PipelineConfig {
    /// Defaults, then the file (if any), then `overrides` (`section.key=value`) in order.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut entries = Vec::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            entries = parse_ini(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        }
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("override `{o}` is not of the form section.key=value")))?;
            entries.push((key.trim().to_owned(), value.trim().to_owned()));
        }
        Self::from_entries(&entries)
    }

    pub fn from_entries(entries: &[(String, String)]) -> Result<Self, CliError> {
        let mut tree = serde_json::to_value(PipelineConfig::default()).expect("defaults serialize");
        for (key, raw) in entries {
            set_key(&mut tree, key, raw)?;
        }
        let mut config: PipelineConfig =
            serde_json::from_value(tree).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        config.propagate_seed();
        config.validate()?;
        Ok(config)
    }

    fn propagate_seed(&mut self) {
        self.cut.train.seed = self.run.seed;
        self.lapsrn.train.seed = self.run.seed;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: skullcut_core::Error| CliError::Usage(format!("invalid config: {e}"));
        self.cut.validate().map_err(usage)?;
        self.lapsrn.pyramid.validate().map_err(usage)?;
        self.lapsrn.train.validate().map_err(usage)?;
        if !(self.data.shape.is_empty() || self.data.shape.len() == 3 && !self.data.shape.contains(&0)) {
            return Err(CliError::Usage(format!("data.shape must be empty or three positive sizes, got {:?}", self.data.shape)));
        }
        if self.lapsrn.infer_core_size == 0 {
            return Err(CliError::Usage("lapsrn.infer_core_size must be positive".into()));
        }
        if !(self.metrics.tolerance_mm >= 0.0) {
            return Err(CliError::Usage("metrics.tolerance_mm must be non-negative".into()));
        }
        Ok(())
    }

    /// The resolved config in the file format [`PipelineConfig::load`] reads.
    pub fn to_ini(&self) -> String {
        let tree = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        for section in SECTIONS {
            out.push_str(&format!("[{section}]\n"));
            let mut leaves = BTreeMap::new();
            flatten("", &tree[section], &mut leaves);
            for (key, value) in leaves {
                if DERIVED_KEYS.contains(&format!("{section}.{key}").as_str()) {
                    continue;
                }
                out.push_str(&format!("{key} = {value}\n"));
            }
            out.push('\n');
        }
        out
    }
}

/// Every settable key, as `section.path`.
pub fn known_keys() -> Vec<String> {
    let tree = serde_json::to_value(PipelineConfig::default()).expect("defaults serialize");
    let mut leaves = BTreeMap::new();
    flatten("", &tree, &mut leaves);
    leaves.into_keys().filter(|k| !DERIVED_KEYS.contains(&k.as_str())).collect()
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, String>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        _ => {
            out.insert(prefix.to_owned(), render(v));
        }
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(render).collect::<Vec<_>>().join(","),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

/// `(section.key, value)` pairs in file order.
pub fn parse_ini(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut section: Option<String> = None;
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| format!("line {line_no}: unterminated section header"))?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(format!("line {line_no}: unknown section [{name}]{}", suggest(name, SECTIONS.iter().copied())));
            }
            section = Some(name.to_owned());
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| format!("line {line_no}: expected key = value"))?;
        let section = section.as_deref().ok_or_else(|| format!("line {line_no}: key outside of any section"))?;
        let full = format!("{section}.{}", key.trim());
        if let Some(prev) = seen.insert(full.clone(), line_no) {
            return Err(format!("line {line_no}: `{full}` already set on line {prev}"));
        }
        out.push((full, unquote(value.trim()).to_owned()));
    }
    Ok(out)
}

/// Drops `#`/`;` comments that start a line or follow whitespace.
fn strip_comment(line: &str) -> &str {
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if (b == b'#' || b == b';') && (i == 0 || bytes[i - 1].is_ascii_whitespace()) {
            return &line[..i];
        }
    }
    line
}

fn unquote(v: &str) -> &str {
    v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v)
}

fn suggest<'a>(word: &str, candidates: impl IntoIterator<Item = &'a str>) -> String {
    candidates
        .into_iter()
        .map(|c| (strsim::jaro_winkler(word, c), c))
        .filter(|(score, c)| *score >= 0.8 || strsim::damerau_levenshtein(word, c) <= 1 + word.len() / 4)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| format!("; did you mean `{c}`?"))
        .unwrap_or_default()
}

fn unknown_key(key: &str) -> CliError {
    let keys = known_keys();
    let mut hint = suggest(key, keys.iter().map(String::as_str));
    if hint.is_empty() {
        // Match the last path component against aliases and leaf names within the same parent.
        let (parent, leaf) = key.rsplit_once('.').unwrap_or(("", key));
        let resolved = ALIASES
            .iter()
            .map(|(alias, real)| (strsim::jaro_winkler(leaf, alias), *real))
            .filter(|(score, _)| *score >= 0.85)
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, real)| format!("{parent}.{real}"));
        if let Some(candidate) = resolved.filter(|c| keys.contains(c)) {
            hint = format!("; did you mean `{candidate}`?");
        }
    }
    CliError::Usage(format!("unknown config key `{key}`{hint}"))
}

fn set_key(tree: &mut Value, key: &str, raw: &str) -> Result<(), CliError> {
    if DERIVED_KEYS.contains(&key) {
        return Err(CliError::Usage(format!("`{key}` is derived from `run.seed`; set that instead")));
    }
    let mut node = &mut *tree;
    for part in key.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(part).ok_or_else(|| unknown_key(key))?,
            _ => return Err(unknown_key(key)),
        };
    }
    *node = parse_like(node, raw).map_err(|e| CliError::Usage(format!("`{key}`: {e}")))?;
    Ok(())
}

/// Parses `raw` with the JSON type of `template`.
fn parse_like(template: &Value, raw: &str) -> Result<Value, String> {
    match template {
        Value::Object(map) => {
            let keys: Vec<&String> = map.keys().collect();
            Err(format!("is a group; set one of its keys ({})", keys.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(", ")))
        }
        Value::Bool(_) => match raw.to_ascii_lowercase().as_str() {
            "true" | "yes" | "on" | "1" => Ok(Value::Bool(true)),
            "false" | "no" | "off" | "0" => Ok(Value::Bool(false)),
            _ => Err(format!("expected a boolean, got `{raw}`")),
        },
        Value::Number(n) if n.is_u64() => {
            raw.parse::<u64>().map(Value::from).map_err(|_| format!("expected a non-negative integer, got `{raw}`"))
        }
        Value::Number(n) if n.is_i64() => raw.parse::<i64>().map(Value::from).map_err(|_| format!("expected an integer, got `{raw}`")),
        Value::Number(_) => {
            let x: f64 = raw.parse().map_err(|_| format!("expected a number, got `{raw}`"))?;
            serde_json::Number::from_f64(x).map(Value::Number).ok_or_else(|| format!("`{raw}` is not finite"))
        }
        Value::Array(items) => {
            if raw.trim().is_empty() {
                return Ok(Value::Array(Vec::new()));
            }
            raw.split(',')
                .map(|item| match items.first() {
                    Some(first) => parse_like(first, item.trim()),
                    None => Ok(scalar_guess(item.trim())),
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Value::Array)
        }
        Value::Null => Ok(scalar_guess(raw)),
        Value::String(_) => Ok(Value::String(raw.to_owned())),
    }
}

fn scalar_guess(raw: &str) -> Value {
    serde_json::from_str::<Value>(raw).ok().filter(|v| !v.is_object()).unwrap_or_else(|| Value::String(raw.to_owned()))
}

/// Settable keys of one section, without the section prefix.
pub fn section_keys(section: &str) -> Vec<String> {
    known_keys().into_iter().filter_map(|k| k.strip_prefix(&format!("{section}.")).map(str::to_owned)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn typed_values_and_seed_propagation() {
        let c = PipelineConfig::from_entries(&entries(&[
            ("cut.train.lr", "1e-3"),
            ("cut.generator.base_filters", "8"),
            ("cut.train.gan_mode", "LSGAN"),
            ("cut.nce.tap_layers", "0,2,4"),
            ("lapsrn.augmentation.flip", "off"),
            ("data.shape", "32,32,32"),
            ("run.seed", "11"),
        ]))
        .unwrap();
        assert_eq!(c.cut.train.lr, 1e-3);
        assert_eq!(c.cut.generator.base_filters, 8);
        assert_eq!(c.cut.nce.tap_layers, vec![0, 2, 4]);
        assert!(!c.lapsrn.augmentation.flip);
        assert_eq!(c.data.shape, vec![32, 32, 32]);
        assert_eq!((c.cut.train.seed, c.lapsrn.train.seed), (11, 11));
    }

    #[test]
    fn misspelled_learning_rate_gets_a_suggestion() {
        let err = PipelineConfig::from_entries(&entries(&[("cut.train.lerning_rate", "1")])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("lerning_rate") && msg.contains("did you mean `cut.train.lr`"), "{msg}");
        let err = PipelineConfig::from_entries(&entries(&[("lapsrn.train.momentun", "0.5")])).unwrap_err();
        assert!(err.to_string().contains("`lapsrn.train.momentum`"), "{err}");
    }

    #[test]
    fn wrong_types_groups_and_derived_keys_are_rejected() {
        for (k, v) in [
            ("cut.generator.base_filters", "eight"),
            ("cut.generator.base_filters", "-1"),
            ("cut.train", "1"),
            ("cut.train.seed", "3"),
            ("postprocess.structuring_element", "SPHERE"),
            ("data.shape", "32,32"),
        ] {
            assert!(PipelineConfig::from_entries(&entries(&[(k, v)])).is_err(), "{k}={v}");
        }
    }

    #[test]
    fn ini_parsing_rules() {
        let text = "# header\n[run]\nseed = 4 # inline\nout_dir = \"a b\"\n\n[cut]\ntrain.lr=0.5\n";
        let e = parse_ini(text).unwrap();
        assert_eq!(e, entries(&[("run.seed", "4"), ("run.out_dir", "a b"), ("cut.train.lr", "0.5")]));
        assert!(parse_ini("seed = 1\n").unwrap_err().contains("outside"));
        assert!(parse_ini("[rnu]\n").unwrap_err().contains("did you mean `run`"));
        assert!(parse_ini("[run]\nseed=1\nseed=2\n").unwrap_err().contains("already set"));
        assert!(parse_ini("[run]\nseed\n").is_err());
    }

    #[test]
    fn resolved_config_round_trips_through_ini() {
        let c = PipelineConfig::from_entries(&entries(&[
            ("cut.train.lr", "0.000123"),
            ("cut.nce.tap_layers", "1,3"),
            ("lapsrn.augmentation.blur_sigma_max", "0.3"),
            ("run.seed", "99"),
            ("run.out_dir", "x/y"),
        ]))
        .unwrap();
        let again = PipelineConfig::from_entries(&parse_ini(&c.to_ini()).unwrap()).unwrap();
        assert_eq!(again, c);
        assert_eq!(PipelineConfig::from_entries(&parse_ini(&PipelineConfig::default().to_ini()).unwrap()).unwrap(), {
            let mut d = PipelineConfig::default();
            d.propagate_seed();
            d
        });
    }

    #[test]
    fn every_section_has_keys() {
        for s in SECTIONS {
            assert!(!section_keys(s).is_empty(), "{s}");
        }
    }
}
