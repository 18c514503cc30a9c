//! Flat dotted-key run configuration.
//!
//! Precedence, lowest first: built-in defaults, the `--config` file, then
//! `--set key=value` flags. Every key must exist in the defaults and keep its
//! type; an empty string marks an optional value as unset. Relative paths in
//! the file are resolved against the file's directory, relative paths given
//! on the command line against the working directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use sha2::{Digest, Sha256};
use sovrisk::synth::DgpSpec;
use toml::Value;

use crate::CliError;

const DEFAULTS: &str = r#"
seed = 42

[panel]
path = ""
regions = ""

[hyperparams]
path = ""

[output]
dir = "runs"

[preprocess]
apply = true
ma_window = 28
standardize = true
train_cutoff = ""

[plan]
first_origin = ""
last_origin = ""
refit_every = 7
buffer = 28

[models]
families = []
infosets = ["markets", "news"]
max_trees = 0

[tune]
enabled = false
budget = 50
loss = "mae"

[explain]
family = "ExtraTrees"
infoset = "news"
train_end = ""
interactions = true
heatmap_key = "GPR"
features = []
grid = 50
frac = 0.4
robust_iters = 1
surface = ["GPR", "VIX"]
surface_bins = 8

[connect]
cube = ""
features = []
first_center = ""
last_center = ""
step_days = 7
horizon = 10
tau = 0.4
p_max = 4
scaling = "published"
dump_theta = false

[report]
ledger = ""
"#;

/// Keys holding filesystem paths.
const PATH_KEYS: [&str; 6] = ["panel.path", "panel.regions", "hyperparams.path", "output.dir", "connect.cube", "report.ledger"];

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    values: BTreeMap<String, Value>,
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

fn defaults() -> BTreeMap<String, Value> {
    let mut out = BTreeMap::new();
    flatten("", &Value::Table(toml::from_str(DEFAULTS).expect("built-in defaults parse")), &mut out);
    let dgp = Value::try_from(DgpSpec::default()).expect("synthetic spec serializes");
    flatten("synth", &dgp, &mut out);
    out
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "string",
        Value::Integer(_) => "integer",
        Value::Float(_) => "float",
        Value::Boolean(_) => "boolean",
        Value::Datetime(_) => "datetime",
        Value::Array(_) => "array",
        Value::Table(_) => "table",
    }
}

/// Coerces `v` to the type of `default`, or explains the mismatch.
fn conform(key: &str, default: &Value, v: Value) -> Result<Value, CliError> {
    match (default, v) {
        (Value::Float(_), Value::Integer(i)) => Ok(Value::Float(i as f64)),
        (Value::String(_), Value::Datetime(d)) => Ok(Value::String(d.to_string())),
        (Value::Array(_), Value::Array(a)) => Ok(Value::Array(a)),
        (d, v) if std::mem::discriminant(d) == std::mem::discriminant(&v) => Ok(v),
        (d, v) => Err(CliError::Usage(format!("{key}: expected {}, got {}", type_name(d), type_name(&v)))),
    }
}

fn resolve_path(v: &Value, base: &Path) -> Value {
    match v {
        Value::String(s) if !s.is_empty() && Path::new(s).is_relative() => {
            Value::String(base.join(s).to_string_lossy().into_owned())
        }
        other => other.clone(),
    }
}

/// Parses the right-hand side of `--set`; bare words become strings.
fn parse_flag_value(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

impl Config {
    pub fn defaults() -> Self {
        Config { values: defaults() }
    }

    pub fn load(file: Option<&Path>, sets: &[String]) -> Result<Self, CliError> {
        let mut cfg = Config::defaults();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            let table: toml::Table = toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let mut flat = BTreeMap::new();
            flatten("", &Value::Table(table), &mut flat);
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            for (k, v) in flat {
                cfg.set_value(&k, v, &base)?;
            }
        }
        let cwd = std::env::current_dir().map_err(|e| CliError::Usage(format!("no working directory: {e}")))?;
        for s in sets {
            let (k, v) = s.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects key=value, got '{s}'")))?;
            cfg.set_value(k.trim(), parse_flag_value(v.trim()), &cwd)?;
        }
        Ok(cfg)
    }

    /// Rebuilds a configuration from a manifest's resolved key map.
    pub fn from_resolved(map: &serde_json::Map<String, serde_json::Value>) -> Result<Self, CliError> {
        let mut cfg = Config::defaults();
        for (k, v) in map {
            let v: Value = serde_json::from_value(v.clone()).map_err(|e| CliError::Usage(format!("manifest key {k}: {e}")))?;
            cfg.set_value(k, v, Path::new(""))?;
        }
        Ok(cfg)
    }

    fn set_value(&mut self, key: &str, v: Value, base: &Path) -> Result<(), CliError> {
        let default = self.values.get(key).ok_or_else(|| CliError::Usage(format!("unknown configuration key '{key}'")))?;
        let mut v = conform(key, default, v)?;
        if PATH_KEYS.contains(&key) {
            v = resolve_path(&v, base);
        }
        self.values.insert(key.to_string(), v);
        Ok(())
    }

    pub fn str(&self, key: &str) -> &str {
        self.values[key].as_str().expect("string key")
    }

    pub fn opt_str(&self, key: &str) -> Option<&str> {
        Some(self.str(key)).filter(|s| !s.is_empty())
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.opt_str(key).map(PathBuf::from)
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf, CliError> {
        let p = self.path(key).ok_or_else(|| CliError::Usage(format!("{key} is required")))?;
        if !p.exists() {
            return Err(CliError::Data(format!("{key}: {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn int(&self, key: &str) -> i64 {
        self.values[key].as_integer().expect("integer key")
    }

    pub fn count(&self, key: &str) -> Result<usize, CliError> {
        usize::try_from(self.int(key)).map_err(|_| CliError::Usage(format!("{key} must be non-negative")))
    }

    pub fn float(&self, key: &str) -> f64 {
        self.values[key].as_float().expect("float key")
    }

    pub fn bool(&self, key: &str) -> bool {
        self.values[key].as_bool().expect("boolean key")
    }

    pub fn date(&self, key: &str) -> Result<Option<NaiveDate>, CliError> {
        self.opt_str(key)
            .map(|s| s.parse().map_err(|e| CliError::Usage(format!("{key}: '{s}' is not a date: {e}"))))
            .transpose()
    }

    pub fn str_list(&self, key: &str) -> Result<Vec<String>, CliError> {
        self.values[key]
            .as_array()
            .expect("array key")
            .iter()
            .map(|v| v.as_str().map(str::to_string).ok_or_else(|| CliError::Usage(format!("{key} must be a list of strings"))))
            .collect()
    }

    pub fn seed(&self) -> u64 {
        self.int("seed") as u64
    }

    /// The synthetic-data spec assembled from the `synth.*` keys.
    pub fn dgp(&self) -> Result<DgpSpec, CliError> {
        let obj: serde_json::Map<String, serde_json::Value> = self
            .values
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("synth.").map(|f| (f.to_string(), serde_json::to_value(v).expect("toml value to json"))))
            .collect();
        serde_json::from_value(serde_json::Value::Object(obj)).map_err(|e| CliError::Usage(format!("synth: {e}")))
    }

    pub fn to_json(&self) -> serde_json::Map<String, serde_json::Value> {
        self.values.iter().map(|(k, v)| (k.clone(), serde_json::to_value(v).expect("toml value to json"))).collect()
    }

    /// SHA-256 over the canonical JSON of the resolved keys.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(&self.to_json()).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
