//! Default hyperparameter table keyed by `(family, infoset)`.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use super::{Family, InfoSet, ModelError};

const BUILTIN: &str = include_str!("../../data/hyperparams.toml");

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HyperparamTable {
    entries: BTreeMap<(Family, InfoSet), BTreeMap<String, f64>>,
}

impl HyperparamTable {
    /// The shipped table.
    pub fn builtin() -> &'static HyperparamTable {
        static TABLE: OnceLock<HyperparamTable> = OnceLock::new();
        TABLE.get_or_init(|| HyperparamTable::parse(BUILTIN).expect("shipped hyperparameter table parses"))
    }

    pub fn builtin_text() -> &'static str {
        BUILTIN
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Hyperparams(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parses `[Family.infoset]` sections of numeric keys.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let root: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ModelError::Hyperparams(e.to_string()))?;
        let mut entries = BTreeMap::new();
        for (fam, sets) in root {
            let family: Family = fam.parse()?;
            let sets = sets
                .as_table()
                .ok_or_else(|| ModelError::Hyperparams(format!("[{fam}] must be a table")))?;
            for (set, params) in sets {
                let infoset: InfoSet = set.parse()?;
                let params = params
                    .as_table()
                    .ok_or_else(|| ModelError::Hyperparams(format!("[{fam}.{set}] must be a table")))?;
                let mut out = BTreeMap::new();
                for (k, v) in params {
                    let x = match v {
                        toml::Value::Integer(i) => *i as f64,
                        toml::Value::Float(f) => *f,
                        other => {
                            return Err(ModelError::Hyperparams(format!(
                                "{fam}.{set}.{k}: expected a number, got {other}"
                            )))
                        }
                    };
                    out.insert(k.clone(), x);
                }
                entries.insert((family, infoset), out);
            }
        }
        Ok(HyperparamTable { entries })
    }

    pub fn get(&self, family: Family, infoset: InfoSet) -> Option<&BTreeMap<String, f64>> {
        self.entries.get(&(family, infoset))
    }

    pub fn value(&self, family: Family, infoset: InfoSet, key: &str) -> Option<f64> {
        self.get(family, infoset)?.get(key).copied()
    }

    pub fn insert(&mut self, family: Family, infoset: InfoSet, params: BTreeMap<String, f64>) {
        self.entries.insert((family, infoset), params);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(Family, InfoSet), &BTreeMap<String, f64>)> {
        self.entries.iter()
    }

    /// Serializes back to the same layout.
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        for ((f, i), params) in &self.entries {
            out.push_str(&format!("[{}.{}]\n", f.as_str(), i.as_str()));
            for (k, v) in params {
                let key = if k.contains('.') { format!("\"{k}\"") } else { k.clone() };
                out.push_str(&format!("{key} = {v:?}\n"));
            }
            out.push('\n');
        }
        out
    }
}
