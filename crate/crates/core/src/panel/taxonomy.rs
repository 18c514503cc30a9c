use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PanelError;

/// Regional grouping used for aggregation and the multilayer forests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Region {
    AdvancedEconomies,
    EMAsia,
    EMLatam,
    EMEurope,
    EMMENA,
}

impl Region {
    pub const ALL: [Region; 5] = [
        Region::AdvancedEconomies,
        Region::EMAsia,
        Region::EMLatam,
        Region::EMEurope,
        Region::EMMENA,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Region::AdvancedEconomies => "AdvancedEconomies",
            Region::EMAsia => "EMAsia",
            Region::EMLatam => "EMLatam",
            Region::EMEurope => "EMEurope",
            Region::EMMENA => "EMMENA",
        }
    }

    pub fn is_emerging(self) -> bool {
        self != Region::AdvancedEconomies
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Region {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "advancedeconomies" | "ae" | "advanced" => Ok(Region::AdvancedEconomies),
            "emasia" | "asia" => Ok(Region::EMAsia),
            "emlatam" | "latam" | "emlatinamerica" => Ok(Region::EMLatam),
            "emeurope" | "europe" => Ok(Region::EMEurope),
            "emmena" | "mena" => Ok(Region::EMMENA),
            _ => Err(format!("unknown region '{s}'")),
        }
    }
}

/// A country and its region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountryMeta {
    pub code: String,
    pub region: Region,
}

const BUILTIN: &[(&str, Region)] = &[
    ("AT", Region::AdvancedEconomies),
    ("AU", Region::AdvancedEconomies),
    ("BE", Region::AdvancedEconomies),
    ("CA", Region::AdvancedEconomies),
    ("DE", Region::AdvancedEconomies),
    ("DK", Region::AdvancedEconomies),
    ("ES", Region::AdvancedEconomies),
    ("FI", Region::AdvancedEconomies),
    ("FR", Region::AdvancedEconomies),
    ("GB", Region::AdvancedEconomies),
    ("IT", Region::AdvancedEconomies),
    ("JP", Region::AdvancedEconomies),
    ("NL", Region::AdvancedEconomies),
    ("NO", Region::AdvancedEconomies),
    ("SE", Region::AdvancedEconomies),
    ("US", Region::AdvancedEconomies),
    ("CN", Region::EMAsia),
    ("ID", Region::EMAsia),
    ("IN", Region::EMAsia),
    ("MY", Region::EMAsia),
    ("PH", Region::EMAsia),
    ("TH", Region::EMAsia),
    ("VN", Region::EMAsia),
    ("AR", Region::EMLatam),
    ("BR", Region::EMLatam),
    ("CL", Region::EMLatam),
    ("CO", Region::EMLatam),
    ("MX", Region::EMLatam),
    ("PE", Region::EMLatam),
    ("UY", Region::EMLatam),
    ("CZ", Region::EMEurope),
    ("HU", Region::EMEurope),
    ("PL", Region::EMEurope),
    ("RU", Region::EMEurope),
    ("TR", Region::EMEurope),
    ("UA", Region::EMEurope),
    ("EG", Region::EMMENA),
    ("IL", Region::EMMENA),
    ("JO", Region::EMMENA),
    ("MA", Region::EMMENA),
    ("QA", Region::EMMENA),
    ("SA", Region::EMMENA),
];

/// Country-code to region table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    map: BTreeMap<String, Region>,
}

impl Default for Taxonomy {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Taxonomy {
    /// The 42-country table shipped with the crate.
    pub fn builtin() -> Self {
        Taxonomy {
            map: BUILTIN.iter().map(|(c, r)| (c.to_string(), *r)).collect(),
        }
    }

    pub fn empty() -> Self {
        Taxonomy {
            map: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, code: impl Into<String>, region: Region) {
        self.map.insert(code.into(), region);
    }

    pub fn region(&self, code: &str) -> Option<Region> {
        self.map.get(code).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    /// Applies a `country,region` sidecar on top of the current table.
    pub fn with_overrides(mut self, path: &Path) -> Result<Self, PanelError> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| PanelError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| PanelError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let (Some(code), Some(region)) = (rec.get(0), rec.get(1)) else {
                return Err(PanelError::BadRow {
                    line,
                    message: "expected country,region".into(),
                });
            };
            let region = region
                .trim()
                .parse::<Region>()
                .map_err(|message| PanelError::BadRow { line, message })?;
            self.map.insert(code.trim().to_string(), region);
        }
        Ok(self)
    }
}
