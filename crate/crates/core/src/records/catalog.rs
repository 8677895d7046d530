use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::record::MAX_SCALE;
use super::RecordsError;

const BUILTIN: &str = include_str!("../../resources/catalog.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PainProfile {
    pub intensity: [u8; 2],
    pub onset: [u8; 2],
    pub precision: [u8; 2],
    pub locations: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pathology {
    pub id: usize,
    pub name: String,
    pub age_range: [u32; 2],
    pub symptoms: Vec<String>,
    pub antecedents: Vec<String>,
    pub pain: Option<PainProfile>,
}

impl Pathology {
    /// Characteristic evidence: symptoms together with antecedents.
    pub fn profile(&self) -> BTreeSet<&str> {
        self.symptoms.iter().chain(&self.antecedents).map(String::as_str).collect()
    }
}

/// The closed world of codes a record may mention, plus one entry per pathology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathologyCatalog {
    pub version: u32,
    pub regions: Vec<String>,
    pub symptoms: Vec<String>,
    pub antecedents: Vec<String>,
    pub locations: Vec<String>,
    pub pathologies: Vec<Pathology>,
}

impl PathologyCatalog {
    /// The catalog shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN).expect("bundled catalog is valid")
    }

    pub fn builtin_json() -> &'static str {
        BUILTIN
    }

    pub fn from_json(text: &str) -> Result<Self, RecordsError> {
        let catalog: Self = serde_json::from_str(text).map_err(|e| RecordsError::Catalog(e.to_string()))?;
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn load(path: &Path) -> Result<Self, RecordsError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.pathologies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pathologies.is_empty()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.pathologies.get(id).map(|p| p.name.as_str())
    }

    pub fn is_region(&self, code: &str) -> bool {
        self.regions.iter().any(|r| r == code)
    }

    pub fn is_symptom(&self, code: &str) -> bool {
        self.symptoms.binary_search_by(|s| s.as_str().cmp(code)).is_ok()
    }

    pub fn is_antecedent(&self, code: &str) -> bool {
        self.antecedents.iter().any(|a| a == code)
    }

    pub fn is_location(&self, code: &str) -> bool {
        self.locations.iter().any(|l| l == code)
    }

    fn validate(&self) -> Result<(), RecordsError> {
        let err = |msg: String| Err(RecordsError::Catalog(msg));
        if self.regions.is_empty() {
            return err("no regions".into());
        }
        if !self.symptoms.windows(2).all(|w| w[0] < w[1]) {
            return err("symptom codes must be sorted and unique".into());
        }
        let lexicon = self.regions.iter().chain(&self.symptoms).chain(&self.antecedents).chain(&self.locations);
        for code in lexicon {
            if code.is_empty() || !code.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_') {
                return err(format!("code {code:?} is not a lowercase identifier"));
            }
        }
        for (i, p) in self.pathologies.iter().enumerate() {
            if p.id != i {
                return err(format!("pathology ids must be dense, found {} at index {i}", p.id));
            }
            if p.symptoms.is_empty() {
                return err(format!("pathology {i} has no symptoms"));
            }
            if p.age_range[0] > p.age_range[1] || p.age_range[1] > super::MAX_AGE {
                return err(format!("pathology {i} has a bad age range"));
            }
            if let Some(s) = p.symptoms.iter().find(|s| !self.is_symptom(s)) {
                return err(format!("pathology {i} names unknown symptom {s}"));
            }
            if let Some(a) = p.antecedents.iter().find(|a| !self.is_antecedent(a)) {
                return err(format!("pathology {i} names unknown antecedent {a}"));
            }
            if let Some(pain) = &p.pain {
                for range in [pain.intensity, pain.onset, pain.precision] {
                    if range[0] > range[1] || range[1] > MAX_SCALE {
                        return err(format!("pathology {i} has a bad pain range"));
                    }
                }
                if pain.locations.is_empty() {
                    return err(format!("pathology {i} has pain without locations"));
                }
                if let Some(l) = pain.locations.iter().find(|l| !self.is_location(l)) {
                    return err(format!("pathology {i} names unknown location {l}"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_has_49_dense_entries() {
        let c = PathologyCatalog::builtin();
        assert_eq!(c.len(), 49);
        assert!(c.pathologies.iter().enumerate().all(|(i, p)| p.id == i));
        assert!(c.pathologies.iter().all(|p| !p.symptoms.is_empty()));
    }

    #[test]
    fn rejects_sparse_ids_and_unknown_codes() {
        let mut c = PathologyCatalog::builtin();
        c.pathologies[3].id = 7;
        let text = serde_json::to_string(&c).unwrap();
        assert!(matches!(PathologyCatalog::from_json(&text), Err(RecordsError::Catalog(_))));

        let mut c = PathologyCatalog::builtin();
        c.pathologies[0].symptoms.push("no_such_symptom".into());
        let text = serde_json::to_string(&c).unwrap();
        assert!(PathologyCatalog::from_json(&text).is_err());
    }
}
