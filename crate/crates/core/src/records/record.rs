use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::RecordsError;
use crate::model::N_PATHOLOGIES;

pub const MAX_AGE: u32 = 120;
pub const MAX_SCALE: u8 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Male => "male",
            Sex::Female => "female",
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sex {
    type Err = RecordsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "male" => Ok(Sex::Male),
            "female" => Ok(Sex::Female),
            other => Err(RecordsError::Validation(format!("unknown sex {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientRecord {
    pub age: u32,
    pub sex: Sex,
    pub region: String,
    pub symptoms: BTreeSet<String>,
    pub pain_intensity: Option<u8>,
    pub pain_onset_speed: Option<u8>,
    pub pain_locations: BTreeSet<String>,
    pub pain_precision: Option<u8>,
    pub history: BTreeSet<String>,
    pub true_pathology: usize,
    /// Distinct pathology ids, most similar first.
    pub differential: Vec<usize>,
}

impl PatientRecord {
    /// Checks the label and range invariants that hold independently of any catalog.
    pub fn validate(&self) -> Result<(), RecordsError> {
        let err = |msg: String| Err(RecordsError::Validation(msg));
        if self.age > MAX_AGE {
            return err(format!("age {} exceeds {MAX_AGE}", self.age));
        }
        let scales = [
            ("pain_intensity", self.pain_intensity),
            ("pain_onset_speed", self.pain_onset_speed),
            ("pain_precision", self.pain_precision),
        ];
        for (name, v) in scales {
            if v.is_some_and(|v| v > MAX_SCALE) {
                return err(format!("{name} must lie in 0..={MAX_SCALE}"));
            }
        }
        if self.true_pathology >= N_PATHOLOGIES {
            return err(format!("true_pathology {} out of range", self.true_pathology));
        }
        if self.differential.is_empty() || self.differential.len() > 10 {
            return err(format!("differential length {} outside 1..=10", self.differential.len()));
        }
        if let Some(&id) = self.differential.iter().find(|&&id| id >= N_PATHOLOGIES) {
            return err(format!("differential id {id} out of range"));
        }
        let distinct: BTreeSet<_> = self.differential.iter().collect();
        if distinct.len() != self.differential.len() {
            return err("differential entries must be distinct".into());
        }
        if !distinct.contains(&self.true_pathology) {
            return err("true_pathology missing from differential".into());
        }
        Ok(())
    }

    /// Symptoms together with history: the evidence compared against pathology profiles.
    pub fn evidence(&self) -> BTreeSet<&str> {
        self.symptoms.iter().chain(&self.history).map(String::as_str).collect()
    }

    /// Multi-hot encoding of the differential over all pathologies.
    pub fn differential_targets(&self) -> [f32; N_PATHOLOGIES] {
        let mut t = [0.0; N_PATHOLOGIES];
        for &id in &self.differential {
            t[id] = 1.0;
        }
        t
    }
}
