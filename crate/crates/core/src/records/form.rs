//! The eight-question answer form and its single-line text rendering.
//!
//! ```text
//! age 34 . sex female . region europe . symptoms cough , fever . pain intensity none onset none .
//! locations none precision none . detail none . history smoking .
//! ```

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{PatientRecord, RecordsError, Sex, MAX_AGE, MAX_SCALE};

const NONE: &str = "none";

/// Structured answers to the questionnaire, in question order.
///
/// List entries are catalog codes when recognised and free phrases otherwise.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answers {
    pub age: u32,
    pub sex: Sex,
    pub region: String,
    pub symptoms: Vec<String>,
    pub pain_intensity: Option<u8>,
    pub pain_onset_speed: Option<u8>,
    pub pain_locations: Vec<String>,
    pub pain_precision: Option<u8>,
    pub detail: Option<String>,
    pub history: Vec<String>,
}

impl From<&PatientRecord> for Answers {
    fn from(r: &PatientRecord) -> Self {
        Self {
            age: r.age,
            sex: r.sex,
            region: r.region.clone(),
            symptoms: r.symptoms.iter().cloned().collect(),
            pain_intensity: r.pain_intensity,
            pain_onset_speed: r.pain_onset_speed,
            pain_locations: r.pain_locations.iter().cloned().collect(),
            pain_precision: r.pain_precision,
            detail: None,
            history: r.history.iter().cloned().collect(),
        }
    }
}

pub fn serialize_record(record: &PatientRecord) -> String {
    serialize_answers(&Answers::from(record))
}

pub fn serialize_answers(a: &Answers) -> String {
    format!(
        "age {} . sex {} . region {} . symptoms {} . pain intensity {} onset {} . locations {} precision {} . detail {} . history {} .",
        a.age,
        a.sex,
        a.region,
        list(&a.symptoms),
        scale(a.pain_intensity),
        scale(a.pain_onset_speed),
        list(&a.pain_locations),
        scale(a.pain_precision),
        a.detail.as_deref().map(collapse).filter(|d| !d.is_empty()).unwrap_or_else(|| NONE.into()),
        list(&a.history),
    )
}

fn collapse(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn list(items: &[String]) -> String {
    let items: Vec<String> = items.iter().map(|s| collapse(s)).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        NONE.into()
    } else {
        items.join(" , ")
    }
}

fn scale(v: Option<u8>) -> String {
    v.map_or_else(|| NONE.into(), |v| v.to_string())
}

static FORM: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(concat!(
        r"^age (\S+) \. sex (\S+) \. region (\S+) \. symptoms (.+?) \. ",
        r"pain intensity (\S+) onset (\S+) \. locations (.+?) precision (\S+) \. ",
        r"detail (.+) \. history (.+?) \.$",
    ))
    .expect("static pattern")
});

/// Inverse of [`serialize_answers`] for text it produced.
pub fn parse_form(text: &str) -> Result<Answers, RecordsError> {
    let caps = FORM
        .captures(text.trim())
        .ok_or_else(|| RecordsError::Form("text does not follow the form template".into()))?;
    let age: u32 = caps[1]
        .parse()
        .ok()
        .filter(|&a| a <= MAX_AGE)
        .ok_or_else(|| RecordsError::Form(format!("bad age {:?}", &caps[1])))?;
    let sex: Sex = caps[2].parse().map_err(|_| RecordsError::Form(format!("bad sex {:?}", &caps[2])))?;
    Ok(Answers {
        age,
        sex,
        region: caps[3].to_string(),
        symptoms: parse_list(&caps[4]),
        pain_intensity: parse_scale(&caps[5])?,
        pain_onset_speed: parse_scale(&caps[6])?,
        pain_locations: parse_list(&caps[7]),
        pain_precision: parse_scale(&caps[8])?,
        detail: (&caps[9] != NONE).then(|| caps[9].to_string()),
        history: parse_list(&caps[10]),
    })
}

fn parse_list(text: &str) -> Vec<String> {
    if text == NONE {
        Vec::new()
    } else {
        text.split(" , ").map(str::to_string).collect()
    }
}

fn parse_scale(text: &str) -> Result<Option<u8>, RecordsError> {
    if text == NONE {
        return Ok(None);
    }
    text.parse::<u8>()
        .ok()
        .filter(|&v| v <= MAX_SCALE)
        .map(Some)
        .ok_or_else(|| RecordsError::Form(format!("bad scale value {text:?}")))
}
