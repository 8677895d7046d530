//! Free-text questionnaire answers to structured [`Answers`].

use std::collections::BTreeMap;
use std::sync::LazyLock;

use ddx_core::records::{Answers, PathologyCatalog, Sex, MAX_AGE, MAX_SCALE};
use regex::Regex;
use serde::{Deserialize, Serialize};

pub const QUESTION_KEYS: [&str; 8] = ["q1", "q2", "q3", "q4", "q5", "q6", "q7", "q8"];
pub const FREE_TEXT_LIMIT: usize = 512;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Submission {
    pub answers: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f32>,
    #[serde(default)]
    pub explain: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub reason: String,
}

impl FieldError {
    fn new(field: &str, reason: impl Into<String>) -> Self {
        Self { field: field.into(), reason: reason.into() }
    }
}

static AGE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*(\d{1,3})\s*$").unwrap());
static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"-?\d+(?:\.\d+)?").unwrap());
static TRAILING_NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(-?\d+(?:\.\d+)?)\s*$").unwrap());
static SEPARATORS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[,;]").unwrap());

fn collapse(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn truncate_chars(text: &str, limit: usize) -> &str {
    match text.char_indices().nth(limit) {
        Some((i, _)) => &text[..i],
        None => text,
    }
}

fn is_none(text: &str) -> bool {
    matches!(text.trim().to_lowercase().as_str(), "" | "none")
}

/// Lowercased, whitespace-collapsed phrase; catalog code when one matches.
fn phrase(raw: &str, is_code: impl Fn(&str) -> bool) -> String {
    let p = collapse(&raw.to_lowercase());
    let code = p.replace([' ', '-'], "_");
    if is_code(&code) {
        code
    } else {
        p
    }
}

fn phrase_list(raw: &str, is_code: impl Fn(&str) -> bool) -> Vec<String> {
    SEPARATORS.split(raw).map(|p| phrase(p, &is_code)).filter(|p| !p.is_empty() && p != "none").collect()
}

fn scale(text: &str) -> Option<u8> {
    text.parse().ok().filter(|&v| v <= MAX_SCALE)
}

fn parse_age(raw: &str) -> Result<u32, FieldError> {
    AGE.captures(raw)
        .and_then(|c| c[1].parse::<u32>().ok())
        .filter(|&a| a <= MAX_AGE)
        .ok_or_else(|| FieldError::new("q1", format!("not an integer 0–{MAX_AGE}")))
}

fn parse_sex(raw: &str) -> Result<Sex, FieldError> {
    match raw.trim().to_lowercase().as_str() {
        "male" | "m" | "man" => Ok(Sex::Male),
        "female" | "f" | "woman" => Ok(Sex::Female),
        _ => Err(FieldError::new("q2", format!("{:?} is not one of male, female", raw.trim()))),
    }
}

fn parse_region(raw: &str, catalog: &PathologyCatalog) -> Result<String, FieldError> {
    let code = phrase(raw, |c| catalog.is_region(c));
    if catalog.is_region(&code) {
        Ok(code)
    } else {
        Err(FieldError::new("q3", format!("{:?} is not a known region ({})", raw.trim(), catalog.regions.join(", "))))
    }
}

fn parse_pain(raw: &str) -> Result<(Option<u8>, Option<u8>), FieldError> {
    if is_none(raw) {
        return Ok((None, None));
    }
    let numbers: Vec<&str> = NUMBER.find_iter(raw).map(|m| m.as_str()).collect();
    let leftover = NUMBER.replace_all(raw, "");
    let only_separators = leftover.chars().all(|c| c.is_whitespace() || ",;/".contains(c));
    let bad =
        || FieldError::new("q5", format!("{:?} is not two integers 0–{MAX_SCALE} (intensity, onset)", raw.trim()));
    if numbers.len() != 2 || !only_separators {
        return Err(bad());
    }
    match (scale(numbers[0]), scale(numbers[1])) {
        (Some(i), Some(o)) => Ok((Some(i), Some(o))),
        _ => Err(bad()),
    }
}

fn parse_locations(raw: &str, catalog: &PathologyCatalog) -> Result<(Vec<String>, Option<u8>), FieldError> {
    if is_none(raw) {
        return Ok((Vec::new(), None));
    }
    let bad = || {
        FieldError::new(
            "q6",
            format!("{:?} is not a location list followed by one precision 0–{MAX_SCALE}", raw.trim()),
        )
    };
    let (rest, precision) = match TRAILING_NUMBER.captures(raw) {
        Some(c) => {
            let m = c.get(1).unwrap();
            (&raw[..m.start()], Some(scale(m.as_str()).ok_or_else(bad)?))
        }
        None => (raw, None),
    };
    if rest.chars().any(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    Ok((phrase_list(rest, |c| catalog.is_location(c)), precision))
}

fn parse_detail(raw: &str) -> Option<String> {
    let d = collapse(truncate_chars(&collapse(raw), FREE_TEXT_LIMIT));
    (!d.is_empty()).then_some(d)
}

fn parse_history(raw: &str, catalog: &PathologyCatalog) -> Vec<String> {
    let mut items = phrase_list(truncate_chars(raw, FREE_TEXT_LIMIT), |c| catalog.is_antecedent(c));
    while render_list(&items).chars().count() > FREE_TEXT_LIMIT {
        items.pop();
    }
    items
}

fn render_list(items: &[String]) -> String {
    if items.is_empty() {
        "none".into()
    } else {
        items.join(", ")
    }
}

/// Records a parse error unless the key was absent (already reported as missing).
fn keep<T>(errors: &mut Vec<FieldError>, present: bool, r: Result<T, FieldError>) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            if present {
                errors.push(e);
            }
            None
        }
    }
}

/// Validates every answer and maps it to structured form. All field errors
/// are reported together, in question order.
pub fn validate_and_normalize(
    answers: &BTreeMap<String, String>,
    catalog: &PathologyCatalog,
) -> Result<Answers, Vec<FieldError>> {
    let mut errors: Vec<FieldError> = QUESTION_KEYS
        .iter()
        .filter(|k| !answers.contains_key(**k))
        .map(|k| FieldError::new(k, "missing answer"))
        .collect();
    errors.extend(
        answers.keys().filter(|k| !QUESTION_KEYS.contains(&k.as_str())).map(|k| FieldError::new(k, "unknown question")),
    );
    let get = |k: &str| answers.get(k).map(String::as_str).unwrap_or("");
    let present = |k: &str| answers.contains_key(k);
    let age = keep(&mut errors, present("q1"), parse_age(get("q1")));
    let sex = keep(&mut errors, present("q2"), parse_sex(get("q2")));
    let region = keep(&mut errors, present("q3"), parse_region(get("q3"), catalog));
    let symptoms = phrase_list(get("q4"), |c| catalog.is_symptom(c));
    let pain = keep(&mut errors, present("q5"), parse_pain(get("q5")));
    let locations = keep(&mut errors, present("q6"), parse_locations(get("q6"), catalog));
    let detail = parse_detail(get("q7"));
    let history = parse_history(get("q8"), catalog);

    errors.sort_by_key(|e| QUESTION_KEYS.iter().position(|k| *k == e.field).unwrap_or(usize::MAX));
    match (age, sex, region, pain, locations) {
        (Some(age), Some(sex), Some(region), Some(pain), Some(locations)) if errors.is_empty() => Ok(Answers {
            age,
            sex,
            region,
            symptoms,
            pain_intensity: pain.0,
            pain_onset_speed: pain.1,
            pain_locations: locations.0,
            pain_precision: locations.1,
            detail,
            history,
        }),
        _ => Err(errors),
    }
}

/// Renders structured answers back as q1..q8 text that normalizes to the same value.
pub fn render_answers(a: &Answers) -> BTreeMap<String, String> {
    let pain = match (a.pain_intensity, a.pain_onset_speed) {
        (Some(i), Some(o)) => format!("{i}, {o}"),
        _ => "none".into(),
    };
    let locations = match (a.pain_locations.is_empty(), a.pain_precision) {
        (true, None) => "none".into(),
        (true, Some(p)) => p.to_string(),
        (false, None) => a.pain_locations.join(", "),
        (false, Some(p)) => format!("{}; {p}", a.pain_locations.join(", ")),
    };
    [
        a.age.to_string(),
        a.sex.as_str().to_string(),
        a.region.clone(),
        render_list(&a.symptoms),
        pain,
        locations,
        a.detail.clone().unwrap_or_default(),
        render_list(&a.history),
    ]
    .into_iter()
    .zip(QUESTION_KEYS)
    .map(|(v, k)| (k.to_string(), v))
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> BTreeMap<String, String> {
        [
            ("q1", "34"),
            ("q2", "Female"),
            ("q3", "Europe"),
            ("q4", "Cough, fever, strange  tingling"),
            ("q5", "6, 3"),
            ("q6", "Chest, upper back; 7"),
            ("q7", "  started   two days ago "),
            ("q8", "Smoking, allergy to cats"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
    }

    #[test]
    fn valid_answers_normalize() {
        let a = validate_and_normalize(&base(), &PathologyCatalog::builtin()).unwrap();
        assert_eq!(a.age, 34);
        assert_eq!(a.sex, Sex::Female);
        assert_eq!(a.region, "europe");
        assert_eq!(a.symptoms, vec!["cough", "fever", "strange tingling"]);
        assert_eq!((a.pain_intensity, a.pain_onset_speed, a.pain_precision), (Some(6), Some(3), Some(7)));
        assert_eq!(a.pain_locations, vec!["chest", "upper_back"]);
        assert_eq!(a.detail.as_deref(), Some("started two days ago"));
        assert_eq!(a.history, vec!["smoking", "allergy to cats"]);
    }

    #[test]
    fn word_age_is_a_field_error() {
        let mut s = base();
        s.insert("q1".into(), "thirty".into());
        let errs = validate_and_normalize(&s, &PathologyCatalog::builtin()).unwrap_err();
        assert_eq!(errs, vec![FieldError::new("q1", "not an integer 0–120")]);
    }

    #[test]
    fn several_errors_are_reported_in_order() {
        let mut s = base();
        s.remove("q2");
        s.insert("q6".into(), "chest 11".into());
        s.insert("q5".into(), "7".into());
        s.insert("q1".into(), "121".into());
        let errs = validate_and_normalize(&s, &PathologyCatalog::builtin()).unwrap_err();
        let fields: Vec<&str> = errs.iter().map(|e| e.field.as_str()).collect();
        assert_eq!(fields, vec!["q1", "q2", "q5", "q6"]);
        assert_eq!(errs[1].reason, "missing answer");
        assert!(errs[3].reason.contains("chest 11"));
    }

    #[test]
    fn none_answers() {
        let mut s = base();
        for k in ["q4", "q5", "q6", "q7", "q8"] {
            s.insert(k.into(), "none".into());
        }
        let a = validate_and_normalize(&s, &PathologyCatalog::builtin()).unwrap();
        assert!(a.symptoms.is_empty() && a.pain_locations.is_empty() && a.history.is_empty());
        assert_eq!((a.pain_intensity, a.pain_precision), (None, None));
    }

    #[test]
    fn free_text_is_capped() {
        let mut s = base();
        s.insert("q7".into(), "x".repeat(2000));
        s.insert("q8".into(), "ab,".repeat(400));
        let a = validate_and_normalize(&s, &PathologyCatalog::builtin()).unwrap();
        assert_eq!(a.detail.unwrap().len(), FREE_TEXT_LIMIT);
        assert!(render_list(&a.history).len() <= FREE_TEXT_LIMIT);
    }

    #[test]
    fn rendering_round_trips() {
        let catalog = PathologyCatalog::builtin();
        let a = validate_and_normalize(&base(), &catalog).unwrap();
        assert_eq!(validate_and_normalize(&render_answers(&a), &catalog).unwrap(), a);
    }
}
