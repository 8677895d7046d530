use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde_json::{Map, Value};

use super::{PatientRecord, RecordsError};

/// Every dataset line carries exactly these keys.
pub const RECORD_KEYS: [&str; 11] = [
    "age",
    "sex",
    "region",
    "symptoms",
    "pain_intensity",
    "pain_onset_speed",
    "pain_locations",
    "pain_precision",
    "history",
    "true_pathology",
    "differential",
];

pub fn save_dataset(path: &Path, records: &[PatientRecord]) -> Result<(), RecordsError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_dataset(&mut out, records)?;
    out.flush()?;
    Ok(())
}

pub fn write_dataset<W: Write>(mut out: W, records: &[PatientRecord]) -> Result<(), RecordsError> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Vec<PatientRecord>, RecordsError> {
    read_dataset(BufReader::new(File::open(path)?))
}

pub fn read_dataset<R: Read>(input: R) -> Result<Vec<PatientRecord>, RecordsError> {
    let mut records = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        records.push(parse_record_line(&line, i + 1)?);
    }
    Ok(records)
}

/// Parses and validates one dataset line; `line_no` is 1-based and only used in errors.
pub fn parse_record_line(line: &str, line_no: usize) -> Result<PatientRecord, RecordsError> {
    let line_err = |message: String| RecordsError::Line { line: line_no, message };
    let schema_err = |message: String| RecordsError::Schema { line: line_no, message };
    let object: Map<String, Value> = match serde_json::from_str(line) {
        Ok(Value::Object(map)) => map,
        Ok(_) => return Err(line_err("expected a JSON object".into())),
        Err(e) => return Err(line_err(e.to_string())),
    };
    if let Some(key) = RECORD_KEYS.iter().find(|k| !object.contains_key(**k)) {
        return Err(schema_err(format!("missing key {key:?}")));
    }
    if let Some(key) = object.keys().find(|k| !RECORD_KEYS.contains(&k.as_str())) {
        return Err(schema_err(format!("unexpected key {key:?}")));
    }
    let record: PatientRecord = serde_json::from_value(Value::Object(object)).map_err(|e| schema_err(e.to_string()))?;
    record.validate().map_err(|e| line_err(e.to_string()))?;
    Ok(record)
}
