//! Synthetic patient records, their questionnaire text form, the closed
//! vocabulary and the JSON-Lines dataset format.

mod catalog;
mod form;
mod generate;
mod io;
mod record;
mod vocab;

pub use catalog::{PainProfile, Pathology, PathologyCatalog};
pub use form::{parse_form, serialize_answers, serialize_record, Answers};
pub use generate::{
    class_counts, generate_dataset, DISTRACTOR_MEAN, JACCARD_THRESHOLD, KEEP_PROBABILITY, MAX_DIFFERENTIAL,
};
pub use io::{load_dataset, parse_record_line, read_dataset, save_dataset, write_dataset, RECORD_KEYS};
pub use record::{PatientRecord, Sex, MAX_AGE, MAX_SCALE};
pub use vocab::{split_words, tokenize, Tokenized, Vocabulary, BOS, PAD, UNK};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecordsError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid catalog: {0}")]
    Catalog(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("line {line}: schema error: {message}")]
    Schema { line: usize, message: String },
    #[error("cannot parse form text: {0}")]
    Form(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
