use std::collections::{BTreeSet, HashMap};

use serde::Serialize;

use super::{PathologyCatalog, RecordsError, MAX_AGE};

pub const BOS: u32 = 0;
pub const PAD: u32 = 1;
pub const UNK: u32 = 2;

const SPECIALS: [&str; 3] = ["<bos>", "<pad>", "<unk>"];
const TEMPLATE_WORDS: &[&str] = &[
    ".",
    ",",
    "age",
    "sex",
    "male",
    "female",
    "region",
    "symptoms",
    "pain",
    "intensity",
    "onset",
    "locations",
    "precision",
    "detail",
    "history",
    "none",
];

/// Closed token vocabulary built from the form template and a catalog's codes.
///
/// Ids are assigned as the three specials followed by every other token in
/// sorted order, so the same catalog always yields the same mapping.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn from_catalog(catalog: &PathologyCatalog) -> Self {
        let mut words: BTreeSet<String> = TEMPLATE_WORDS.iter().map(|w| w.to_string()).collect();
        words.extend((0..=MAX_AGE).map(|n| n.to_string()));
        let codes =
            catalog.regions.iter().chain(&catalog.symptoms).chain(&catalog.antecedents).chain(&catalog.locations);
        for code in codes {
            words.insert(code.clone());
            // Parts of compound codes, so free text such as "chest pain" stays in vocabulary.
            words.extend(code.split('_').filter(|p| !p.is_empty()).map(str::to_string));
        }
        let tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).chain(words).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Lowercases `text` and splits it into runs of `[a-z0-9_]` plus single
/// characters for everything else that is not whitespace.
pub fn split_words(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    let mut word = String::new();
    for c in lower.chars() {
        if c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Tokenized {
    pub ids: Vec<u32>,
    /// Surface form of each id, `<bos>` first.
    pub tokens: Vec<String>,
    /// Words dropped to fit `max_len`.
    pub truncated: usize,
    pub unknown: usize,
}

/// BOS followed by one id per word of [`split_words`], cut to `max_len` ids.
pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<Tokenized, RecordsError> {
    if max_len == 0 {
        return Err(RecordsError::Validation("max_len must be at least 1".into()));
    }
    let words = split_words(text);
    if words.is_empty() {
        return Err(RecordsError::Validation("text is empty".into()));
    }
    let keep = words.len().min(max_len - 1);
    let mut ids = Vec::with_capacity(keep + 1);
    let mut tokens = Vec::with_capacity(keep + 1);
    ids.push(BOS);
    tokens.push(SPECIALS[0].to_string());
    let mut unknown = 0;
    for w in words.iter().take(keep) {
        let id = vocab.id(w).unwrap_or_else(|| {
            unknown += 1;
            UNK
        });
        ids.push(id);
        tokens.push(w.clone());
    }
    Ok(Tokenized { ids, tokens, truncated: words.len() - keep, unknown })
}
