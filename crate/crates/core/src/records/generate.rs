use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::{PathologyCatalog, PatientRecord, RecordsError, Sex};
use crate::model::N_PATHOLOGIES;

/// Chance that each characteristic symptom, antecedent or pain location is reported.
pub const KEEP_PROBABILITY: f64 = 0.9;
/// Mean number of unrelated symptoms added to each patient.
pub const DISTRACTOR_MEAN: f64 = 1.0;
/// Minimum evidence overlap for a pathology to enter the differential.
pub const JACCARD_THRESHOLD: f64 = 0.3;
pub const MAX_DIFFERENTIAL: usize = 10;

/// Draws `n_patients` records, fully determined by `(catalog, n_patients, seed)`.
///
/// True pathologies are dealt from successive shuffled rounds of all 49 ids,
/// so each id is equally likely for every record and class counts never
/// differ by more than one.
pub fn generate_dataset(
    catalog: &PathologyCatalog,
    n_patients: usize,
    seed: u64,
) -> Result<Vec<PatientRecord>, RecordsError> {
    if catalog.len() != N_PATHOLOGIES {
        return Err(RecordsError::Config(format!(
            "catalog has {} pathologies, expected {N_PATHOLOGIES}",
            catalog.len()
        )));
    }
    if n_patients == 0 {
        return Err(RecordsError::Validation("n_patients must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let poisson = Poisson::new(DISTRACTOR_MEAN).expect("positive mean");
    let profiles: Vec<BTreeSet<&str>> = catalog.pathologies.iter().map(|p| p.profile()).collect();

    let mut deck: Vec<usize> = Vec::new();
    let mut records = Vec::with_capacity(n_patients);
    for _ in 0..n_patients {
        if deck.is_empty() {
            deck = (0..N_PATHOLOGIES).collect();
            deck.shuffle(&mut rng);
        }
        let truth = deck.pop().expect("deck refilled");
        records.push(sample_patient(catalog, &profiles, truth, poisson, &mut rng));
    }
    Ok(records)
}

fn sample_patient(
    catalog: &PathologyCatalog,
    profiles: &[BTreeSet<&str>],
    truth: usize,
    poisson: Poisson<f64>,
    rng: &mut ChaCha8Rng,
) -> PatientRecord {
    let p = &catalog.pathologies[truth];
    let age = rng.random_range(p.age_range[0]..=p.age_range[1]);
    let sex = if rng.random_bool(0.5) { Sex::Male } else { Sex::Female };
    let region = catalog.regions.choose(rng).expect("regions non-empty").clone();

    let mut symptoms = keep_some(&p.symptoms, rng);
    let n_distractors = poisson.sample(rng) as usize;
    let unrelated: Vec<&String> = catalog.symptoms.iter().filter(|s| !p.symptoms.contains(s)).collect();
    for s in unrelated.choose_multiple(rng, n_distractors) {
        symptoms.insert((*s).clone());
    }
    let history: BTreeSet<String> =
        p.antecedents.iter().filter(|_| rng.random_bool(KEEP_PROBABILITY)).cloned().collect();

    let (pain_intensity, pain_onset_speed, pain_precision, pain_locations) = match &p.pain {
        Some(pain) => (
            Some(rng.random_range(pain.intensity[0]..=pain.intensity[1])),
            Some(rng.random_range(pain.onset[0]..=pain.onset[1])),
            Some(rng.random_range(pain.precision[0]..=pain.precision[1])),
            keep_some(&pain.locations, rng),
        ),
        None => (None, None, None, BTreeSet::new()),
    };

    let mut record = PatientRecord {
        age,
        sex,
        region,
        symptoms,
        pain_intensity,
        pain_onset_speed,
        pain_locations,
        pain_precision,
        history,
        true_pathology: truth,
        differential: Vec::new(),
    };
    record.differential = differential_for(&record.evidence(), profiles, truth);
    record
}

/// Keeps each code with [`KEEP_PROBABILITY`], falling back to one random code
/// so the result is never empty.
fn keep_some(codes: &[String], rng: &mut ChaCha8Rng) -> BTreeSet<String> {
    let mut kept: BTreeSet<String> = codes.iter().filter(|_| rng.random_bool(KEEP_PROBABILITY)).cloned().collect();
    if kept.is_empty() {
        kept.insert(codes.choose(rng).expect("non-empty codes").clone());
    }
    kept
}

pub(crate) fn jaccard(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Pathologies whose profile overlaps the evidence by at least
/// [`JACCARD_THRESHOLD`], most similar first (ties by id), capped at
/// [`MAX_DIFFERENTIAL`]. The truth replaces the last entry if it fell off.
pub(crate) fn differential_for(evidence: &BTreeSet<&str>, profiles: &[BTreeSet<&str>], truth: usize) -> Vec<usize> {
    let mut scored: Vec<(usize, f64)> = profiles
        .iter()
        .enumerate()
        .map(|(id, profile)| (id, jaccard(evidence, profile)))
        .filter(|&(id, score)| score >= JACCARD_THRESHOLD || id == truth)
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut ids: Vec<usize> = scored.iter().map(|&(id, _)| id).collect();
    if ids.len() > MAX_DIFFERENTIAL {
        let truth_rank = ids.iter().position(|&id| id == truth).expect("truth scored");
        ids.truncate(MAX_DIFFERENTIAL);
        if truth_rank >= MAX_DIFFERENTIAL {
            ids[MAX_DIFFERENTIAL - 1] = truth;
        }
    }
    ids
}

/// Number of records per true pathology.
pub fn class_counts(records: &[PatientRecord]) -> [usize; N_PATHOLOGIES] {
    let mut counts = [0; N_PATHOLOGIES];
    for r in records {
        counts[r.true_pathology] += 1;
    }
    counts
}
