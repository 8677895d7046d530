use std::collections::BTreeSet;

use ddx_core::records::{
    class_counts, generate_dataset, load_dataset, parse_form, read_dataset, save_dataset, serialize_record,
    split_words, tokenize, write_dataset, Answers, PathologyCatalog, PatientRecord, Vocabulary, BOS, UNK,
};
use proptest::prelude::*;

fn catalog() -> PathologyCatalog {
    PathologyCatalog::builtin()
}

#[test]
fn generation_is_deterministic() {
    let c = catalog();
    assert_eq!(generate_dataset(&c, 1, 9).unwrap(), generate_dataset(&c, 1, 9).unwrap());
    assert_eq!(generate_dataset(&c, 300, 4).unwrap(), generate_dataset(&c, 300, 4).unwrap());
    assert_ne!(generate_dataset(&c, 300, 4).unwrap(), generate_dataset(&c, 300, 5).unwrap());
}

#[test]
fn labels_are_sane_over_10k_records() {
    let c = catalog();
    let records = generate_dataset(&c, 10_000, 3).unwrap();
    let mut lengths = BTreeSet::new();
    for r in &records {
        r.validate().unwrap();
        assert!(r.differential.contains(&r.true_pathology));
        assert!((1..=10).contains(&r.differential.len()));
        lengths.insert(r.differential.len());
        assert!(c.is_region(&r.region));
        assert!(r.symptoms.iter().all(|s| c.is_symptom(s)));
        assert!(r.history.iter().all(|h| c.is_antecedent(h)));
        assert!(r.pain_locations.iter().all(|l| c.is_location(l)));
        let p = &c.pathologies[r.true_pathology];
        assert!((p.age_range[0]..=p.age_range[1]).contains(&r.age));
    }
    for n in 1..=7 {
        assert!(lengths.contains(&n), "no differential of length {n}: {lengths:?}");
    }
    let expected = 10_000.0 / 49.0;
    for count in class_counts(&records) {
        assert!((count as f64 - expected).abs() <= 0.2 * expected);
    }
}

#[test]
fn serialization_round_trips_structured_fields() {
    for r in generate_dataset(&catalog(), 1000, 11).unwrap() {
        let text = serialize_record(&r);
        assert_eq!(parse_form(&text).unwrap(), Answers::from(&r));
        assert_eq!(serialize_record(&r), text);
    }
}

#[test]
fn serialization_hides_labels_and_is_local() {
    let c = catalog();
    let r = generate_dataset(&c, 1, 2).unwrap().remove(0);
    let text = serialize_record(&r);
    for p in &c.pathologies {
        assert!(!text.to_lowercase().contains(&p.name.to_lowercase()));
    }
    let mut older = r.clone();
    older.age = if r.age == 50 { 51 } else { 50 };
    let other = serialize_record(&older);
    let (a, b): (Vec<_>, Vec<_>) = text.split(" . ").zip(other.split(" . ")).filter(|(x, y)| x != y).unzip();
    assert_eq!(a.len(), 1);
    assert!(a[0].starts_with("age ") && b[0].starts_with("age "));
}

#[test]
fn generated_records_never_produce_unknown_tokens() {
    let c = catalog();
    let vocab = Vocabulary::from_catalog(&c);
    let mut longest = 0;
    for r in generate_dataset(&c, 2000, 8).unwrap() {
        let t = tokenize(&serialize_record(&r), &vocab, 128).unwrap();
        assert_eq!(t.unknown, 0);
        assert!(!t.ids.contains(&UNK));
        assert_eq!(t.truncated, 0);
        longest = longest.max(t.ids.len());
    }
    assert!(longest <= 128);
}

#[test]
fn dataset_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.jsonl");
    let records = generate_dataset(&catalog(), 1000, 5).unwrap();
    save_dataset(&path, &records).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), records);

    save_dataset(&path, &[]).unwrap();
    assert_eq!(std::fs::read(&path).unwrap().len(), 0);
    assert!(load_dataset(&path).unwrap().is_empty());
}

fn arb_record() -> impl Strategy<Value = PatientRecord> {
    let c = catalog();
    let symptoms = prop::sample::subsequence(c.symptoms.clone(), 0..8);
    let locations = prop::sample::subsequence(c.locations.clone(), 0..4);
    let history = prop::sample::subsequence(c.antecedents.clone(), 0..4);
    let region = prop::sample::select(c.regions.clone());
    let scale = prop::option::of(0u8..=10);
    (
        0u32..=120,
        any::<bool>(),
        region,
        symptoms,
        (scale.clone(), scale.clone(), scale),
        locations,
        history,
        prop::sample::subsequence((0..49usize).collect::<Vec<_>>(), 1..=10).prop_shuffle(),
        any::<prop::sample::Index>(),
    )
        .prop_map(|(age, male, region, s, (i, o, p), l, h, differential, pick)| PatientRecord {
            age,
            sex: if male { ddx_core::records::Sex::Male } else { ddx_core::records::Sex::Female },
            region,
            symptoms: s.into_iter().collect(),
            pain_intensity: i,
            pain_onset_speed: o,
            pain_locations: l.into_iter().collect(),
            pain_precision: p,
            history: h.into_iter().collect(),
            true_pathology: *pick.get(&differential),
            differential,
        })
}

proptest! {
    #[test]
    fn distinct_answers_serialize_distinctly(a in arb_record(), b in arb_record()) {
        let (fa, fb) = (Answers::from(&a), Answers::from(&b));
        prop_assert_eq!(fa == fb, serialize_record(&a) == serialize_record(&b));
    }

    #[test]
    fn jsonl_round_trip_is_field_exact(records in prop::collection::vec(arb_record(), 0..8)) {
        let mut buf = Vec::new();
        write_dataset(&mut buf, &records).unwrap();
        prop_assert_eq!(read_dataset(&buf[..]).unwrap(), records);
    }

    #[test]
    fn token_count_matches_the_splitter(text in "\\PC{0,80}") {
        let vocab = Vocabulary::from_catalog(&catalog());
        let words = split_words(&text);
        match tokenize(&text, &vocab, 1024) {
            Ok(t) => {
                prop_assert_eq!(t.ids[0], BOS);
                prop_assert_eq!(t.ids.len(), words.len() + 1);
                prop_assert_eq!(t.tokens.len(), t.ids.len());
            }
            Err(_) => prop_assert!(words.is_empty()),
        }
    }

    #[test]
    fn truncation_keeps_a_prefix(text in "[a-z ,.]{1,200}", max_len in 1usize..40) {
        let vocab = Vocabulary::from_catalog(&catalog());
        if let Ok(full) = tokenize(&text, &vocab, 4096) {
            let cut = tokenize(&text, &vocab, max_len).unwrap();
            prop_assert!(cut.ids.len() <= max_len);
            prop_assert_eq!(&full.ids[..cut.ids.len()], &cut.ids[..]);
            prop_assert_eq!(cut.truncated, full.ids.len() - cut.ids.len());
        }
    }
}
