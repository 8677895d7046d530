use ddx_core::explain::{export_explanation, trace_attention, Explanation};
use ddx_core::model::{ModelConfig, ModelState, Pooling};
use ddx_core::records::{generate_dataset, serialize_record, tokenize, PathologyCatalog, Vocabulary};

fn sample(pooling: Pooling) -> (ModelState, Vec<u32>, Vec<String>) {
    let catalog = PathologyCatalog::builtin();
    let vocab = Vocabulary::from_catalog(&catalog);
    let record = &generate_dataset(&catalog, 1, 5).unwrap()[0];
    let t = tokenize(&serialize_record(record), &vocab, 128).unwrap();
    let mut config = ModelConfig::new(vocab.len());
    config.pooling = pooling;
    (ModelState::new(config, 3).unwrap(), t.ids, t.tokens)
}

#[test]
fn trace_keeps_first_middle_last_and_rows_are_causal_distributions() {
    let (model, ids, tokens) = sample(Pooling::Last);
    let trace = trace_attention(&model, &ids, &tokens).unwrap();
    let idx: Vec<usize> = trace.layers.iter().map(|l| l.layer_index).collect();
    assert_eq!(idx, vec![0, 2, 3]);
    let n = ids.len();
    for layer in &trace.layers {
        assert_eq!(layer.heads.len(), 4);
        for h in &layer.heads {
            for i in 0..n {
                let row = h.row(i);
                assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
                assert!(row[i + 1..].iter().all(|&w| w == 0.0));
            }
        }
    }
    assert_eq!(trace.saliency.len(), n);
    let max = trace.saliency.iter().cloned().fold(0.0f32, f32::max);
    assert_eq!(max, 1.0);
    assert!(trace.saliency.iter().all(|&s| (0.0..=1.0).contains(&s)));
}

#[test]
fn bos_pooling_saliency_sits_on_bos() {
    let (model, ids, tokens) = sample(Pooling::Bos);
    let trace = trace_attention(&model, &ids, &tokens).unwrap();
    assert_eq!(trace.saliency[0], 1.0);
    assert!(trace.saliency[1..].iter().all(|&s| s == 0.0));
}

#[test]
fn export_shape_and_precision() {
    let (model, ids, tokens) = sample(Pooling::Last);
    let trace = trace_attention(&model, &ids, &tokens).unwrap();
    let json = export_explanation(&trace).unwrap();
    let e: Explanation = serde_json::from_str(&json).unwrap();
    assert_eq!(e.tokens, tokens);
    assert_eq!(e.tokens[0], "<bos>");
    assert_eq!(e.layers.len(), 3);
    let n = tokens.len();
    for l in &e.layers {
        assert_eq!(l.heads.len(), 4);
        assert!(l.heads.iter().all(|h| h.len() == n && h.iter().all(|r| r.len() == n)));
    }
    for w in e.layers.iter().flat_map(|l| l.heads.iter().flatten().flatten()) {
        let digits: String = format!("{w:e}").chars().take_while(|&c| c != 'e').filter(char::is_ascii_digit).collect();
        assert!(digits.len() <= 6, "{w} has more than 6 significant digits");
    }
}

#[test]
fn mismatched_token_strings_are_rejected() {
    let (model, ids, tokens) = sample(Pooling::Last);
    assert!(trace_attention(&model, &ids, &tokens[1..]).is_err());
}
