use ddx_core::eval::{
    gtpa, metrics_from_counts, predict_ddx_set, score_ddx, score_pathology, sweep_logits, write_sweep_csv, Averaging,
    ConfusionCounts,
};
use ddx_core::train::Example;
use proptest::prelude::*;

/// Counts by enumerating every (patient, class) decision.
fn brute_counts(pred: &[Vec<bool>], actual: &[Vec<bool>]) -> (u64, u64, u64, u64) {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (p_row, a_row) in pred.iter().zip(actual) {
        for (&p, &a) in p_row.iter().zip(a_row) {
            match (p, a) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
    }
    (tp, fp, tn, fn_)
}

fn safe_div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

fn to_mask(ids: &[usize], n: usize) -> Vec<bool> {
    (0..n).map(|i| ids.contains(&i)).collect()
}

fn sets(n: usize) -> impl Strategy<Value = Vec<Vec<usize>>> {
    prop::collection::vec(prop::collection::btree_set(0usize..49, 0..8), n)
        .prop_map(|v| v.into_iter().map(|s| s.into_iter().collect()).collect())
}

proptest! {
    #[test]
    fn metrics_bounded_and_f1_consistent(tp in 0u64..200, fp in 0u64..200, tn in 0u64..200, fn_ in 0u64..200) {
        let c = ConfusionCounts { tp, fp, tn, fn_ };
        prop_assume!(c.total() > 0);
        let m = metrics_from_counts(&c).unwrap();
        for v in [m.accuracy, m.precision, m.recall, m.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if m.precision + m.recall > 0.0 {
            let h = 2.0 * m.precision * m.recall / (m.precision + m.recall);
            prop_assert!((m.f1 - h).abs() <= 1e-12);
        }
    }

    #[test]
    fn counts_merge_is_additive(a in any::<[u16; 4]>(), b in any::<[u16; 4]>()) {
        let c = |x: [u16; 4]| ConfusionCounts { tp: x[0].into(), fp: x[1].into(), tn: x[2].into(), fn_: x[3].into() };
        prop_assert_eq!(c(a).merge(c(b)).total(), c(a).total() + c(b).total());
        prop_assert_eq!(c(a).merge(c(b)), c(b).merge(c(a)));
    }

    #[test]
    fn ddx_scores_match_brute_force((pred, actual, truths) in (1usize..20).prop_flat_map(|n| {
        (sets(n), sets(n).prop_map(|v| v.into_iter().map(|mut s| { if s.is_empty() { s.push(0) } s }).collect::<Vec<_>>()))
    }).prop_flat_map(|(p, a)| {
        let truths = a.iter().map(|s: &Vec<usize>| prop::sample::select(s.clone())).collect::<Vec<_>>();
        (Just(p), Just(a), truths)
    })) {
        let r = score_ddx(&pred, &actual, &truths, 0.5, Averaging::Micro).unwrap();
        let pm: Vec<_> = pred.iter().map(|s| to_mask(s, 49)).collect();
        let am: Vec<_> = actual.iter().map(|s| to_mask(s, 49)).collect();
        let (tp, fp, tn, fn_) = brute_counts(&pm, &am);
        let (tp, fp, tn, fn_) = (tp as f64, fp as f64, tn as f64, fn_ as f64);
        let p = safe_div(tp, tp + fp);
        let rc = safe_div(tp, tp + fn_);
        prop_assert!((r.precision - p).abs() < 1e-12);
        prop_assert!((r.recall - rc).abs() < 1e-12);
        prop_assert!((r.f1 - safe_div(2.0 * p * rc, p + rc)).abs() < 1e-12);
        prop_assert!((r.accuracy - (tp + tn) / (tp + fp + tn + fn_)).abs() < 1e-12);
        let hits = pred.iter().zip(&truths).filter(|(s, t)| s.contains(t)).count();
        prop_assert_eq!(r.gtpa, Some(hits as f64 / truths.len() as f64));

        // Macro: mean of per-class brute-force P and R.
        let m = score_ddx(&pred, &actual, &truths, 0.5, Averaging::Macro).unwrap();
        let (mut ps, mut rs) = (0.0, 0.0);
        for class in 0..49 {
            let col_p: Vec<Vec<bool>> = pm.iter().map(|r| vec![r[class]]).collect();
            let col_a: Vec<Vec<bool>> = am.iter().map(|r| vec![r[class]]).collect();
            let (tp, fp, _, fn_) = brute_counts(&col_p, &col_a);
            ps += safe_div(tp as f64, (tp + fp) as f64);
            rs += safe_div(tp as f64, (tp + fn_) as f64);
        }
        prop_assert!((m.precision - ps / 49.0).abs() < 1e-12);
        prop_assert!((m.recall - rs / 49.0).abs() < 1e-12);
        if m.precision + m.recall > 0.0 {
            prop_assert!((m.f1 - 2.0 * m.precision * m.recall / (m.precision + m.recall)).abs() < 1e-12);
        }
    }

    #[test]
    fn pathology_scores_match_brute_force(pairs in prop::collection::vec((0usize..6, 0usize..6), 1..60)) {
        let (pred, truth): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let r = score_pathology(&pred, &truth, 6, Averaging::Macro).unwrap();
        let correct = pred.iter().zip(&truth).filter(|(a, b)| a == b).count();
        prop_assert!((r.accuracy - correct as f64 / truth.len() as f64).abs() < 1e-12);
        let (mut ps, mut rs) = (0.0, 0.0);
        for class in 0..6 {
            let tp = pred.iter().zip(&truth).filter(|&(&p, &t)| p == class && t == class).count() as f64;
            let np = pred.iter().filter(|&&p| p == class).count() as f64;
            let nt = truth.iter().filter(|&&t| t == class).count() as f64;
            ps += safe_div(tp, np);
            rs += safe_div(tp, nt);
        }
        prop_assert!((r.precision - ps / 6.0).abs() < 1e-12);
        prop_assert!((r.recall - rs / 6.0).abs() < 1e-12);
        let micro = score_pathology(&pred, &truth, 6, Averaging::Micro).unwrap();
        prop_assert!((micro.precision - r.accuracy).abs() < 1e-12);
        prop_assert!((micro.recall - r.accuracy).abs() < 1e-12);
    }

    #[test]
    fn sweep_is_monotone(logits in prop::collection::vec(prop::collection::vec(-6.0f32..6.0, 49), 1..12),
                         truth_ids in prop::collection::vec(0usize..49, 12)) {
        let examples: Vec<Example> = logits.iter().enumerate().map(|(i, _)| Example {
            tokens: vec![0],
            true_pathology: truth_ids[i],
            differential: vec![truth_ids[i]],
        }).collect();
        let thresholds = [0.9, 0.7, 0.5, 0.35, 0.2, 0.05];
        let rows = sweep_logits(&logits, &examples, &thresholds, Averaging::Micro).unwrap();
        for w in rows.windows(2) {
            prop_assert!(w[1].gtpa >= w[0].gtpa);
            prop_assert!(w[1].recall >= w[0].recall);
            prop_assert!(w[1].mean_set_size >= w[0].mean_set_size);
        }
    }

    #[test]
    fn predicted_set_is_exactly_the_thresholded_probs(logits in prop::collection::vec(-8.0f32..8.0, 49), t in 0.0f32..=1.0) {
        let p = predict_ddx_set(&logits, t).unwrap();
        let expected: Vec<usize> = (0..49).filter(|&i| 1.0 / (1.0 + (-logits[i]).exp()) >= t).collect();
        // Sigmoid rounding may differ at the boundary; compare away from it.
        for i in 0..49 {
            let prob = 1.0 / (1.0 + (-logits[i] as f64).exp());
            if (prob - t as f64).abs() > 1e-6 {
                prop_assert_eq!(p.predicted_set.contains(&i), expected.contains(&i));
            }
        }
    }
}

#[test]
fn gtpa_rejects_mismatched_lengths() {
    assert!(gtpa(&[vec![0usize]], &[0, 1]).is_err());
}

#[test]
fn sweep_csv_layout() {
    let examples = vec![Example { tokens: vec![0], true_pathology: 3, differential: vec![3, 5] }];
    let mut logits = vec![-5.0f32; 49];
    logits[3] = 5.0;
    let rows = sweep_logits(&[logits], &examples, &[0.5, 0.0], Averaging::Micro).unwrap();
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "threshold,precision,recall,f1,gtpa,mean_set_size");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0.5,1.000000,0.500000,"));
    assert!(lines[2].ends_with(",49.0000"));
}

#[test]
fn report_renders_json_and_table() {
    let r = score_pathology(&[0, 1, 1], &[0, 1, 0], 2, Averaging::Macro).unwrap();
    let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(json["averaging"], "macro");
    assert_eq!(json["task"], "pathology");
    assert_eq!(json["per_class"].as_array().unwrap().len(), 2);
    assert!(json["zero_division"].is_string());
    let table = r.to_table(&["flu", "cold"]);
    assert!(table.contains("averaging   macro"));
    assert!(table.contains("flu"));
    let widths: Vec<usize> = table.lines().rev().take(2).map(str::len).collect();
    assert_eq!(widths[0], widths[1]);
}
