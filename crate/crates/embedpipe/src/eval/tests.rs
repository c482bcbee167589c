use std::collections::BTreeMap;

use super::*;

fn s(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|x| x.to_string()).collect()
}

#[test]
fn identity_scores_100_exactly() {
    let refs = vec![s(&["the", "cat"]), s(&["a", "dog", "sees"])];
    let report = bleu(&refs, &refs).unwrap();
    assert_eq!(report.bleu, 100.0);
    assert_eq!(report.brevity_penalty, 1.0);
    assert_eq!(report.precisions[0], 1.0);
}

#[test]
fn empty_hypotheses_score_zero_with_bp_flag() {
    let refs = vec![s(&["the", "cat"])];
    let hyps = vec![Vec::<String>::new()];
    let report = bleu(&hyps, &refs).unwrap();
    assert_eq!(report.bleu, 0.0);
    assert_eq!(report.brevity_penalty, 0.0);
    assert_eq!(report.hyp_tokens, 0);
}

/// Frozen from the scripted reference implementation in
/// tests/bleu_oracle.rs (written before this scorer).
#[test]
fn fixed_mini_corpus_matches_frozen_reference_value() {
    let refs = vec![
        s(&["the", "small", "cat", "sees", "a", "bird"]),
        s(&["he", "finds", "the", "old", "door"]),
        s(&["a", "child", "holds", "the", "bright", "star", "near", "the", "river"]),
    ];
    let hyps = vec![
        s(&["the", "small", "cat", "sees", "a", "cloud"]),
        s(&["he", "finds", "a", "old", "door"]),
        s(&["a", "child", "holds", "the", "star", "near", "the", "river"]),
    ];
    let report = bleu(&hyps, &refs).unwrap();
    assert!(
        (report.bleu - 61.599140316405).abs() <= 1e-9,
        "got {}",
        report.bleu
    );
}

#[test]
fn count_mismatch_rejected() {
    assert!(bleu(&[s(&["a"])], &[]).is_err());
}

#[test]
fn pair_order_invariance() {
    let refs = vec![s(&["a", "b", "c"]), s(&["d", "e"]), s(&["f"])];
    let hyps = vec![s(&["a", "b"]), s(&["d", "d"]), s(&["f"])];
    let fwd = bleu(&hyps, &refs).unwrap().bleu;
    let rev_h: Vec<_> = hyps.iter().rev().cloned().collect();
    let rev_r: Vec<_> = refs.iter().rev().cloned().collect();
    assert_eq!(fwd, bleu(&rev_h, &rev_r).unwrap().bleu);
}

#[test]
fn adding_identical_pair_keeps_perfect_score() {
    let mut refs = vec![s(&["a", "b", "c", "d"])];
    let mut hyps = refs.clone();
    let before = bleu(&hyps, &refs).unwrap().bleu;
    refs.push(s(&["e", "f", "g", "h"]));
    hyps.push(s(&["e", "f", "g", "h"]));
    let after = bleu(&hyps, &refs).unwrap().bleu;
    assert_eq!(before, 100.0);
    assert!(after >= before);
}

#[test]
fn by_length_single_bucket_and_partition() {
    let refs = vec![s(&["a", "b", "c", "d", "e"]); 4];
    let hyps = vec![s(&["a", "b", "c"]); 4];
    let report = bleu_by_length(&hyps, &refs).unwrap();
    assert!(report.buckets[0].is_some());
    assert!(report.buckets[1..].iter().all(|b| b.is_none()));
    assert_eq!(report.pair_counts.iter().sum::<usize>(), 4);

    let mixed_refs = vec![s(&["a"; 5]), s(&["b"; 15]), s(&["c"; 30]), s(&["d"; 39])];
    let mixed_hyps = mixed_refs.clone();
    let report = bleu_by_length(&mixed_hyps, &mixed_refs).unwrap();
    assert_eq!(report.pair_counts, [1, 1, 1, 1]);
    assert!(report.buckets.iter().all(|b| b.is_some()));
}

fn toy_table(k: usize) -> VocoderTable {
    let map: BTreeMap<u32, String> = (0..k as u32).map(|u| (u, format!("w{u}"))).collect();
    VocoderTable::new(map, k).unwrap()
}

#[test]
fn vocode_is_tokenwise_lookup() {
    let table = toy_table(8);
    assert_eq!(vocode(&[3, 5], &table).unwrap(), s(&["w3", "w5"]));
    assert_eq!(vocode(&[], &table).unwrap(), Vec::<String>::new());
}

#[test]
fn vocode_rejects_duplicates_and_unknown_units() {
    let table = toy_table(4);
    assert!(matches!(
        vocode(&[1, 1, 2], &table),
        Err(EvalError::UnnormalizedUnits { position: 1 })
    ));
    assert!(matches!(
        vocode(&[1, 9], &table),
        Err(EvalError::UnknownUnit { unit: 9, .. })
    ));
}

#[test]
fn vocoder_table_validates_bijection() {
    let mut map: BTreeMap<u32, String> = (0..4u32).map(|u| (u, format!("w{u}"))).collect();
    assert!(VocoderTable::new(map.clone(), 5).is_err());
    map.insert(3, "w0".to_string());
    assert!(VocoderTable::new(map, 4).is_err());
}

#[test]
fn speech_output_oracle_units_score_100() {
    let table = toy_table(8);
    let refs = vec![s(&["w1", "w4", "w2"]), s(&["w7", "w0"])];
    let unit_hyps = vec![vec![1, 4, 2], vec![7, 0]];
    let report = eval_speech_output(&unit_hyps, &refs, &table).unwrap();
    assert_eq!(report.bleu, 100.0);
    assert_eq!(report.decoding, "greedy+vocode");
}

#[test]
fn speech_output_empty_units_score_zero() {
    let table = toy_table(8);
    let refs = vec![s(&["w1", "w4"])];
    let report = eval_speech_output(&[vec![]], &refs, &table).unwrap();
    assert_eq!(report.bleu, 0.0);
}
