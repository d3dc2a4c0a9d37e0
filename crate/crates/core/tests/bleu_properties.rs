use proptest::prelude::*;

use sql2text::eval::bleu4_corpus;

fn sentence() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]).prop_map(String::from), 0..10)
}

fn corpus() -> impl Strategy<Value = (Vec<Vec<String>>, Vec<Vec<String>>)> {
    (1usize..8).prop_flat_map(|n| (prop::collection::vec(sentence(), n), prop::collection::vec(sentence(), n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn pair_order_does_not_matter((hyps, refs) in corpus(), rot in 0usize..8) {
        let base = bleu4_corpus(&hyps, &refs).unwrap();
        let mut order: Vec<usize> = (0..hyps.len()).collect();
        order.rotate_left(rot % hyps.len());
        order.reverse();
        let h: Vec<_> = order.iter().map(|&i| hyps[i].clone()).collect();
        let r: Vec<_> = order.iter().map(|&i| refs[i].clone()).collect();
        let again = bleu4_corpus(&h, &r).unwrap();
        prop_assert_eq!(base, again);
    }

    #[test]
    fn perfecting_never_lowers_precisions((hyps, refs) in corpus(), pick in 0usize..8) {
        let before = bleu4_corpus(&hyps, &refs).unwrap();
        let mut fixed = hyps.clone();
        let i = pick % hyps.len();
        fixed[i] = refs[i].clone();
        let after = bleu4_corpus(&fixed, &refs).unwrap();
        for n in 0..4 {
            prop_assert!(after.precisions[n] >= before.precisions[n] - 1e-15);
        }
        // the brevity penalty can only fall when the hypothesis shrinks
        if hyps[i].len() <= refs[i].len() {
            prop_assert!(after.bleu >= before.bleu - 1e-12, "{} -> {}", before.bleu, after.bleu);
        }
    }

    #[test]
    fn reported_parts_recombine((hyps, refs) in corpus()) {
        let s = bleu4_corpus(&hyps, &refs).unwrap();
        let recombined = if s.precisions.contains(&0.0) {
            0.0
        } else {
            s.brevity_penalty * (s.precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0).exp()
        };
        prop_assert!((recombined - s.bleu).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&s.brevity_penalty));
        prop_assert!((0.0..=1.0).contains(&s.bleu));
        for n in 0..4 {
            prop_assert!(s.matches[n] <= s.totals[n]);
        }
    }
}

/// Replacing an over-long hypothesis with its reference can push the corpus
/// below the reference length, and the brevity penalty then outweighs the
/// precision gain.
#[test]
fn perfecting_a_long_hypothesis_can_lower_bleu() {
    let w = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    let refs = vec![w("c b b c a"), w("")];
    let hyps = vec![w("c b b c"), w("a a")];
    let before = bleu4_corpus(&hyps, &refs).unwrap();
    let after = bleu4_corpus(&[hyps[0].clone(), refs[1].clone()], &refs).unwrap();
    assert!((before.bleu - (2.0f64 / 3.0 * 0.75).powf(0.25)).abs() < 1e-12);
    assert!((after.bleu - (-0.25f64).exp()).abs() < 1e-12);
    assert!(after.bleu < before.bleu);
}

#[test]
fn identical_corpus_scores_one() {
    let refs: Vec<Vec<&str>> = vec![vec!["how", "many", "name"], vec!["which", "a", "where", "b", "equals", "val_0"]];
    assert_eq!(bleu4_corpus(&refs, &refs).unwrap().bleu, 1.0);
}
