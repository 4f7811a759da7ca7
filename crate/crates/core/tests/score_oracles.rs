mod common;

use common::cases::random_string;
use common::oracles::{chrf_counts, chrf_oracle, levenshtein_textbook};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;
use speechmine::metrics::{chrf_pp, segment_stats, ChrfConfig};
use speechmine::quality::{alignment_score_tau, cosine_sigma, levenshtein_distance};

fn chrf(pairs: &[(&str, &str)]) -> f64 {
    let hyps: Vec<String> = pairs.iter().map(|p| p.0.to_string()).collect();
    let refs: Vec<String> = pairs.iter().map(|p| p.1.to_string()).collect();
    chrf_pp(&hyps, &refs, &ChrfConfig::default()).unwrap().corpus_score
}

#[test]
fn levenshtein_matches_full_matrix() {
    let mut rng = StdRng::seed_from_u64(3);
    for _ in 0..3000 {
        let (a, b) = (random_string(&mut rng, 20), random_string(&mut rng, 20));
        assert_eq!(levenshtein_distance(&a, &b), levenshtein_textbook(&a, &b), "{a:?} {b:?}");
    }
}

#[test]
fn known_scores() {
    assert_eq!(alignment_score_tau("kitten", "sitting"), 1.0 - 3.0 / 7.0);
    let s = cosine_sigma(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
    assert!((s - 32.0 / (14f64.sqrt() * 77f64.sqrt())).abs() < 1e-12);
    assert!((s - 0.974631846).abs() < 1e-9);
}

#[test]
fn chrf_hand_counts() {
    // "cat" vs "cat sat": chars c,a,t,ca,at,cat all match; the reference
    // has 6/5/4/3/2/1 char n-grams and 2/1 word n-grams
    let c = chrf_counts("cat", "cat sat");
    assert_eq!(
        c,
        vec![(3, 6, 3), (2, 5, 2), (1, 4, 1), (0, 3, 0), (0, 2, 0), (0, 1, 0), (1, 2, 1), (0, 1, 0)]
    );
    // effective orders 1, 2, 3 and word 1: P = 1, R = (1/2 + 2/5 + 1/4 + 1/2) / 4
    let r = (0.5 + 0.4 + 0.25 + 0.5) / 4.0;
    let want = 100.0 * 5.0 * r / (4.0 + r);
    assert!((chrf(&[("cat", "cat sat")]) - want).abs() < 1e-9);
}

#[test]
fn chrf_matches_oracle_on_fixed_cases() {
    let cases: [&[(&str, &str)]; 6] = [
        &[("the cat sat.", "the cat sat on the mat.")],
        &[("a, b!", "a b")],
        &[("यह है।", "यह है ।")],
        &[("cat", "cat sat"), ("the dog", "a dog")],
        &[("Hello (world)", "hello world!")],
        &[("abc", "abc")],
    ];
    for pairs in cases {
        assert!((chrf(pairs) - chrf_oracle(pairs)).abs() < 1e-9, "{pairs:?}");
    }
}

fn text() -> impl Strategy<Value = String> {
    "[a-c ,.!क]{0,24}"
}

proptest! {
    #[test]
    fn chrf_matches_oracle(h in text(), r in text(), h2 in text(), r2 in text()) {
        let pairs = [(h.as_str(), r.as_str()), (h2.as_str(), r2.as_str())];
        prop_assert!((chrf(&pairs) - chrf_oracle(&pairs)).abs() < 1e-9);
    }

    #[test]
    fn chrf_is_bounded_and_identity_is_full(h in text(), r in text()) {
        let s = chrf(&[(&h, &r)]);
        prop_assert!((0.0..=100.0).contains(&s));
        if !r.trim().is_empty() {
            prop_assert_eq!(chrf(&[(&r, &r)]), 100.0);
        }
    }

    // Extra whitespace between, before or after tokens changes nothing.
    #[test]
    fn chrf_ignores_extra_whitespace(h in text(), r in text(), pad in "[ \t]{1,3}") {
        let spread = |s: &str| format!("{pad}{}{pad}", s.split_whitespace().collect::<Vec<_>>().join(&format!(" {pad}")));
        prop_assert_eq!(chrf(&[(&spread(&h), &r)]), chrf(&[(&h, &r)]));
        prop_assert_eq!(chrf(&[(&h, &spread(&r))]), chrf(&[(&h, &r)]));
    }

    // Character statistics never see whitespace at all.
    #[test]
    fn char_orders_ignore_inserted_spaces(h in "[a-d]{1,12}", r in "[a-d]{1,12}", at in 0usize..12) {
        let cut = at.min(h.len());
        let spaced = format!("{} {}", &h[..cut], &h[cut..]);
        let cfg = ChrfConfig::default();
        prop_assert_eq!(&segment_stats(&spaced, &r, &cfg)[..6], &segment_stats(&h, &r, &cfg)[..6]);
    }

    #[test]
    fn levenshtein_is_a_metric(a in "[ab]{0,8}", b in "[ab]{0,8}", c in "[ab]{0,8}") {
        let d = |x: &str, y: &str| levenshtein_distance(x, y);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        prop_assert_eq!(d(&a, &a), 0);
    }
}
