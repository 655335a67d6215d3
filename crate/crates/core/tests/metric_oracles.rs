//! Caption metrics against brute-force reference implementations.

mod common;

use lightd::metrics::{bleu, cider, rouge_l, TokenSeq};
use proptest::prelude::*;

use common::{caption_cases, oracles};

const VOCAB: [&str; 8] = ["a", "the", "cat", "dog", "sat", "on", "red", "mat"];

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(VOCAB.to_vec()), 1..9).prop_map(|w| w.join(" "))
}

fn case() -> impl Strategy<Value = (String, Vec<String>)> {
    (sentence(), prop::collection::vec(sentence(), 1..4))
}

fn seqs(refs: &[String]) -> Vec<TokenSeq> {
    refs.iter().map(|r| TokenSeq::new(r)).collect()
}

fn strs(refs: &[String]) -> Vec<&str> {
    refs.iter().map(String::as_str).collect()
}

#[test]
fn fixture_corpus_matches_oracles() {
    let cases = caption_cases();
    assert_eq!(cases.len(), 10);
    let refs: Vec<Vec<TokenSeq>> = cases.iter().map(|c| seqs(&c.references)).collect();
    let raw_refs: Vec<Vec<&str>> = cases.iter().map(|c| strs(&c.references)).collect();
    for (k, c) in cases.iter().enumerate() {
        let cand = TokenSeq::new(&c.candidate);
        let b = bleu(std::slice::from_ref(&cand), &refs[k..=k]).unwrap();
        assert!(
            (b - oracles::bleu(&[&c.candidate], &raw_refs[k..=k])).abs() <= 1e-6,
            "{}",
            c.id
        );
        let r = rouge_l(&cand, &refs[k]).unwrap();
        assert!(
            (r - oracles::rouge_l(&c.candidate, &raw_refs[k])).abs() <= 1e-6,
            "{}",
            c.id
        );
        let d = cider(std::slice::from_ref(&cand), &refs[k..=k], &refs).unwrap();
        assert!(
            (d - oracles::cider(&[&c.candidate], &raw_refs[k..=k], &raw_refs)).abs() <= 1e-6,
            "{}",
            c.id
        );
    }
}

#[test]
fn rouge_worked_example() {
    let f = rouge_l(&TokenSeq::new("the cat sat"), &[TokenSeq::new("the cat")]).unwrap();
    assert!((f - 0.8299).abs() <= 1e-4, "{f}");
    let hand = 2.44 * (2.0 / 3.0) / ((2.0 / 3.0) * 1.44 + 1.0);
    assert!((f - hand).abs() < 1e-12);
}

#[test]
fn oracle_lcs_is_exhaustive() {
    let t = |s: &str| TokenSeq::new(s).tokens().to_vec();
    assert_eq!(oracles::lcs(&t("a b c d"), &t("b d a c")), 2);
    assert_eq!(oracles::lcs(&t("x y"), &t("z")), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bleu_matches_oracle(cases in prop::collection::vec(case(), 1..5)) {
        let cands: Vec<TokenSeq> = cases.iter().map(|(c, _)| TokenSeq::new(c)).collect();
        let refs: Vec<Vec<TokenSeq>> = cases.iter().map(|(_, r)| seqs(r)).collect();
        let raw_c: Vec<&str> = cases.iter().map(|(c, _)| c.as_str()).collect();
        let raw_r: Vec<Vec<&str>> = cases.iter().map(|(_, r)| strs(r)).collect();
        let core = bleu(&cands, &refs).unwrap();
        prop_assert!((core - oracles::bleu(&raw_c, &raw_r)).abs() <= 1e-6);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&core));
    }

    #[test]
    fn rouge_matches_oracle((cand, refs) in case()) {
        let core = rouge_l(&TokenSeq::new(&cand), &seqs(&refs)).unwrap();
        prop_assert!((core - oracles::rouge_l(&cand, &strs(&refs))).abs() <= 1e-6);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&core));
    }

    #[test]
    fn cider_matches_oracle(cases in prop::collection::vec(case(), 1..5)) {
        let cands: Vec<TokenSeq> = cases.iter().map(|(c, _)| TokenSeq::new(c)).collect();
        let refs: Vec<Vec<TokenSeq>> = cases.iter().map(|(_, r)| seqs(r)).collect();
        let raw_c: Vec<&str> = cases.iter().map(|(c, _)| c.as_str()).collect();
        let raw_r: Vec<Vec<&str>> = cases.iter().map(|(_, r)| strs(r)).collect();
        let core = cider(&cands, &refs, &refs).unwrap();
        prop_assert!((core - oracles::cider(&raw_c, &raw_r, &raw_r)).abs() <= 1e-6);
        prop_assert!(core >= 0.0);
    }

    #[test]
    fn identical_candidate_scores_perfect_rouge(s in sentence()) {
        let f = rouge_l(&TokenSeq::new(&s), &[TokenSeq::new(&s)]).unwrap();
        prop_assert!((f - 1.0).abs() < 1e-12);
    }
}
