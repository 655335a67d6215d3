//! Corpus BLEU-4, ROUGE-L and CIDEr over [`TokenSeq`]s.
//!
//! All n-gram tables are ordered maps so reductions run in a fixed order and repeat
//! bit-for-bit.

use std::collections::BTreeMap;

use super::TokenSeq;
use crate::error::{Error, Result};

const MAX_ORDER: usize = 4;
const BLEU_EPSILON: f64 = 1e-9;
pub const ROUGE_BETA: f64 = 1.2;

type Counts<'a> = BTreeMap<&'a [String], usize>;

fn ngram_counts(seq: &TokenSeq, n: usize) -> Counts<'_> {
    let mut counts = BTreeMap::new();
    for gram in seq.tokens().windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Reference length closest to `cand_len`; ties go to the shorter reference.
fn closest_ref_len(cand_len: usize, refs: &[TokenSeq]) -> usize {
    refs.iter()
        .map(TokenSeq::len)
        .min_by_key(|&r| (r.abs_diff(cand_len), r))
        .unwrap_or(0)
}

/// Smoothed corpus-level BLEU-4 with closest-reference brevity penalty.
///
/// Orders with no matched n-gram contribute a precision of `1e-9 / total`.
pub fn bleu(candidates: &[TokenSeq], references: &[Vec<TokenSeq>]) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::invalid("BLEU needs at least one candidate"));
    }
    if candidates.len() != references.len() {
        return Err(Error::invalid(format!(
            "{} candidates for {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    let mut clipped = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);

    for (cand, refs) in candidates.iter().zip(references) {
        if refs.is_empty() {
            return Err(Error::invalid(
                "every candidate needs at least one reference",
            ));
        }
        cand_len += cand.len();
        ref_len += closest_ref_len(cand.len(), refs);
        for n in 1..=MAX_ORDER {
            let mut max_ref: Counts<'_> = BTreeMap::new();
            for r in refs {
                for (gram, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(gram).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (gram, c) in ngram_counts(cand, n) {
                clipped[n - 1] += c.min(max_ref.get(gram).copied().unwrap_or(0));
            }
            totals[n - 1] += cand.len().saturating_sub(n - 1);
        }
    }
    if cand_len == 0 {
        return Ok(0.0);
    }
    let log_precision: f64 = (0..MAX_ORDER)
        .map(|k| {
            let num = if clipped[k] == 0 {
                BLEU_EPSILON
            } else {
                clipped[k] as f64
            };
            (num / totals[k].max(1) as f64).ln()
        })
        .sum::<f64>()
        / MAX_ORDER as f64;
    let brevity = (1.0 - ref_len as f64 / cand_len as f64).min(0.0);
    Ok((log_precision + brevity).exp())
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure (`beta = 1.2`), maximized over references. An empty candidate
/// scores 0.
pub fn rouge_l(candidate: &TokenSeq, references: &[TokenSeq]) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::invalid("ROUGE-L needs at least one reference"));
    }
    let beta2 = ROUGE_BETA * ROUGE_BETA;
    let mut best = 0.0f64;
    for r in references {
        let l = lcs_len(candidate.tokens(), r.tokens());
        if l == 0 {
            continue;
        }
        let p = l as f64 / candidate.len() as f64;
        let rec = l as f64 / r.len() as f64;
        let f = (1.0 + beta2) * p * rec / (rec + beta2 * p);
        best = best.max(f);
    }
    Ok(best)
}

struct DocFreq<'a> {
    tables: Vec<BTreeMap<&'a [String], usize>>,
    images: f64,
}

impl<'a> DocFreq<'a> {
    fn new(corpus: &'a [Vec<TokenSeq>]) -> Self {
        let mut tables = vec![BTreeMap::new(); MAX_ORDER];
        for refs in corpus {
            for n in 1..=MAX_ORDER {
                let mut seen: BTreeMap<&[String], ()> = BTreeMap::new();
                for r in refs {
                    for gram in r.tokens().windows(n) {
                        seen.insert(gram, ());
                    }
                }
                for gram in seen.into_keys() {
                    *tables[n - 1].entry(gram).or_insert(0) += 1;
                }
            }
        }
        Self {
            tables,
            images: corpus.len() as f64,
        }
    }

    /// `ln(N / min(1 + df, N))`.
    fn idf(&self, n: usize, gram: &[String]) -> f64 {
        let df = self.tables[n - 1].get(gram).copied().unwrap_or(0) as f64;
        (self.images / (1.0 + df).min(self.images)).ln()
    }

    fn tfidf<'s>(&self, seq: &'s TokenSeq, n: usize) -> BTreeMap<&'s [String], f64> {
        ngram_counts(seq, n)
            .into_iter()
            .map(|(g, c)| (g, c as f64 * self.idf(n, g)))
            .collect()
    }
}

fn sparse_cosine(a: &BTreeMap<&[String], f64>, b: &BTreeMap<&[String], f64>) -> f64 {
    let na: f64 = a.values().map(|v| v * v).sum();
    let nb: f64 = b.values().map(|v| v * v).sum();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().filter_map(|(g, v)| b.get(g).map(|w| v * w)).sum();
    dot / (na * nb).sqrt()
}

/// Corpus CIDEr (no stemming): per order, TF-IDF cosine against each reference,
/// averaged; ten times the mean over orders 1..=4; mean over candidates.
///
/// `corpus` is the full reference set used for document frequencies.
pub fn cider(
    candidates: &[TokenSeq],
    references: &[Vec<TokenSeq>],
    corpus: &[Vec<TokenSeq>],
) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::invalid(
            "CIDEr needs a non-empty document-frequency corpus",
        ));
    }
    if candidates.is_empty() {
        return Err(Error::invalid("CIDEr needs at least one candidate"));
    }
    if candidates.len() != references.len() {
        return Err(Error::invalid(format!(
            "{} candidates for {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    let df = DocFreq::new(corpus);
    let mut total = 0.0;
    for (cand, refs) in candidates.iter().zip(references) {
        if refs.is_empty() {
            return Err(Error::invalid(
                "every candidate needs at least one reference",
            ));
        }
        let mut per_order = 0.0;
        for n in 1..=MAX_ORDER {
            let vc = df.tfidf(cand, n);
            let sum: f64 = refs
                .iter()
                .map(|r| sparse_cosine(&vc, &df.tfidf(r, n)))
                .sum();
            per_order += sum / refs.len() as f64;
        }
        total += 10.0 * per_order / MAX_ORDER as f64;
    }
    Ok(total / candidates.len() as f64)
}
