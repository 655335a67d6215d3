//! Evaluation metrics: caption overlap scores, answer accuracy, cosine similarity and
//! a no-reference image quality estimator.
//!
//! Caption metrics share one tokenizer: lowercase, every non-alphanumeric character
//! becomes a space, split on whitespace. Scores are only comparable within this
//! toolkit.

mod caption;
mod niqe;

pub use caption::{bleu, cider, rouge_l, ROUGE_BETA};
pub use niqe::{
    aggd_fit, niqe_features, niqe_features_with, niqe_fit, niqe_score, AggdParams, NiqeMeta,
    NiqeModel, NiqeOptions, FEATURE_DIM,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A tokenized sentence. Tokens are lowercase and never empty.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn new(text: &str) -> Self {
        let cleaned: String = text
            .chars()
            .flat_map(char::to_lowercase)
            .map(|c| if c.is_alphanumeric() { c } else { ' ' })
            .collect();
        Self(cleaned.split_whitespace().map(str::to_owned).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<&str> for TokenSeq {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::invalid(format!(
            "cosine of vectors with lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum();
    let nv: f64 = v.iter().map(|a| a * a).sum();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    // sqrt(nu * nv) keeps cos(u, u) == 1 exactly
    Ok((dot / (nu * nv).sqrt()).clamp(-1.0, 1.0))
}

fn normalize_answer(s: &str) -> String {
    TokenSeq::new(s)
        .0
        .into_iter()
        .filter(|t| !matches!(t.as_str(), "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Average prediction accuracy: fraction of exact matches after normalization
/// (lowercase, punctuation stripped, articles removed, whitespace collapsed).
pub fn apa(predictions: &[String], answers: &[String]) -> Result<f64> {
    if predictions.len() != answers.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} answers",
            predictions.len(),
            answers.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::invalid("no predictions to score"));
    }
    let hits = predictions
        .iter()
        .zip(answers)
        .filter(|(p, a)| normalize_answer(p) == normalize_answer(a))
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}
