//! Shared fixtures and brute-force reference implementations for integration tests.
#![allow(dead_code)]

pub mod oracles;

use std::path::PathBuf;

use serde::Deserialize;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
        .join(name)
}

#[derive(Clone, Debug, Deserialize)]
pub struct CaptionCase {
    pub id: String,
    pub candidate: String,
    pub references: Vec<String>,
}

pub fn caption_cases() -> Vec<CaptionCase> {
    std::fs::read_to_string(fixture("captions.jsonl"))
        .expect("caption fixture")
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("caption fixture line"))
        .collect()
}

/// Seeds and thresholds chosen by the calibration run (`cargo run --release --example calibrate`).
#[derive(Clone, Debug, Deserialize)]
pub struct Calibration {
    pub corpus: CorpusFixture,
    pub attack_seed: u64,
    pub transfer_seed: u64,
    pub transfer_budget: usize,
    pub niqe: NiqeFixture,
}

#[derive(Clone, Copy, Debug, Deserialize)]
pub struct CorpusFixture {
    pub seed: u64,
    pub size: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Copy, Debug, Deserialize)]
pub struct NiqeFixture {
    pub image_size: usize,
    pub fit_images: usize,
    pub fit_seed: u64,
    pub trial_seed: u64,
    pub trials: usize,
    pub sigma: f64,
}

pub fn calibration() -> Calibration {
    let text = std::fs::read_to_string(fixture("calibration.json")).expect("calibration fixture");
    serde_json::from_str(&text).expect("calibration fixture parses")
}
