//! Run reports and their JSON, CSV and PNG outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::AttackConfig;
use crate::error::{Error, Result};
use crate::imagecore::{write_png, Image};
use crate::lightgen::LightingParams;
use crate::recommender::Recommendation;
use crate::victim::LossBreakdown;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    Failed,
}

/// Caption, answer and quality metrics on the clean and adversarial images. A field
/// is absent when its input (captioner, question, NIQE model) is unavailable.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordMetrics {
    pub clean_caption: Option<String>,
    pub adv_caption: Option<String>,
    pub bleu_clean: Option<f64>,
    pub bleu_adv: Option<f64>,
    pub rouge_l_clean: Option<f64>,
    pub rouge_l_adv: Option<f64>,
    pub cider_clean: Option<f64>,
    pub cider_adv: Option<f64>,
    pub apa_clean: Option<f64>,
    pub apa_adv: Option<f64>,
    pub niqe_clean: Option<f64>,
    pub niqe_adv: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordResult {
    pub index: usize,
    pub id: String,
    pub seed: u64,
    pub status: RecordStatus,
    pub error: Option<String>,
    pub recommendation: Option<Recommendation>,
    pub final_lighting: Option<LightingParams>,
    pub initial: Option<LossBreakdown>,
    pub final_loss: Option<LossBreakdown>,
    pub param_best_j: Option<f64>,
    pub best_j: Option<f64>,
    /// Objective totals, parameter stage then image stage.
    pub j_trace: Vec<f64>,
    pub metrics: RecordMetrics,
    pub wall_time_secs: f64,
    #[serde(skip)]
    pub adversarial: Option<Image>,
}

impl RecordResult {
    pub fn failed(index: usize, id: String, seed: u64, error: String) -> Self {
        Self {
            index,
            id,
            seed,
            status: RecordStatus::Failed,
            error: Some(error),
            recommendation: None,
            final_lighting: None,
            initial: None,
            final_loss: None,
            param_best_j: None,
            best_j: None,
            j_trace: Vec::new(),
            metrics: RecordMetrics::default(),
            wall_time_secs: 0.0,
            adversarial: None,
        }
    }

    /// Numeric columns shared by the CSV rows and the aggregate means.
    pub fn numeric_columns(&self) -> Vec<(&'static str, Option<f64>)> {
        let m = &self.metrics;
        let initial = self.initial.map(|l| l.total);
        vec![
            ("initial_j", initial),
            ("param_best_j", self.param_best_j),
            ("best_j", self.best_j),
            ("j_gain", self.best_j.zip(initial).map(|(b, i)| b - i)),
            ("final_j", self.final_loss.map(|l| l.total)),
            ("final_match", self.final_loss.map(|l| l.match_term)),
            ("final_nat", self.final_loss.map(|l| l.nat_term)),
            ("bleu_clean", m.bleu_clean),
            ("bleu_adv", m.bleu_adv),
            ("rouge_l_clean", m.rouge_l_clean),
            ("rouge_l_adv", m.rouge_l_adv),
            ("cider_clean", m.cider_clean),
            ("cider_adv", m.cider_adv),
            ("apa_clean", m.apa_clean),
            ("apa_adv", m.apa_adv),
            ("niqe_clean", m.niqe_clean),
            ("niqe_adv", m.niqe_adv),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub master_seed: u64,
    pub attack: AttackConfig,
    pub relight_backend: String,
    pub victim_backend: String,
    pub records: Vec<RecordResult>,
    pub succeeded: usize,
    pub failed: usize,
    /// Mean of each numeric column over the records that have it, in record order.
    /// Columns no record has are absent.
    pub means: BTreeMap<String, f64>,
    pub wall_time_secs: f64,
}

impl RunReport {
    pub fn new(
        master_seed: u64,
        attack: AttackConfig,
        relight_backend: String,
        victim_backend: String,
        records: Vec<RecordResult>,
        wall_time_secs: f64,
    ) -> Self {
        let failed = records
            .iter()
            .filter(|r| r.status == RecordStatus::Failed)
            .count();
        let means = compute_means(&records);
        Self {
            master_seed,
            attack,
            relight_backend,
            victim_backend,
            succeeded: records.len() - failed,
            failed,
            records,
            means,
            wall_time_secs,
        }
    }

    /// The report with every wall-clock field zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.wall_time_secs = 0.0;
        for rec in &mut r.records {
            rec.wall_time_secs = 0.0;
        }
        r
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn compute_means(records: &[RecordResult]) -> BTreeMap<String, f64> {
    let mut sums: BTreeMap<&'static str, (f64, usize)> = BTreeMap::new();
    for rec in records {
        for (name, value) in rec.numeric_columns() {
            if let Some(v) = value {
                let e = sums.entry(name).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
    }
    sums.into_iter()
        .map(|(k, (s, n))| (k.to_string(), s / n as f64))
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

fn write_csv(report: &RunReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let probe = RecordResult::failed(0, String::new(), 0, String::new());
    let mut header = vec!["index", "id", "seed", "status", "source", "direction"];
    header.extend(probe.numeric_columns().iter().map(|(n, _)| *n));
    header.extend(["clean_caption", "adv_caption", "wall_time_secs", "error"]);
    w.write_record(&header).map_err(|e| csv_error(path, e))?;

    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for rec in &report.records {
        let mut row = vec![
            rec.index.to_string(),
            rec.id.clone(),
            rec.seed.to_string(),
            format!("{:?}", rec.status).to_lowercase(),
            rec.recommendation
                .as_ref()
                .map(|r| format!("{:?}", r.source).to_lowercase())
                .unwrap_or_default(),
            rec.final_lighting
                .map(|p| p.direction.to_string())
                .unwrap_or_default(),
        ];
        row.extend(rec.numeric_columns().into_iter().map(|(_, v)| opt(v)));
        row.push(rec.metrics.clean_caption.clone().unwrap_or_default());
        row.push(rec.metrics.adv_caption.clone().unwrap_or_default());
        row.push(rec.wall_time_secs.to_string());
        row.push(rec.error.clone().unwrap_or_default());
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `report.json`, `report.csv` and `<id>_adv.png` per successful record into
/// `dir`, creating it if needed. Returns the paths written.
pub fn write_report(report: &RunReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json_path = dir.join("report.json");
    fs::write(&json_path, report.to_json()?).map_err(|e| Error::io(&json_path, e))?;
    let csv_path = dir.join("report.csv");
    write_csv(report, &csv_path)?;
    let mut written = vec![json_path, csv_path];
    for rec in &report.records {
        if let Some(img) = &rec.adversarial {
            let p = dir.join(format!("{}_adv.png", rec.id));
            write_png(&p, img)?;
            written.push(p);
        }
    }
    Ok(written)
}
