//! Batch attack execution over a manifest.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use super::config::RunConfig;
use super::derive_seed;
use super::manifest::{DatasetRecord, Manifest};
use super::report::{RecordMetrics, RecordResult, RecordStatus, RunReport};
use crate::attack::{run_lightd_from, AttackConfig};
use crate::error::{Error, Result};
use crate::imagecore::{read_png, Image};
use crate::metrics::{
    apa, bleu, cider, cosine_similarity, niqe_score, rouge_l, NiqeModel, TokenSeq,
};
use crate::recommender::Recommender;
use crate::relight::RelightBackend;
use crate::victim::{SurrogateEmbedder, VictimBackend};

/// Produces captions and closed-vocabulary answers for evaluation.
pub trait Captioner: Send + Sync {
    fn caption(&self, img: &Image) -> Result<String>;
    fn answer(&self, img: &Image, question: &str, choices: &[String]) -> Result<String>;
}

/// Picks the candidate text whose embedding is most similar to the image's, using a
/// surrogate embedder. Ties go to the earliest candidate.
#[derive(Clone, Debug)]
pub struct RetrievalCaptioner {
    embedder: SurrogateEmbedder,
    pool: Vec<String>,
    pool_embeddings: Vec<Vec<f64>>,
}

impl RetrievalCaptioner {
    pub fn new(embedder: SurrogateEmbedder, captions: Vec<String>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let pool: Vec<String> = captions
            .into_iter()
            .filter(|c| seen.insert(c.clone()))
            .collect();
        if pool.is_empty() {
            return Err(Error::invalid("caption pool is empty"));
        }
        let pool_embeddings = pool
            .iter()
            .map(|c| embedder.embed_text(c))
            .collect::<Result<_>>()?;
        Ok(Self {
            embedder,
            pool,
            pool_embeddings,
        })
    }

    fn best<'a>(
        &self,
        img: &Image,
        texts: &'a [String],
        embeddings: &[Vec<f64>],
    ) -> Result<&'a str> {
        let z = self.embedder.embed_image(img)?;
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, e) in embeddings.iter().enumerate() {
            let c = cosine_similarity(&z, e)?;
            if c > best.0 {
                best = (c, i);
            }
        }
        Ok(&texts[best.1])
    }
}

impl Captioner for RetrievalCaptioner {
    fn caption(&self, img: &Image) -> Result<String> {
        self.best(img, &self.pool, &self.pool_embeddings)
            .map(str::to_owned)
    }

    fn answer(&self, img: &Image, question: &str, choices: &[String]) -> Result<String> {
        if choices.is_empty() {
            return Err(Error::invalid("no answer choices"));
        }
        let embeddings = choices
            .iter()
            .map(|c| self.embedder.embed_text(&format!("{question} {c}")))
            .collect::<Result<Vec<_>>>()?;
        self.best(img, choices, &embeddings).map(str::to_owned)
    }
}

/// Everything a batch needs besides the data.
#[derive(Clone)]
pub struct Backends {
    pub relighter: Arc<dyn RelightBackend>,
    pub victim: Arc<dyn VictimBackend>,
    pub recommender: Arc<Recommender>,
    /// Without a captioner, caption and answer metrics are omitted.
    pub captioner: Option<Arc<dyn Captioner>>,
}

struct Shared<'a> {
    attack: &'a AttackConfig,
    backends: &'a Backends,
    manifest: &'a Manifest,
    niqe: Option<&'a NiqeModel>,
    df_corpus: Vec<Vec<TokenSeq>>,
    answer_choices: Vec<String>,
}

fn caption_scores(shared: &Shared<'_>, cand: &str, refs: &[TokenSeq]) -> Result<(f64, f64, f64)> {
    let c = TokenSeq::new(cand);
    let b = bleu(std::slice::from_ref(&c), &[refs.to_vec()])?;
    let r = rouge_l(&c, refs)?;
    let d = cider(
        std::slice::from_ref(&c),
        &[refs.to_vec()],
        &shared.df_corpus,
    )?;
    Ok((b, r, d))
}

fn evaluate(
    shared: &Shared<'_>,
    record: &DatasetRecord,
    clean: &Image,
    adv: &Image,
) -> Result<RecordMetrics> {
    let mut m = RecordMetrics::default();
    if let Some(captioner) = &shared.backends.captioner {
        let refs: Vec<TokenSeq> = record.captions.iter().map(|c| TokenSeq::new(c)).collect();
        let clean_caption = captioner.caption(clean)?;
        let adv_caption = captioner.caption(adv)?;
        let (b, r, c) = caption_scores(shared, &clean_caption, &refs)?;
        (m.bleu_clean, m.rouge_l_clean, m.cider_clean) = (Some(b), Some(r), Some(c));
        let (b, r, c) = caption_scores(shared, &adv_caption, &refs)?;
        (m.bleu_adv, m.rouge_l_adv, m.cider_adv) = (Some(b), Some(r), Some(c));
        m.clean_caption = Some(clean_caption);
        m.adv_caption = Some(adv_caption);

        if let (Some(q), Some(a)) = (&record.question, &record.answer) {
            let truth = [a.clone()];
            let pc = captioner.answer(clean, q, &shared.answer_choices)?;
            let pa = captioner.answer(adv, q, &shared.answer_choices)?;
            m.apa_clean = Some(apa(&[pc], &truth)?);
            m.apa_adv = Some(apa(&[pa], &truth)?);
        }
    }
    if let Some(model) = shared.niqe {
        match (niqe_score(model, clean), niqe_score(model, adv)) {
            (Ok(c), Ok(a)) => (m.niqe_clean, m.niqe_adv) = (Some(c), Some(a)),
            (Err(e), _) | (_, Err(e)) => log::warn!("record {}: NIQE skipped: {e}", record.id),
        }
    }
    Ok(m)
}

fn attack_record(
    shared: &Shared<'_>,
    index: usize,
    seed: u64,
    result: &mut RecordResult,
) -> Result<()> {
    let record = &shared.manifest.records[index];
    let clean = read_png(shared.manifest.image_path(record))?;
    let text = &record.captions[0];
    let cfg = AttackConfig {
        seed,
        ..shared.attack.clone()
    };
    let b = shared.backends;
    let recommendation = b.recommender.recommend(&clean, text);
    let out = run_lightd_from(
        &cfg,
        b.relighter.as_ref(),
        b.victim.as_ref(),
        recommendation,
        &clean,
        text,
    )?;
    result.metrics = evaluate(shared, record, &clean, &out.final_r)?;
    result.status = RecordStatus::Ok;
    result.error = None;
    result.recommendation = Some(out.recommendation);
    result.final_lighting = Some(out.final_lighting);
    result.initial = Some(out.initial);
    result.final_loss = Some(out.final_loss);
    result.param_best_j = Some(out.param_best_j);
    result.best_j = Some(out.best_j);
    result.j_trace = out.j_trace.iter().map(|l| l.total).collect();
    result.adversarial = Some(out.final_r);
    Ok(())
}

fn process(shared: &Shared<'_>, index: usize, master_seed: u64) -> RecordResult {
    let started = Instant::now();
    let id = shared.manifest.records[index].id.clone();
    let seed = derive_seed(master_seed, index);
    let mut result = RecordResult::failed(index, id.clone(), seed, String::new());
    let outcome = catch_unwind(AssertUnwindSafe(|| {
        attack_record(shared, index, seed, &mut result)
    }));
    let error = match outcome {
        Ok(Ok(())) => None,
        Ok(Err(e)) => Some(e.to_string()),
        Err(panic) => Some(
            panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "worker panicked".into()),
        ),
    };
    if let Some(e) = error {
        log::warn!("record {id} failed: {e}");
        result = RecordResult::failed(index, id, seed, e);
    }
    result.wall_time_secs = started.elapsed().as_secs_f64();
    result
}

/// Attacks every record with `config.harness.workers` threads. Per-record failures
/// are recorded in the report; only setup errors abort the batch.
pub fn run_batch(
    config: &RunConfig,
    manifest: &Manifest,
    backends: &Backends,
) -> Result<RunReport> {
    config.validate()?;
    let started = Instant::now();
    let niqe = config
        .harness
        .niqe_model
        .as_ref()
        .map(NiqeModel::load)
        .transpose()?;
    let df_corpus = manifest
        .records
        .iter()
        .map(|r| r.captions.iter().map(|c| TokenSeq::new(c)).collect())
        .collect();
    let answer_choices: Vec<String> = manifest
        .records
        .iter()
        .filter_map(|r| r.answer.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let shared = Shared {
        attack: &config.attack,
        backends,
        manifest,
        niqe: niqe.as_ref(),
        df_corpus,
        answer_choices,
    };
    let master = config.attack.seed;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.harness.workers)
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    let records: Vec<RecordResult> = pool.install(|| {
        (0..manifest.len())
            .into_par_iter()
            .map(|i| process(&shared, i, master))
            .collect()
    });
    Ok(RunReport::new(
        master,
        config.attack.clone(),
        backends.relighter.id().to_string(),
        backends.victim.id().to_string(),
        records,
        started.elapsed().as_secs_f64(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synthetic::{caption_pool, sample};
    use crate::victim::{SurrogateVictim, SurrogateVictimConfig};

    #[test]
    fn retrieval_is_deterministic_and_in_pool() {
        let v = SurrogateVictim::new(SurrogateVictimConfig::default()).unwrap();
        let pool = caption_pool();
        let cap = RetrievalCaptioner::new(v.matcher().clone(), pool.clone()).unwrap();
        let (img, _) = sample(3, 16, 16);
        let a = cap.caption(&img).unwrap();
        assert_eq!(a, cap.caption(&img).unwrap());
        assert!(pool.contains(&a));
        let choices = vec!["red".to_string(), "blue".to_string()];
        assert!(choices.contains(&cap.answer(&img, "what color", &choices).unwrap()));
        assert!(RetrievalCaptioner::new(v.matcher().clone(), vec![]).is_err());
    }
}
