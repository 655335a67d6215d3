//! The two-step collaborative attack and the transfer adapter for candidate-based
//! attacks.
//!
//! Step one ascends the continuous lighting parameters `(c_s, c_e, w)` with
//! `θ ← Π(θ + α · sign(∇θ J))`. Step two ascends the lighting image itself with
//! gradients averaged over `M` rescaled copies (`L ← clamp(L + α · sign(Σ_j ∇L J_j))`).
//! Both steps keep the best iterate seen.
//!
//! Normalizing a gradient before taking its sign changes nothing, so the updates use
//! `sign(g)` directly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{resize_adjoint, resize_bilinear, GradientTensor, Image, CHANNELS};
use crate::lightgen::{generate_lighting_image, lighting_vjp_params, LightingParams};
use crate::recommender::{Recommendation, Recommender};
use crate::relight::RelightBackend;
use crate::victim::{LossBreakdown, VictimBackend};

pub const MAX_RESIZE_COUNT: usize = 16;
const FD_STEP: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    /// Sign-step size on lighting parameters.
    pub param_step: f64,
    /// Sign-step size on lighting-image pixels.
    pub image_step: f64,
    pub param_iters: usize,
    pub image_iters: usize,
    /// Number of rescaled copies `M` per image-step iteration.
    pub resize_count: usize,
    /// Explicit scale factors; when absent, `M` values evenly spaced over `[0.5, 1.5]`.
    pub scale_factors: Option<Vec<f64>>,
    pub seed: u64,
    pub keep_best: bool,
    /// Use central finite differences when a backend has no gradient.
    pub fd_fallback: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            param_step: 0.02,
            image_step: 1.0 / 255.0,
            param_iters: 20,
            image_iters: 40,
            resize_count: 5,
            scale_factors: None,
            seed: 0,
            keep_best: true,
            fd_fallback: false,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("param_step", self.param_step),
            ("image_step", self.image_step),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !(1..=MAX_RESIZE_COUNT).contains(&self.resize_count) {
            return Err(Error::invalid(format!(
                "resize_count must lie in [1, {MAX_RESIZE_COUNT}], got {}",
                self.resize_count
            )));
        }
        if let Some(s) = &self.scale_factors {
            if s.len() != self.resize_count {
                return Err(Error::invalid(format!(
                    "{} scale factors for resize_count {}",
                    s.len(),
                    self.resize_count
                )));
            }
            if s.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return Err(Error::invalid("scale factors must be positive"));
            }
        }
        Ok(())
    }

    pub fn scales(&self) -> Vec<f64> {
        match &self.scale_factors {
            Some(s) => s.clone(),
            None => evenly_spaced_scales(self.resize_count),
        }
    }
}

/// `m` points evenly spaced over `[0.5, 1.5]`; a single point sits at `1.0`.
pub fn evenly_spaced_scales(m: usize) -> Vec<f64> {
    match m {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => (0..m).map(|j| 0.5 + j as f64 / (m - 1) as f64).collect(),
    }
}

pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `x += alpha * sign(g)` elementwise, with `sign(0) = 0`.
pub fn sign_update(x: &mut [f64], g: &[f64], alpha: f64) {
    for (xi, gi) in x.iter_mut().zip(g) {
        *xi += alpha * sign(*gi);
    }
}

/// Outcome of one optimizer stage. `trace[0]` is the starting point.
#[derive(Clone, Debug, PartialEq)]
pub struct StageOutcome<T> {
    pub best: T,
    pub trace: Vec<LossBreakdown>,
    pub best_j: f64,
}

fn check_finite(loss: &LossBreakdown, iteration: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            iteration,
            detail: format!("{loss:?}"),
        })
    }
}

fn has_gradients(relighter: &dyn RelightBackend, victim: &dyn VictimBackend) -> bool {
    relighter.has_vjp() && victim.has_grad()
}

fn require_gradients(
    cfg: &AttackConfig,
    relighter: &dyn RelightBackend,
    victim: &dyn VictimBackend,
) -> Result<()> {
    if has_gradients(relighter, victim) || cfg.fd_fallback {
        return Ok(());
    }
    let (backend, capability) = if !relighter.has_vjp() {
        (relighter.id(), "relight_vjp")
    } else {
        (victim.id(), "loss gradients")
    };
    Err(Error::UnsupportedCapability {
        backend: backend.to_string(),
        capability: capability.to_string(),
    })
}

/// Objective and gradient chained back through the relighter to the lighting image.
fn lighting_image_grad(
    relighter: &dyn RelightBackend,
    victim: &dyn VictimBackend,
    lighting: &Image,
    clean: &Image,
    text: &str,
    seed: u64,
) -> Result<(LossBreakdown, GradientTensor)> {
    let relit = relighter.relight(lighting, clean, seed)?;
    let (loss, grad_r) = victim.loss_grad(&relit, clean, text)?;
    let grad_l = relighter.relight_vjp(lighting, clean, &grad_r, seed)?;
    Ok((loss, grad_l))
}

fn objective(
    relighter: &dyn RelightBackend,
    victim: &dyn VictimBackend,
    lighting: &Image,
    clean: &Image,
    text: &str,
    seed: u64,
) -> Result<LossBreakdown> {
    let relit = relighter.relight(lighting, clean, seed)?;
    victim.loss(&relit, clean, text)
}

struct ParamProblem<'a> {
    relighter: &'a dyn RelightBackend,
    victim: &'a dyn VictimBackend,
    clean: &'a Image,
    text: &'a str,
    seed: u64,
}

impl ParamProblem<'_> {
    fn loss(&self, p: &LightingParams) -> Result<LossBreakdown> {
        let (h, w) = self.clean.shape();
        let l = generate_lighting_image(p, h, w)?;
        objective(
            self.relighter,
            self.victim,
            &l,
            self.clean,
            self.text,
            self.seed,
        )
    }

    fn gradient(&self, p: &LightingParams, fd: bool) -> Result<[f64; 7]> {
        let (h, w) = self.clean.shape();
        if !fd {
            let l = generate_lighting_image(p, h, w)?;
            let (_, grad_l) = lighting_image_grad(
                self.relighter,
                self.victim,
                &l,
                self.clean,
                self.text,
                self.seed,
            )?;
            return Ok(lighting_vjp_params(p, h, w, &grad_l)?.to_vector());
        }
        // one-sided at the box boundary so every probe stays valid
        let base = p.to_vector();
        let upper = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, crate::lightgen::MAX_WEIGHT];
        let mut g = [0.0; 7];
        for k in 0..7 {
            let hi = (base[k] + FD_STEP).min(upper[k]);
            let lo = (base[k] - FD_STEP).max(0.0);
            if hi <= lo {
                continue;
            }
            let mut vp = base;
            let mut vm = base;
            vp[k] = hi;
            vm[k] = lo;
            let jp = self.loss(&p.with_vector(vp))?.total;
            let jm = self.loss(&p.with_vector(vm))?.total;
            g[k] = (jp - jm) / (hi - lo);
        }
        Ok(g)
    }
}

/// Sign ascent on the continuous lighting parameters; the direction stays fixed.
pub fn optimize_lighting_params(
    cfg: &AttackConfig,
    relighter: &dyn RelightBackend,
    victim: &dyn VictimBackend,
    init: &LightingParams,
    clean: &Image,
    text: &str,
) -> Result<StageOutcome<LightingParams>> {
    const STAGE: &str = "lighting parameter optimization";
    cfg.validate()?;
    init.validate()?;
    if cfg.param_iters > 0 {
        require_gradients(cfg, relighter, victim)?;
    }
    let fd = !has_gradients(relighter, victim);
    let problem = ParamProblem {
        relighter,
        victim,
        clean,
        text,
        seed: cfg.seed,
    };

    let mut current = *init;
    let first = problem.loss(&current).map_err(|e| e.at_stage(STAGE, 0))?;
    check_finite(&first, 0)?;
    let mut trace = vec![first];
    let (mut best, mut best_j) = (current, first.total);

    for i in 0..cfg.param_iters {
        let g = problem
            .gradient(&current, fd)
            .map_err(|e| e.at_stage(STAGE, i))?;
        let mut v = current.to_vector();
        sign_update(&mut v, &g, cfg.param_step);
        current = current.with_vector(v);
        current.project();
        let loss = problem
            .loss(&current)
            .map_err(|e| e.at_stage(STAGE, i + 1))?;
        check_finite(&loss, i + 1)?;
        trace.push(loss);
        if loss.total > best_j {
            best = current;
            best_j = loss.total;
        }
    }
    if !cfg.keep_best {
        best = current;
        best_j = trace.last().map(|l| l.total).unwrap_or(best_j);
    }
    Ok(StageOutcome {
        best,
        trace,
        best_j,
    })
}

fn scaled_dims(h: usize, w: usize, scale: f64) -> (usize, usize) {
    let dim = |n: usize| ((n as f64 * scale).round() as usize).max(1);
    (dim(h), dim(w))
}

fn fd_lighting_grad(
    relighter: &dyn RelightBackend,
    victim: &dyn VictimBackend,
    lighting: &Image,
    clean: &Image,
    text: &str,
    seed: u64,
) -> Result<GradientTensor> {
    let (h, w) = lighting.shape();
    let base = lighting.data();
    let mut grad = vec![0.0; base.len()];
    for k in 0..base.len() {
        let hi = (base[k] + FD_STEP).min(1.0);
        let lo = (base[k] - FD_STEP).max(0.0);
        let mut probe = base.to_vec();
        probe[k] = hi;
        let jp = objective(
            relighter,
            victim,
            &Image::new(h, w, probe.clone())?,
            clean,
            text,
            seed,
        )?;
        probe[k] = lo;
        let jm = objective(
            relighter,
            victim,
            &Image::new(h, w, probe)?,
            clean,
            text,
            seed,
        )?;
        grad[k] = (jp.total - jm.total) / (hi - lo);
    }
    GradientTensor::new(h, w, grad)
}

/// Gradient of `Σ_j J(relight(up(down_j(L)), I))` with respect to `L`, where `down_j`
/// resizes by the j-th scale factor and `up` returns to the native resolution.
pub fn multiscale_gradient(
    cfg: &AttackConfig,
    relighter: &dyn RelightBackend,
    victim: &dyn VictimBackend,
    lighting: &Image,
    clean: &Image,
    text: &str,
) -> Result<GradientTensor> {
    let (h, w) = lighting.shape();
    let fd = !has_gradients(relighter, victim);
    let mut total = GradientTensor::zeros(h, w)?;
    for scale in cfg.scales() {
        let (sh, sw) = scaled_dims(h, w, scale);
        let scaled = resize_bilinear(lighting, sh, sw)?;
        let native = resize_bilinear(&scaled, h, w)?;
        let grad_native = if fd {
            fd_lighting_grad(relighter, victim, &native, clean, text, cfg.seed)?
        } else {
            lighting_image_grad(relighter, victim, &native, clean, text, cfg.seed)?.1
        };
        let grad_scaled = resize_adjoint(&grad_native, sh, sw)?;
        total.accumulate(&resize_adjoint(&grad_scaled, h, w)?)?;
    }
    Ok(total)
}

/// Multi-resolution sign ascent on the lighting image. Keep-best is judged on the
/// objective at native resolution.
pub fn optimize_lighting_image_sga(
    cfg: &AttackConfig,
    relighter: &dyn RelightBackend,
    victim: &dyn VictimBackend,
    initial: &Image,
    clean: &Image,
    text: &str,
) -> Result<StageOutcome<Image>> {
    const STAGE: &str = "lighting image optimization";
    cfg.validate()?;
    if !initial.same_shape(clean) {
        return Err(Error::invalid(format!(
            "initial lighting {:?} must match the clean image {:?}",
            initial.shape(),
            clean.shape()
        )));
    }
    if cfg.image_iters > 0 {
        require_gradients(cfg, relighter, victim)?;
    }
    let (h, w) = clean.shape();
    let first = objective(relighter, victim, initial, clean, text, cfg.seed)
        .map_err(|e| e.at_stage(STAGE, 0))?;
    check_finite(&first, 0)?;
    let mut trace = vec![first];
    let mut current = initial.clone();
    let (mut best, mut best_j) = (current.clone(), first.total);

    for i in 0..cfg.image_iters {
        let g = multiscale_gradient(cfg, relighter, victim, &current, clean, text)
            .map_err(|e| e.at_stage(STAGE, i))?;
        let mut v = current.into_data();
        sign_update(&mut v, g.data(), cfg.image_step);
        current = Image::from_clamped(h, w, v)?;
        let loss = objective(relighter, victim, &current, clean, text, cfg.seed)
            .map_err(|e| e.at_stage(STAGE, i + 1))?;
        check_finite(&loss, i + 1)?;
        trace.push(loss);
        if loss.total > best_j {
            best = current.clone();
            best_j = loss.total;
        }
    }
    if !cfg.keep_best {
        best = current;
        best_j = trace.last().map(|l| l.total).unwrap_or(best_j);
    }
    Ok(StageOutcome {
        best,
        trace,
        best_j,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackResult {
    pub recommendation: Recommendation,
    pub final_lighting: LightingParams,
    pub final_l: Image,
    pub final_r: Image,
    /// Parameter-stage iterates followed by image-stage iterates.
    pub j_trace: Vec<LossBreakdown>,
    pub param_trace_len: usize,
    pub initial: LossBreakdown,
    /// Best objective after the parameter stage.
    pub param_best_j: f64,
    pub best_j: f64,
    /// The objective breakdown at `final_r`.
    pub final_loss: LossBreakdown,
    pub iterations_used: usize,
    pub relight_backend: String,
    pub victim_backend: String,
}

/// Recommend → optimize parameters → render → optimize lighting image → relight.
pub fn run_lightd(
    cfg: &AttackConfig,
    relighter: &dyn RelightBackend,
    victim: &dyn VictimBackend,
    recommender: &Recommender,
    clean: &Image,
    text: &str,
) -> Result<AttackResult> {
    let recommendation = recommender.recommend(clean, text);
    run_lightd_from(cfg, relighter, victim, recommendation, clean, text)
}

/// [`run_lightd`] with the recommendation already in hand.
pub fn run_lightd_from(
    cfg: &AttackConfig,
    relighter: &dyn RelightBackend,
    victim: &dyn VictimBackend,
    recommendation: Recommendation,
    clean: &Image,
    text: &str,
) -> Result<AttackResult> {
    let (h, w) = clean.shape();
    let params =
        optimize_lighting_params(cfg, relighter, victim, &recommendation.params, clean, text)?;
    let l0 = generate_lighting_image(&params.best, h, w)?;
    let image = optimize_lighting_image_sga(cfg, relighter, victim, &l0, clean, text)?;
    let final_r = relighter
        .relight(&image.best, clean, cfg.seed)
        .map_err(|e| e.at_stage("final relight", 0))?;
    let final_loss = victim
        .loss(&final_r, clean, text)
        .map_err(|e| e.at_stage("final relight", 0))?;

    let initial = params.trace[0];
    let param_trace_len = params.trace.len();
    let mut j_trace = params.trace;
    j_trace.extend(image.trace);
    let best_j = if cfg.keep_best {
        j_trace
            .iter()
            .map(|l| l.total)
            .fold(f64::NEG_INFINITY, f64::max)
    } else {
        image.best_j
    };
    Ok(AttackResult {
        recommendation,
        final_lighting: params.best,
        final_l: image.best,
        final_r,
        j_trace,
        param_trace_len,
        initial,
        param_best_j: params.best_j,
        best_j,
        final_loss,
        iterations_used: cfg.param_iters + cfg.image_iters,
        relight_backend: relighter.id().to_string(),
        victim_backend: victim.id().to_string(),
    })
}

/// A source of perturbed candidates for the transfer adapter.
pub trait CandidateGenerator {
    /// The next candidate for `clean`, or `None` when exhausted.
    fn next_candidate(&mut self, clean: &Image, step: usize) -> Option<Image>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransferOutcome {
    pub image: Image,
    pub best_j: f64,
    pub initial_j: f64,
    pub evaluated: usize,
}

/// Runs a candidate-based attack with "maximize J" as its termination rule: every
/// candidate is scored and the argmax over the first `budget` candidates is kept.
pub fn adapt_classifier_attack(
    generator: &mut dyn CandidateGenerator,
    victim: &dyn VictimBackend,
    clean: &Image,
    text: &str,
    budget: usize,
) -> Result<TransferOutcome> {
    const STAGE: &str = "transfer attack";
    let initial = victim
        .loss(clean, clean, text)
        .map_err(|e| e.at_stage(STAGE, 0))?;
    check_finite(&initial, 0)?;
    let mut out = TransferOutcome {
        image: clean.clone(),
        best_j: initial.total,
        initial_j: initial.total,
        evaluated: 0,
    };
    for step in 0..budget {
        let Some(candidate) = generator.next_candidate(clean, step) else {
            break;
        };
        let loss = victim
            .loss(&candidate, clean, text)
            .map_err(|e| e.at_stage(STAGE, step + 1))?;
        check_finite(&loss, step + 1)?;
        out.evaluated += 1;
        if loss.total > out.best_j {
            out.best_j = loss.total;
            out.image = candidate;
        }
    }
    Ok(out)
}

/// `img^gamma` per channel.
pub fn apply_gamma(img: &Image, gamma: [f64; 3]) -> Image {
    let data = img
        .data()
        .chunks_exact(CHANNELS)
        .flat_map(|px| {
            [
                px[0].powf(gamma[0]),
                px[1].powf(gamma[1]),
                px[2].powf(gamma[2]),
            ]
        })
        .collect();
    Image::from_clamped(img.height(), img.width(), data).expect("gamma keeps [0, 1]")
}

/// `clamp(C · pixel)` for a 3x3 row-major color matrix.
pub fn apply_color_filter(img: &Image, matrix: [[f64; 3]; 3]) -> Image {
    let data = img
        .data()
        .chunks_exact(CHANNELS)
        .flat_map(|px| matrix.map(|row| row[0] * px[0] + row[1] * px[1] + row[2] * px[2]))
        .collect();
    Image::from_clamped(img.height(), img.width(), data).expect("finite filter output")
}

/// Random per-channel gamma search with exponents log-uniform in `[0.5, 2]`; a
/// simplified lightness attack.
#[derive(Clone, Debug)]
pub struct GammaLite {
    rng: ChaCha8Rng,
}

impl GammaLite {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl CandidateGenerator for GammaLite {
    fn next_candidate(&mut self, clean: &Image, _step: usize) -> Option<Image> {
        let gamma = [0; 3].map(|_| 2f64.powf(self.rng.random_range(-1.0..=1.0)));
        Some(apply_gamma(clean, gamma))
    }
}

/// Random 3x3 color filters within 0.3 of the identity (max-norm); a simplified
/// color-filter attack.
#[derive(Clone, Debug)]
pub struct ColorFilterLite {
    rng: ChaCha8Rng,
}

impl ColorFilterLite {
    pub const MAX_DEVIATION: f64 = 0.3;

    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl CandidateGenerator for ColorFilterLite {
    fn next_candidate(&mut self, clean: &Image, _step: usize) -> Option<Image> {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let id = if i == j { 1.0 } else { 0.0 };
                *v = id
                    + self
                        .rng
                        .random_range(-Self::MAX_DEVIATION..=Self::MAX_DEVIATION);
            }
        }
        Some(apply_color_filter(clean, m))
    }
}

pub fn gamma_lite(seed: u64) -> GammaLite {
    GammaLite::new(seed)
}

pub fn color_filter_lite(seed: u64) -> ColorFilterLite {
    ColorFilterLite::new(seed)
}
