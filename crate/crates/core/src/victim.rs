//! Victim-model contract: the attack objective `J` and its image gradient.
//!
//! `J(R) = match(R, T) + λ · nat(R, I)`, maximized by the attacker. The desk-scale
//! [`SurrogateVictim`] uses seeded random linear embedders:
//!
//! * `match = 1 - cos(f(R), t(T))`: the relit image drifting away from its caption;
//! * `nat = cos(h(R), h(I))`: the relit image staying close to the clean one.
//!
//! `f` and `h` share the architecture (bilinear resize to `P x P`, flatten, project,
//! L2-normalize) with different projection seeds. `t` hashes character trigrams into
//! the same input width and projects with its own seed.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{resize_adjoint, resize_bilinear, GradientTensor, Image, CHANNELS};
use crate::metrics::cosine_similarity;
use crate::wire::{LossGradRequest, LossGradResponse, RemoteClient, WireTensor};

/// Components of the attack objective. `total == match_term + nat_term`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub match_term: f64,
    /// Naturalness contribution, already multiplied by its weight.
    pub nat_term: f64,
}

impl LossBreakdown {
    pub fn new(match_term: f64, nat_term: f64) -> Self {
        Self {
            total: match_term + nat_term,
            match_term,
            nat_term,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.match_term.is_finite() && self.nat_term.is_finite()
    }
}

pub trait VictimBackend: Send + Sync {
    fn id(&self) -> &str;

    fn has_grad(&self) -> bool;

    fn loss(&self, relit: &Image, clean: &Image, text: &str) -> Result<LossBreakdown>;

    /// The loss together with `dJ/d relit`.
    fn loss_grad(
        &self,
        relit: &Image,
        clean: &Image,
        text: &str,
    ) -> Result<(LossBreakdown, GradientTensor)>;
}

/// Lowercases and collapses whitespace.
pub fn normalize_text(text: &str) -> String {
    text.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn gaussian_matrix(seed: u64, rows: usize, cols: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows * cols)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect()
}

fn mat_vec(m: &[f64], cols: usize, x: &[f64]) -> Vec<f64> {
    m.chunks_exact(cols)
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn mat_t_vec(m: &[f64], cols: usize, y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (row, yi) in m.chunks_exact(cols).zip(y) {
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * yi;
        }
    }
    out
}

fn normalized(z: Vec<f64>) -> Result<Vec<f64>> {
    let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 {
        return Err(Error::DegenerateEmbedding);
    }
    Ok(z.into_iter().map(|v| v / n).collect())
}

/// A seeded linear image/text embedder.
#[derive(Clone, Debug)]
pub struct SurrogateEmbedder {
    patch_size: usize,
    embed_dim: usize,
    image_seed: u64,
    text_seed: u64,
    image_proj: Vec<f64>,
    text_proj: Vec<f64>,
}

impl SurrogateEmbedder {
    pub fn new(
        patch_size: usize,
        embed_dim: usize,
        image_seed: u64,
        text_seed: u64,
    ) -> Result<Self> {
        if patch_size == 0 || embed_dim == 0 {
            return Err(Error::invalid(
                "embedder patch size and dimension must be positive",
            ));
        }
        let input = CHANNELS * patch_size * patch_size;
        Ok(Self {
            patch_size,
            embed_dim,
            image_seed,
            text_seed,
            image_proj: gaussian_matrix(image_seed, embed_dim, input),
            text_proj: gaussian_matrix(text_seed, embed_dim, input),
        })
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn seeds(&self) -> (u64, u64) {
        (self.image_seed, self.text_seed)
    }

    fn input_dim(&self) -> usize {
        CHANNELS * self.patch_size * self.patch_size
    }

    /// Unnormalized image projection `W · resize(img)`; errors when it is zero.
    pub fn project_image(&self, img: &Image) -> Result<Vec<f64>> {
        let small = resize_bilinear(img, self.patch_size, self.patch_size)?;
        let z = mat_vec(&self.image_proj, self.input_dim(), small.data());
        if z.iter().all(|v| *v == 0.0) {
            return Err(Error::DegenerateEmbedding);
        }
        Ok(z)
    }

    pub fn embed_image(&self, img: &Image) -> Result<Vec<f64>> {
        normalized(self.project_image(img)?)
    }

    /// `cos(embed_image(img), target)`; identical to the value from
    /// [`cosine_grad`](Self::cosine_grad).
    pub fn cosine(&self, img: &Image, target: &[f64]) -> Result<f64> {
        cosine_similarity(&self.project_image(img)?, target)
    }

    pub fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let norm = normalize_text(text);
        if norm.is_empty() {
            return Err(Error::invalid("cannot embed empty text"));
        }
        let padded: Vec<char> = format!(" {norm} ").chars().collect();
        let dim = self.input_dim();
        let mut counts = vec![0.0; dim];
        let mut buf = [0u8; 12];
        for tri in padded.windows(3) {
            let mut len = 0;
            for c in tri {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            counts[(fnv1a64(&buf[..len]) % dim as u64) as usize] += 1.0;
        }
        normalized(mat_vec(&self.text_proj, dim, &counts))
    }

    /// `cos(embed_image(img), target)` and its gradient with respect to `img`.
    pub fn cosine_grad(&self, img: &Image, target: &[f64]) -> Result<(f64, GradientTensor)> {
        let z = self.project_image(img)?;
        let zz: f64 = z.iter().map(|v| v * v).sum();
        let tt: f64 = target.iter().map(|v| v * v).sum();
        let cos = cosine_similarity(&z, target)?;
        let inv = 1.0 / (zz * tt).sqrt();
        let dz: Vec<f64> = z
            .iter()
            .zip(target)
            .map(|(zi, ti)| ti * inv - cos * zi / zz)
            .collect();
        let dx = mat_t_vec(&self.image_proj, self.input_dim(), &dz);
        let small = GradientTensor::new(self.patch_size, self.patch_size, dx)?;
        Ok((cos, resize_adjoint(&small, img.height(), img.width())?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateVictimConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    /// Seed of the attacked image encoder `f`.
    pub image_seed: u64,
    /// Seed of the caption encoder `t`.
    pub text_seed: u64,
    /// Seed of the naturalness encoder `h`.
    pub nat_seed: u64,
    pub nat_weight: f64,
}

impl Default for SurrogateVictimConfig {
    fn default() -> Self {
        Self {
            patch_size: 16,
            embed_dim: 64,
            image_seed: 0x5eed_0001,
            text_seed: 0x5eed_0002,
            nat_seed: 0x5eed_0003,
            nat_weight: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SurrogateVictim {
    matcher: SurrogateEmbedder,
    naturalness: SurrogateEmbedder,
    nat_weight: f64,
}

impl SurrogateVictim {
    pub fn new(cfg: SurrogateVictimConfig) -> Result<Self> {
        if !cfg.nat_weight.is_finite() {
            return Err(Error::invalid("naturalness weight must be finite"));
        }
        Ok(Self {
            matcher: SurrogateEmbedder::new(
                cfg.patch_size,
                cfg.embed_dim,
                cfg.image_seed,
                cfg.text_seed,
            )?,
            naturalness: SurrogateEmbedder::new(
                cfg.patch_size,
                cfg.embed_dim,
                cfg.nat_seed,
                cfg.text_seed,
            )?,
            nat_weight: cfg.nat_weight,
        })
    }

    pub fn matcher(&self) -> &SurrogateEmbedder {
        &self.matcher
    }

    pub fn naturalness(&self) -> &SurrogateEmbedder {
        &self.naturalness
    }

    fn check(relit: &Image, clean: &Image) -> Result<()> {
        if !relit.same_shape(clean) {
            return Err(Error::invalid(format!(
                "relit {:?} and clean {:?} differ in shape",
                relit.shape(),
                clean.shape()
            )));
        }
        Ok(())
    }
}

impl VictimBackend for SurrogateVictim {
    fn id(&self) -> &str {
        "surrogate-victim"
    }

    fn has_grad(&self) -> bool {
        true
    }

    fn loss(&self, relit: &Image, clean: &Image, text: &str) -> Result<LossBreakdown> {
        Self::check(relit, clean)?;
        let t = self.matcher.embed_text(text)?;
        let h_i = self.naturalness.project_image(clean)?;
        Ok(LossBreakdown::new(
            1.0 - self.matcher.cosine(relit, &t)?,
            self.nat_weight * self.naturalness.cosine(relit, &h_i)?,
        ))
    }

    fn loss_grad(
        &self,
        relit: &Image,
        clean: &Image,
        text: &str,
    ) -> Result<(LossBreakdown, GradientTensor)> {
        Self::check(relit, clean)?;
        let t = self.matcher.embed_text(text)?;
        let h_i = self.naturalness.project_image(clean)?;
        let (match_cos, g_match) = self.matcher.cosine_grad(relit, &t)?;
        let (nat_cos, g_nat) = self.naturalness.cosine_grad(relit, &h_i)?;
        let data = g_match
            .data()
            .iter()
            .zip(g_nat.data())
            .map(|(m, n)| -m + self.nat_weight * n)
            .collect();
        let grad = GradientTensor::new(relit.height(), relit.width(), data)?;
        Ok((
            LossBreakdown::new(1.0 - match_cos, self.nat_weight * nat_cos),
            grad,
        ))
    }
}

/// Victim served by a remote model over the wire protocol (`POST /loss_grad`).
#[derive(Clone, Debug)]
pub struct RemoteVictim {
    client: Arc<RemoteClient>,
}

impl RemoteVictim {
    pub fn new(client: Arc<RemoteClient>) -> Self {
        Self { client }
    }
}

impl VictimBackend for RemoteVictim {
    fn id(&self) -> &str {
        self.client.id()
    }

    fn has_grad(&self) -> bool {
        true
    }

    fn loss(&self, relit: &Image, clean: &Image, text: &str) -> Result<LossBreakdown> {
        self.loss_grad(relit, clean, text).map(|(l, _)| l)
    }

    fn loss_grad(
        &self,
        relit: &Image,
        clean: &Image,
        text: &str,
    ) -> Result<(LossBreakdown, GradientTensor)> {
        let req = LossGradRequest {
            image: WireTensor::from_image(relit),
            clean_image: WireTensor::from_image(clean),
            text: text.to_string(),
        };
        let resp: LossGradResponse = self.client.post("/loss_grad", &req)?;
        let grad = resp.grad.to_gradient()?;
        if grad.shape() != relit.shape() {
            return Err(Error::BackendUnavailable {
                backend: self.id().to_string(),
                cause: format!(
                    "gradient shape {:?} does not match image {:?}",
                    grad.shape(),
                    relit.shape()
                ),
            });
        }
        // the server reports its own total; keep it rather than re-summing
        let loss = LossBreakdown {
            total: resp.loss,
            match_term: resp.match_term,
            nat_term: resp.nat_term,
        };
        Ok((loss, grad))
    }
}
