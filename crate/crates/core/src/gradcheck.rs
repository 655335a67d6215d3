//! Finite-difference verification of the analytic gradients.
//!
//! Each suite draws seeded random instances, contracts the forward map with a random
//! cotangent, and compares central differences against the analytic VJP.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::imagecore::{GradientTensor, Image};
use crate::lightgen::{generate_lighting_image, lighting_vjp_params, Direction, LightingParams};
use crate::relight::{RelightBackend, SurrogateRelighter};
use crate::victim::{SurrogateVictim, SurrogateVictimConfig, VictimBackend};

pub const DEFAULT_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_INSTANCES: usize = 20;

const STEP: f64 = 1e-3;
const LOSS_STEP: f64 = 1e-5;
/// Components smaller than this are compared absolutely.
const ABS_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GradModule {
    Lightgen,
    Relight,
    Victim,
}

impl GradModule {
    pub const ALL: [GradModule; 3] = [Self::Lightgen, Self::Relight, Self::Victim];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Lightgen => "lightgen",
            Self::Relight => "relight",
            Self::Victim => "victim",
        }
    }
}

impl std::str::FromStr for GradModule {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| crate::error::Error::Parse(format!("unknown gradient module {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub module: GradModule,
    pub instances: usize,
    pub tolerance: f64,
    /// Per-instance relative errors.
    pub errors: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn failures(&self) -> usize {
        self.errors
            .iter()
            .filter(|e| e.is_nan() || **e > self.tolerance)
            .count()
    }

    pub fn passed(&self) -> bool {
        self.errors.len() == self.instances && self.failures() == 0
    }
}

fn rel_scalar(a: f64, f: f64) -> f64 {
    let scale = a.abs().max(f.abs());
    if scale < ABS_FLOOR {
        (a - f).abs()
    } else {
        (a - f).abs() / scale
    }
}

fn rel_vector(a: &[f64], f: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(f)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nf = f.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nf);
    if scale < ABS_FLOOR {
        diff
    } else {
        diff / scale
    }
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, lo: f64, hi: f64) -> Image {
    let data = (0..h * w * 3).map(|_| rng.random_range(lo..hi)).collect();
    Image::new(h, w, data).expect("values in range")
}

fn random_cotangent(rng: &mut ChaCha8Rng, h: usize, w: usize) -> GradientTensor {
    let data = (0..h * w * 3)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    GradientTensor::new(h, w, data).expect("finite")
}

/// Whether any pixel's axis coordinate lies within `margin` of the ramp start `s`.
fn near_kink(p: &LightingParams, h: usize, w: usize, margin: f64) -> bool {
    let s = p.weight / 2.0;
    let n = match p.direction {
        Direction::LeftToRight | Direction::RightToLeft => w,
        Direction::TopToBottom | Direction::BottomToTop => h,
    };
    (0..n).any(|i| ((i as f64 + 0.5) / n as f64 - s).abs() < margin)
}

/// Component-wise check of the lighting-parameter VJP.
pub fn check_lightgen(instances: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(instances);
    while errors.len() < instances {
        let (h, w) = (rng.random_range(3..12), rng.random_range(3..12));
        let color = |rng: &mut ChaCha8Rng| [0; 3].map(|_| rng.random_range(0.01..0.99));
        let p = LightingParams::new(
            color(&mut rng),
            color(&mut rng),
            Direction::ALL[rng.random_range(0..4)],
            rng.random_range(0.05..1.9),
        )?;
        if near_kink(&p, h, w, 2.0 * STEP) {
            continue;
        }
        let g = random_cotangent(&mut rng, h, w);
        let analytic = lighting_vjp_params(&p, h, w, &g)?.to_vector();
        let base = p.to_vector();
        let mut worst = 0.0f64;
        for k in 0..7 {
            let mut vp = base;
            let mut vm = base;
            vp[k] += STEP;
            vm[k] -= STEP;
            let jp =
                GradientTensor::from(&generate_lighting_image(&p.with_vector(vp), h, w)?).dot(&g);
            let jm =
                GradientTensor::from(&generate_lighting_image(&p.with_vector(vm), h, w)?).dot(&g);
            worst = worst.max(rel_scalar(analytic[k], (jp - jm) / (2.0 * STEP)));
        }
        errors.push(worst);
    }
    Ok(GradCheckReport {
        module: GradModule::Lightgen,
        instances,
        tolerance: DEFAULT_TOLERANCE,
        errors,
    })
}

/// Full finite-difference check of the surrogate relighter's VJP with respect to the
/// lighting image.
pub fn check_relight(instances: usize, seed: u64) -> Result<GradCheckReport> {
    let relighter = SurrogateRelighter::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(instances);
    for _ in 0..instances {
        let (h, w) = (rng.random_range(2..7), rng.random_range(2..7));
        let l = random_image(&mut rng, h, w, 0.05, 0.95);
        let img = random_image(&mut rng, h, w, 0.0, 1.0);
        let g = random_cotangent(&mut rng, h, w);
        let analytic = relighter.relight_vjp(&l, &img, &g, 0)?;
        let mut fd = vec![0.0; l.data().len()];
        for (k, slot) in fd.iter_mut().enumerate() {
            let mut d = l.data().to_vec();
            d[k] += STEP;
            let jp =
                GradientTensor::from(&relighter.relight(&Image::new(h, w, d.clone())?, &img, 0)?)
                    .dot(&g);
            d[k] -= 2.0 * STEP;
            let jm =
                GradientTensor::from(&relighter.relight(&Image::new(h, w, d)?, &img, 0)?).dot(&g);
            *slot = (jp - jm) / (2.0 * STEP);
        }
        errors.push(rel_vector(analytic.data(), &fd));
    }
    Ok(GradCheckReport {
        module: GradModule::Relight,
        instances,
        tolerance: DEFAULT_TOLERANCE,
        errors,
    })
}

/// Full finite-difference check of the surrogate victim's loss gradient with respect
/// to the relit image.
pub fn check_victim(instances: usize, seed: u64) -> Result<GradCheckReport> {
    let victim = SurrogateVictim::new(SurrogateVictimConfig::default())?;
    let pool = crate::harness::synthetic::caption_pool();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(instances);
    for _ in 0..instances {
        let (h, w) = (rng.random_range(3..9), rng.random_range(3..9));
        let clean = random_image(&mut rng, h, w, 0.0, 1.0);
        let relit = random_image(&mut rng, h, w, 0.05, 0.95);
        let text = &pool[rng.random_range(0..pool.len())];
        let (_, analytic) = victim.loss_grad(&relit, &clean, text)?;
        let mut fd = vec![0.0; relit.data().len()];
        for (k, slot) in fd.iter_mut().enumerate() {
            let mut d = relit.data().to_vec();
            d[k] += LOSS_STEP;
            let jp = victim
                .loss(&Image::new(h, w, d.clone())?, &clean, text)?
                .total;
            d[k] -= 2.0 * LOSS_STEP;
            let jm = victim.loss(&Image::new(h, w, d)?, &clean, text)?.total;
            *slot = (jp - jm) / (2.0 * LOSS_STEP);
        }
        errors.push(rel_vector(analytic.data(), &fd));
    }
    Ok(GradCheckReport {
        module: GradModule::Victim,
        instances,
        tolerance: DEFAULT_TOLERANCE,
        errors,
    })
}

pub fn check(module: GradModule, instances: usize, seed: u64) -> Result<GradCheckReport> {
    match module {
        GradModule::Lightgen => check_lightgen(instances, seed),
        GradModule::Relight => check_relight(instances, seed),
        GradModule::Victim => check_victim(instances, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        for m in GradModule::ALL {
            let r = check(m, 4, 99).unwrap();
            assert!(r.passed(), "{m:?}: {:?}", r.errors);
        }
    }

    #[test]
    fn module_names_parse() {
        for m in GradModule::ALL {
            assert_eq!(m.as_str().parse::<GradModule>().unwrap(), m);
        }
        assert!("nope".parse::<GradModule>().is_err());
    }

    #[test]
    fn detects_a_wrong_gradient() {
        assert!(rel_vector(&[1.0, 2.0], &[1.0, 2.1]) > DEFAULT_TOLERANCE);
        assert!(rel_scalar(1e-9, 2e-9) < DEFAULT_TOLERANCE);
    }
}
