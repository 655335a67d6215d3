//! Adversarial relighting against vision-language models.
//!
//! A clean image `I` is relit as `R = relight(L, I)` under a reference lighting image
//! `L`, itself a color ramp `G(c_s, c_e, d, w)`. The attack maximizes
//! `J = (1 - cos(f(R), t(T))) + λ · cos(h(R), h(I))`, first over the ramp parameters
//! and then over the pixels of `L` with gradients averaged across rescaled copies.
//!
//! Relighting and victim models are pluggable: differentiable surrogates ship in this
//! crate, and real models attach through an HTTP gradient-oracle protocol ([`wire`]).

pub mod attack;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod imagecore;
pub mod lightgen;
pub mod metrics;
pub mod recommender;
pub mod relight;
pub mod victim;
pub mod wire;

pub use attack::{
    adapt_classifier_attack, optimize_lighting_image_sga, optimize_lighting_params, run_lightd,
    run_lightd_from, AttackConfig, AttackResult, CandidateGenerator,
};
pub use error::{Error, Result};
pub use imagecore::{GradientTensor, Image};
pub use lightgen::{generate_lighting_image, lighting_vjp_params, Direction, LightingParams};
pub use recommender::{Recommendation, RecommendationSource, Recommender};
pub use relight::{RelightBackend, SurrogateRelighter};
pub use victim::{LossBreakdown, SurrogateVictim, VictimBackend};
