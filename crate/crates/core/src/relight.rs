//! Relighting backends: `R = M(L, I)`.
//!
//! [`SurrogateRelighter`] is a differentiable stand-in, `R = I * (floor + gain * L)`,
//! with `floor + gain <= 1` so no clamp is ever needed. [`RemoteRelighter`] forwards to
//! a server speaking the [`wire`](crate::wire) protocol.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{GradientTensor, Image};
use crate::wire::{
    RelightRequest, RelightResponse, RelightVjpRequest, RelightVjpResponse, RemoteClient,
    WireTensor,
};

pub trait RelightBackend: Send + Sync {
    fn id(&self) -> &str;

    fn has_vjp(&self) -> bool;

    /// Relights `clean` under the lighting image `lighting`.
    fn relight(&self, lighting: &Image, clean: &Image, seed: u64) -> Result<Image>;

    /// Vector-Jacobian product of [`relight`](Self::relight) with respect to `lighting`.
    fn relight_vjp(
        &self,
        lighting: &Image,
        clean: &Image,
        grad_out: &GradientTensor,
        seed: u64,
    ) -> Result<GradientTensor>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateRelightConfig {
    pub floor: f64,
    pub gain: f64,
}

impl Default for SurrogateRelightConfig {
    fn default() -> Self {
        Self {
            floor: 0.3,
            gain: 0.7,
        }
    }
}

impl SurrogateRelightConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.floor.is_finite()
            && self.gain.is_finite()
            && self.floor >= 0.0
            && self.gain >= 0.0
            && self.floor + self.gain <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "surrogate relight needs floor, gain >= 0 and floor + gain <= 1, got {} / {}",
                self.floor, self.gain
            )))
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct SurrogateRelighter {
    config: SurrogateRelightConfig,
}

impl SurrogateRelighter {
    pub fn new(config: SurrogateRelightConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> SurrogateRelightConfig {
        self.config
    }

    fn check_shapes(lighting: &Image, clean: &Image) -> Result<()> {
        if !lighting.same_shape(clean) {
            return Err(Error::invalid(format!(
                "lighting {:?} and clean image {:?} differ in shape",
                lighting.shape(),
                clean.shape()
            )));
        }
        Ok(())
    }
}

impl RelightBackend for SurrogateRelighter {
    fn id(&self) -> &str {
        "surrogate-relight"
    }

    fn has_vjp(&self) -> bool {
        true
    }

    fn relight(&self, lighting: &Image, clean: &Image, _seed: u64) -> Result<Image> {
        Self::check_shapes(lighting, clean)?;
        let SurrogateRelightConfig { floor, gain } = self.config;
        let data = clean
            .data()
            .iter()
            .zip(lighting.data())
            .map(|(i, l)| i * (floor + gain * l))
            .collect();
        Image::from_clamped(clean.height(), clean.width(), data)
    }

    fn relight_vjp(
        &self,
        lighting: &Image,
        clean: &Image,
        grad_out: &GradientTensor,
        _seed: u64,
    ) -> Result<GradientTensor> {
        Self::check_shapes(lighting, clean)?;
        if grad_out.shape() != clean.shape() {
            return Err(Error::invalid(format!(
                "grad_out {:?} does not match image {:?}",
                grad_out.shape(),
                clean.shape()
            )));
        }
        let gain = self.config.gain;
        let data = grad_out
            .data()
            .iter()
            .zip(clean.data())
            .map(|(g, i)| g * gain * i)
            .collect();
        GradientTensor::new(clean.height(), clean.width(), data)
    }
}

/// Relighting served by a remote model over the wire protocol.
///
/// Remote sampling may be stochastic; the seed is forwarded verbatim. Servers may
/// answer VJP requests with an approximate gradient, which is logged.
#[derive(Clone, Debug)]
pub struct RemoteRelighter {
    client: Arc<RemoteClient>,
}

impl RemoteRelighter {
    pub fn new(client: Arc<RemoteClient>) -> Self {
        Self { client }
    }
}

impl RelightBackend for RemoteRelighter {
    fn id(&self) -> &str {
        self.client.id()
    }

    fn has_vjp(&self) -> bool {
        true
    }

    fn relight(&self, lighting: &Image, clean: &Image, seed: u64) -> Result<Image> {
        let req = RelightRequest {
            lighting: WireTensor::from_image(lighting),
            image: WireTensor::from_image(clean),
            seed,
        };
        let resp: RelightResponse = self.client.post("/relight", &req)?;
        let relit = resp.relit.to_image()?;
        if !relit.same_shape(clean) {
            return Err(Error::BackendUnavailable {
                backend: self.id().to_string(),
                cause: format!(
                    "relit shape {:?} does not match clean image {:?}",
                    relit.shape(),
                    clean.shape()
                ),
            });
        }
        Ok(relit)
    }

    fn relight_vjp(
        &self,
        lighting: &Image,
        clean: &Image,
        grad_out: &GradientTensor,
        seed: u64,
    ) -> Result<GradientTensor> {
        let req = RelightVjpRequest {
            lighting: WireTensor::from_image(lighting),
            image: WireTensor::from_image(clean),
            grad_out: WireTensor::from_gradient(grad_out),
            seed,
        };
        let resp: RelightVjpResponse = self.client.post("/relight_vjp", &req)?;
        if resp.approx {
            log::debug!(
                "{}: relight_vjp returned an approximate gradient",
                self.id()
            );
        }
        let grad = resp.grad_lighting.to_gradient()?;
        if grad.shape() != lighting.shape() {
            return Err(Error::BackendUnavailable {
                backend: self.id().to_string(),
                cause: format!(
                    "grad_lighting shape {:?} does not match lighting {:?}",
                    grad.shape(),
                    lighting.shape()
                ),
            });
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap()
    }

    fn random_grad(rng: &mut ChaCha8Rng, h: usize, w: usize) -> GradientTensor {
        GradientTensor::new(
            h,
            w,
            (0..h * w * 3)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_and_dark_lighting() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = SurrogateRelighter::default();
        let img = random_image(&mut rng, 4, 5);
        let ones = Image::constant(4, 5, [1.0; 3]).unwrap();
        let zeros = Image::constant(4, 5, [0.0; 3]).unwrap();
        let lit = r.relight(&ones, &img, 0).unwrap();
        for (a, b) in lit.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-15);
        }
        let dark = r.relight(&zeros, &img, 0).unwrap();
        for (a, b) in dark.data().iter().zip(img.data()) {
            assert!((a - 0.3 * b).abs() < 1e-15);
        }
        let black = Image::constant(4, 5, [0.0; 3]).unwrap();
        let any = random_image(&mut rng, 4, 5);
        assert!(r
            .relight(&any, &black, 0)
            .unwrap()
            .data()
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn shape_mismatch_and_bad_config() {
        let r = SurrogateRelighter::default();
        let a = Image::constant(2, 3, [0.5; 3]).unwrap();
        let b = Image::constant(3, 2, [0.5; 3]).unwrap();
        assert!(matches!(
            r.relight(&a, &b, 0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(SurrogateRelighter::new(SurrogateRelightConfig {
            floor: 0.5,
            gain: 0.6
        })
        .is_err());
    }

    #[test]
    fn vjp_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = SurrogateRelighter::default();
        let l = random_image(&mut rng, 3, 3);
        let i = random_image(&mut rng, 3, 3);
        let z = GradientTensor::zeros(3, 3).unwrap();
        assert!(r.relight_vjp(&l, &i, &z, 0).unwrap().is_zero());
        let ones = Image::constant(3, 3, [1.0; 3]).unwrap();
        let g = random_grad(&mut rng, 3, 3);
        let out = r.relight_vjp(&l, &ones, &g, 0).unwrap();
        for (a, b) in out.data().iter().zip(g.data()) {
            assert!((a - 0.7 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn monotone_in_lighting() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = SurrogateRelighter::default();
        for _ in 0..20 {
            let i = random_image(&mut rng, 4, 4);
            let l1 = random_image(&mut rng, 4, 4);
            let l2 = Image::from_clamped(
                4,
                4,
                l1.data()
                    .iter()
                    .map(|v| v + rng.random_range(0.0..0.3))
                    .collect(),
            )
            .unwrap();
            let a = r.relight(&l1, &i, 0).unwrap();
            let b = r.relight(&l2, &i, 0).unwrap();
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x <= y));
        }
    }

    #[test]
    fn vjp_dot_product_transpose() {
        // relight is affine in L: <relight(L1) - relight(L0), g> = <L1 - L0, vjp(g)>
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = SurrogateRelighter::default();
        for _ in 0..20 {
            let (h, w) = (rng.random_range(1..8), rng.random_range(1..8));
            let i = random_image(&mut rng, h, w);
            let l0 = random_image(&mut rng, h, w);
            let l1 = random_image(&mut rng, h, w);
            let g = random_grad(&mut rng, h, w);
            let r0 = r.relight(&l0, &i, 0).unwrap();
            let r1 = r.relight(&l1, &i, 0).unwrap();
            let lhs: f64 = r1
                .data()
                .iter()
                .zip(r0.data())
                .zip(g.data())
                .map(|((a, b), c)| (a - b) * c)
                .sum();
            let v = r.relight_vjp(&l0, &i, &g, 0).unwrap();
            let rhs: f64 = l1
                .data()
                .iter()
                .zip(l0.data())
                .zip(v.data())
                .map(|((a, b), c)| (a - b) * c)
                .sum();
            assert!((lhs - rhs).abs() <= 1e-5);
        }
    }
}
