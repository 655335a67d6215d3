//! Parametric reference lighting images and their parameter vector-Jacobian product.
//!
//! A lighting image is a directional ramp: a solid band of the start color covering
//! `weight / 2` of the axis, followed by a linear blend into the end color.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{GradientTensor, Image, CHANNELS};

pub const MAX_WEIGHT: f64 = 2.0;
pub const DEFAULT_WEIGHT: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LeftToRight,
    RightToLeft,
    TopToBottom,
    BottomToTop,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::LeftToRight,
        Direction::RightToLeft,
        Direction::TopToBottom,
        Direction::BottomToTop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::LeftToRight => "left_to_right",
            Direction::RightToLeft => "right_to_left",
            Direction::TopToBottom => "top_to_bottom",
            Direction::BottomToTop => "bottom_to_top",
        }
    }

    /// Position of pixel `(y, x)` along the ramp, in `(0, 1)`.
    ///
    /// Reversed directions mirror the pixel index rather than computing `1 - t`, so
    /// that opposite directions are exact flips of one another.
    fn coordinate(self, y: usize, x: usize, height: usize, width: usize) -> f64 {
        let (pos, len) = match self {
            Direction::LeftToRight => (x, width),
            Direction::RightToLeft => (width - 1 - x, width),
            Direction::TopToBottom => (y, height),
            Direction::BottomToTop => (height - 1 - y, height),
        };
        (pos as f64 + 0.5) / len as f64
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        Direction::ALL
            .into_iter()
            .find(|d| d.as_str() == norm)
            .ok_or_else(|| Error::Parse(format!("unknown lighting direction `{s}`")))
    }
}

/// Start/end colors, ramp direction and start-color weight of a lighting image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightingParams {
    pub start_color: [f64; 3],
    pub end_color: [f64; 3],
    pub direction: Direction,
    pub weight: f64,
}

impl LightingParams {
    pub fn new(
        start_color: [f64; 3],
        end_color: [f64; 3],
        direction: Direction,
        weight: f64,
    ) -> Result<Self> {
        let p = Self {
            start_color,
            end_color,
            direction,
            weight,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, c) in [("start", self.start_color), ("end", self.end_color)] {
            if c.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!("{name} color {c:?} outside [0, 1]")));
            }
        }
        if !self.weight.is_finite() || !(0.0..=MAX_WEIGHT).contains(&self.weight) {
            return Err(Error::invalid(format!(
                "weight {} outside [0, {MAX_WEIGHT}]",
                self.weight
            )));
        }
        Ok(())
    }

    /// Clamps colors into `[0, 1]` and the weight into `[0, 2]`.
    pub fn project(&mut self) {
        for v in self.start_color.iter_mut().chain(self.end_color.iter_mut()) {
            *v = v.clamp(0.0, 1.0);
        }
        self.weight = self.weight.clamp(0.0, MAX_WEIGHT);
    }

    /// The continuous parameters as a flat vector `[c_s; c_e; w]`.
    pub fn to_vector(&self) -> [f64; 7] {
        let s = self.start_color;
        let e = self.end_color;
        [s[0], s[1], s[2], e[0], e[1], e[2], self.weight]
    }

    pub fn with_vector(&self, v: [f64; 7]) -> Self {
        Self {
            start_color: [v[0], v[1], v[2]],
            end_color: [v[3], v[4], v[5]],
            direction: self.direction,
            weight: v[6],
        }
    }
}

/// Gradient of a scalar objective with respect to the continuous lighting parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ParamGradient {
    pub start_color: [f64; 3],
    pub end_color: [f64; 3],
    pub weight: f64,
}

impl ParamGradient {
    pub fn to_vector(&self) -> [f64; 7] {
        let s = self.start_color;
        let e = self.end_color;
        [s[0], s[1], s[2], e[0], e[1], e[2], self.weight]
    }
}

fn blend_factor(t: f64, s: f64) -> f64 {
    if s >= 1.0 || t <= s {
        0.0
    } else {
        (t - s) / (1.0 - s)
    }
}

fn check_nan(p: &LightingParams) -> Result<()> {
    if p.to_vector().iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("NaN lighting parameter"));
    }
    p.validate()
}

pub fn generate_lighting_image(p: &LightingParams, height: usize, width: usize) -> Result<Image> {
    check_nan(p)?;
    let s = p.weight / 2.0;
    Image::from_fn(height, width, |y, x| {
        let b = blend_factor(p.direction.coordinate(y, x, height, width), s);
        std::array::from_fn(|c| p.start_color[c] + b * (p.end_color[c] - p.start_color[c]))
    })
}

/// Pulls a gradient on the lighting image back onto `(c_s, c_e, w)`.
///
/// The ramp kink at `t == s` gets subgradient zero.
pub fn lighting_vjp_params(
    p: &LightingParams,
    height: usize,
    width: usize,
    grad_l: &GradientTensor,
) -> Result<ParamGradient> {
    check_nan(p)?;
    if grad_l.shape() != (height, width) {
        return Err(Error::invalid(format!(
            "gradient shape {:?} does not match lighting image {height}x{width}",
            grad_l.shape()
        )));
    }
    let s = p.weight / 2.0;
    let g = grad_l.data();
    let mut out = ParamGradient::default();
    for y in 0..height {
        for x in 0..width {
            let t = p.direction.coordinate(y, x, height, width);
            let b = blend_factor(t, s);
            let db_ds = if s < 1.0 && t > s {
                (t - 1.0) / ((1.0 - s) * (1.0 - s))
            } else {
                0.0
            };
            let base = (y * width + x) * CHANNELS;
            for c in 0..CHANNELS {
                let gc = g[base + c];
                out.start_color[c] += (1.0 - b) * gc;
                out.end_color[c] += b * gc;
                out.weight += 0.5 * (p.end_color[c] - p.start_color[c]) * db_ds * gc;
            }
        }
    }
    Ok(out)
}
