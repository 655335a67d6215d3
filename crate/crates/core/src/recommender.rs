//! Initial lighting parameters: a chat-completion client with a versioned prompt
//! template, and a deterministic image-statistics fallback.

use std::path::PathBuf;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::imagecore::{png_encode, Image, CHANNELS};
use crate::lightgen::{Direction, LightingParams, DEFAULT_WEIGHT};
use crate::wire::{build_agent, read_json, Gate};

pub const PROMPT_VERSION: &str = "lighting_v1";
pub const PROMPT_TEMPLATE: &str = include_str!("prompts/lighting_v1.txt");
const SUMMARY_SLOT: &str = "{summary}";

const START_VALUE: f64 = 0.9;
const END_VALUE: f64 = 0.35;
const CENTROID_DEAD_ZONE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecommendationSource {
    Llm,
    Heuristic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub params: LightingParams,
    pub source: RecommendationSource,
    /// The model's reply, or the failure that forced the fallback.
    pub raw_response: Option<String>,
}

pub fn build_prompt(summary: &str) -> String {
    build_prompt_with(PROMPT_TEMPLATE, summary)
}

pub fn build_prompt_with(template: &str, summary: &str) -> String {
    template.replace(SUMMARY_SLOT, summary.trim())
}

/// The first balanced `{...}` in `raw`, ignoring braces inside JSON strings.
fn first_json_object(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in raw[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&raw[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

pub fn parse_hex_color(s: &str) -> Result<[f64; 3]> {
    let hex = s
        .trim()
        .strip_prefix('#')
        .filter(|h| h.len() == 6 && h.chars().all(|c| c.is_ascii_hexdigit()))
        .ok_or_else(|| Error::Parse(format!("expected a #RRGGBB color, got {s:?}")))?;
    let channel =
        |i: usize| u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).map(|v| f64::from(v) / 255.0);
    Ok([
        channel(0).map_err(|e| Error::Parse(e.to_string()))?,
        channel(1).map_err(|e| Error::Parse(e.to_string()))?,
        channel(2).map_err(|e| Error::Parse(e.to_string()))?,
    ])
}

/// Parses a model reply into lighting parameters with the weight fixed at 1.0.
pub fn parse_response(raw: &str) -> Result<LightingParams> {
    let object =
        first_json_object(raw).ok_or_else(|| Error::Parse("no JSON object in response".into()))?;
    let value: Value = serde_json::from_str(object)
        .map_err(|e| Error::Parse(format!("invalid JSON object: {e}")))?;
    let field = |key: &str| {
        value
            .get(key)
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Parse(format!("missing string field {key:?}")))
    };
    let start = parse_hex_color(field("start_color")?)?;
    let end = parse_hex_color(field("end_color")?)?;
    let direction: Direction = field("direction")?.parse()?;
    LightingParams::new(start, end, direction, DEFAULT_WEIGHT)
}

fn luminance(px: &[f64]) -> f64 {
    0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
}

fn rgb_to_hue_sat(rgb: [f64; 3]) -> (f64, f64) {
    let max = rgb.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = rgb.iter().copied().fold(f64::INFINITY, f64::min);
    let delta = max - min;
    if delta <= 0.0 || max <= 0.0 {
        return (0.0, 0.0);
    }
    let [r, g, b] = rgb;
    let sector = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    (sector / 6.0, delta / max)
}

fn hsv_to_rgb(hue: f64, sat: f64, value: f64) -> [f64; 3] {
    let h6 = (hue.rem_euclid(1.0)) * 6.0;
    let sector = (h6.floor() as usize).min(5);
    let f = h6 - sector as f64;
    let p = value * (1.0 - sat);
    let q = value * (1.0 - sat * f);
    let t = value * (1.0 - sat * (1.0 - f));
    let rgb = match sector {
        0 => [value, t, p],
        1 => [q, value, p],
        2 => [p, value, t],
        3 => [p, q, value],
        4 => [t, p, value],
        _ => [value, p, q],
    };
    rgb.map(|c| c.clamp(0.0, 1.0))
}

/// Offline recommendation from image statistics.
///
/// The start color is the mean of the brightest luminance quartile raised to HSV value
/// 0.9, the end color the same hue at value 0.35. The ramp starts on the side holding
/// the luminance centroid, along whichever axis the centroid is further off-center.
pub fn heuristic_fallback(img: &Image) -> LightingParams {
    let (h, w) = img.shape();
    let lum: Vec<f64> = img.data().chunks_exact(CHANNELS).map(luminance).collect();

    let mut order: Vec<usize> = (0..lum.len()).collect();
    order.sort_by(|&a, &b| lum[b].total_cmp(&lum[a]));
    let top = lum.len().div_ceil(4).max(1);
    let mut mean = [0.0; 3];
    for &i in &order[..top] {
        let px = img.data()[i * CHANNELS..(i + 1) * CHANNELS].to_vec();
        for c in 0..CHANNELS {
            mean[c] += px[c];
        }
    }
    let mean = mean.map(|v| v / top as f64);
    let (hue, sat) = rgb_to_hue_sat(mean);

    let total: f64 = lum.iter().sum();
    let (mut cx, mut cy) = (0.0, 0.0);
    if total > 0.0 {
        for (i, l) in lum.iter().enumerate() {
            let (y, x) = (i / w, i % w);
            cx += l * ((x as f64 + 0.5) / w as f64 - 0.5);
            cy += l * ((y as f64 + 0.5) / h as f64 - 0.5);
        }
        cx /= total;
        cy /= total;
    }
    let direction = if cx.abs() >= cy.abs() {
        if cx > CENTROID_DEAD_ZONE {
            Direction::RightToLeft
        } else {
            Direction::LeftToRight
        }
    } else if cy < -CENTROID_DEAD_ZONE {
        Direction::TopToBottom
    } else if cy > CENTROID_DEAD_ZONE {
        Direction::BottomToTop
    } else {
        Direction::LeftToRight
    };

    LightingParams::new(
        hsv_to_rgb(hue, sat, START_VALUE),
        hsv_to_rgb(hue, sat, END_VALUE),
        direction,
        DEFAULT_WEIGHT,
    )
    .expect("heuristic colors lie in [0, 1]")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecommenderConfig {
    /// Full chat-completions URL. No endpoint means heuristic only.
    pub endpoint: Option<String>,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    /// Attach the image as a base64 PNG data URL next to the text prompt.
    pub attach_image: bool,
    pub timeout_secs: f64,
    pub max_in_flight: usize,
    /// Replacement template file; must contain `{summary}`.
    pub prompt_template: Option<PathBuf>,
}

impl Default for RecommenderConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            model: "gpt-4o".into(),
            api_key_env: None,
            attach_image: false,
            timeout_secs: 60.0,
            max_in_flight: 4,
            prompt_template: None,
        }
    }
}

#[derive(Debug)]
pub struct Recommender {
    config: RecommenderConfig,
    template: String,
    agent: ureq::Agent,
    gate: Gate,
}

impl Default for Recommender {
    fn default() -> Self {
        Self::heuristic()
    }
}

impl Recommender {
    pub fn new(config: RecommenderConfig) -> Result<Self> {
        let template = match &config.prompt_template {
            Some(path) => std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
            None => PROMPT_TEMPLATE.to_string(),
        };
        if !template.contains(SUMMARY_SLOT) {
            return Err(Error::invalid(format!(
                "prompt template lacks {SUMMARY_SLOT}"
            )));
        }
        let agent = build_agent(config.timeout_secs);
        let gate = Gate::new(config.max_in_flight);
        Ok(Self {
            config,
            template,
            agent,
            gate,
        })
    }

    /// A recommender with no endpoint.
    pub fn heuristic() -> Self {
        Self::new(RecommenderConfig::default()).expect("built-in template is valid")
    }

    pub fn config(&self) -> &RecommenderConfig {
        &self.config
    }

    pub fn prompt(&self, summary: &str) -> String {
        build_prompt_with(&self.template, summary)
    }

    /// Never fails: transport or parse failures fall back to the heuristic, keeping
    /// the failure text in `raw_response`.
    pub fn recommend(&self, img: &Image, summary: &str) -> Recommendation {
        let Some(endpoint) = &self.config.endpoint else {
            return Recommendation {
                params: heuristic_fallback(img),
                source: RecommendationSource::Heuristic,
                raw_response: None,
            };
        };
        let outcome =
            self.query(endpoint, img, summary)
                .and_then(|raw| match parse_response(&raw) {
                    Ok(params) => Ok((params, raw)),
                    Err(e) => Err(Error::Parse(format!("{e}; response: {raw}"))),
                });
        match outcome {
            Ok((params, raw)) => Recommendation {
                params,
                source: RecommendationSource::Llm,
                raw_response: Some(raw),
            },
            Err(e) => {
                log::warn!("recommender fell back to heuristic: {e}");
                Recommendation {
                    params: heuristic_fallback(img),
                    source: RecommendationSource::Heuristic,
                    raw_response: Some(e.to_string()),
                }
            }
        }
    }

    fn request_body(&self, img: &Image, summary: &str) -> Result<Value> {
        let prompt = self.prompt(summary);
        let content = if self.config.attach_image {
            let png = base64::engine::general_purpose::STANDARD.encode(png_encode(img)?);
            json!([
                {"type": "text", "text": prompt},
                {"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{png}")}}
            ])
        } else {
            Value::String(prompt)
        };
        Ok(json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": content}],
        }))
    }

    fn query(&self, endpoint: &str, img: &Image, summary: &str) -> Result<String> {
        let body = self.request_body(img, summary)?;
        let mut req = self.agent.post(endpoint);
        if let Some(var) = &self.config.api_key_env {
            match std::env::var(var) {
                Ok(key) => req = req.header("Authorization", &format!("Bearer {key}")),
                Err(_) => log::warn!("environment variable {var} is not set; sending no API key"),
            }
        }
        let unavailable = |cause: String| Error::BackendUnavailable {
            backend: format!("recommender:{endpoint}"),
            cause,
        };
        let _permit = self.gate.acquire();
        let mut resp = req
            .send_json(&body)
            .map_err(|e| unavailable(e.to_string()))?;
        if !resp.status().is_success() {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(unavailable(format!("HTTP {}: {text}", resp.status())));
        }
        let value: Value = read_json(&mut resp).map_err(|e| unavailable(e.to_string()))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| Error::Parse(format!("no message content in reply: {value}")))
    }
}
