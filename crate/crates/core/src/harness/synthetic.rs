//! Deterministic synthetic scenes, captions and photo-like textures for desk-scale
//! runs and tests.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::derive_seed;
use crate::error::{Error, Result};
use crate::imagecore::{write_png, Image};

const COLORS: [(&str, [f64; 3]); 10] = [
    ("red", [0.85, 0.15, 0.12]),
    ("orange", [0.95, 0.55, 0.1]),
    ("yellow", [0.95, 0.88, 0.2]),
    ("green", [0.2, 0.7, 0.25]),
    ("blue", [0.15, 0.3, 0.85]),
    ("purple", [0.55, 0.2, 0.7]),
    ("white", [0.95, 0.95, 0.93]),
    ("black", [0.08, 0.08, 0.1]),
    ("brown", [0.5, 0.32, 0.15]),
    ("gray", [0.5, 0.5, 0.52]),
];

const OBJECTS: [&str; 10] = [
    "car", "dog", "cat", "bicycle", "boat", "umbrella", "kite", "bus", "horse", "chair",
];

const PLACES: [&str; 10] = [
    "on a city street",
    "in a grassy park",
    "on a sandy beach",
    "next to a brick wall",
    "under a cloudy sky",
    "in a small kitchen",
    "near a river bank",
    "in front of a house",
    "on a snowy hill",
    "inside a parking garage",
];

fn caption_parts(index: usize) -> (usize, usize, usize) {
    let color = index % COLORS.len();
    let object = (index / COLORS.len()) % OBJECTS.len();
    let place = (color + 3 * object) % PLACES.len();
    (color, object, place)
}

fn caption_at(index: usize) -> String {
    let (c, o, p) = caption_parts(index);
    format!("a {} {} {}", COLORS[c].0, OBJECTS[o], PLACES[p])
}

/// One hundred distinct captions, each naming a color, an object and a place.
pub fn caption_pool() -> Vec<String> {
    (0..COLORS.len() * OBJECTS.len()).map(caption_at).collect()
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * t)
}

fn jitter(rng: &mut ChaCha8Rng, rgb: [f64; 3], amount: f64) -> [f64; 3] {
    rgb.map(|v| (v + rng.random_range(-amount..=amount)).clamp(0.0, 1.0))
}

struct Scene {
    caption_index: usize,
    image: Image,
}

fn scene(seed: u64, h: usize, w: usize) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let caption_index = rng.random_range(0..COLORS.len() * OBJECTS.len());
    let (color, _, place) = caption_parts(caption_index);

    let sky = jitter(
        &mut rng,
        [0.55 + 0.04 * place as f64, 0.7, 0.9 - 0.05 * place as f64],
        0.1,
    );
    let ground = jitter(&mut rng, [0.35, 0.45 - 0.02 * place as f64, 0.25], 0.1);
    let horizon = rng.random_range(0.35..0.65);
    let object_color = jitter(&mut rng, COLORS[color].1, 0.05);
    let (cy, cx) = (rng.random_range(0.35..0.75), rng.random_range(0.25..0.75));
    let (ry, rx) = (rng.random_range(0.12..0.25), rng.random_range(0.15..0.3));
    let accent_index = rng.random_range(0..COLORS.len());
    let accent = jitter(&mut rng, COLORS[accent_index].1, 0.1);
    let (ay, ax, ar) = (
        rng.random_range(0.1..0.4),
        rng.random_range(0.1..0.9),
        rng.random_range(0.06..0.14),
    );
    let (fx, fy, phase) = (
        rng.random_range(4.0..12.0),
        rng.random_range(4.0..12.0),
        rng.random_range(0.0..2.0 * PI),
    );
    let sun = rng.random_range(-0.25..0.25);

    let image = Image::from_fn(h, w, |y, x| {
        let v = (y as f64 + 0.5) / h as f64;
        let u = (x as f64 + 0.5) / w as f64;
        let mut px = if v < horizon {
            mix(sky, [0.95, 0.95, 0.98], 1.0 - v / horizon)
        } else {
            mix(ground, [0.1, 0.12, 0.08], (v - horizon) / (1.0 - horizon))
        };
        if ((v - cy) / ry).powi(2) + ((u - cx) / rx).powi(2) <= 1.0 {
            px = object_color;
        }
        if (v - ay).powi(2) + (u - ax).powi(2) <= ar * ar {
            px = accent;
        }
        let texture = 0.03 * (fx * u * PI + phase).sin() * (fy * v * PI).cos();
        let light = 1.0 + sun * (u - 0.5);
        px.map(|c| (c * light + texture).clamp(0.0, 1.0))
    })?;
    Ok(Scene {
        caption_index,
        image,
    })
}

/// A synthetic scene and its caption.
pub fn sample(seed: u64, h: usize, w: usize) -> (Image, String) {
    let s = scene(seed, h, w).expect("synthetic dimensions are positive");
    (s.image, caption_at(s.caption_index))
}

/// `n` scenes whose seeds derive from `seed` and the scene index.
pub fn corpus(seed: u64, n: usize, h: usize, w: usize) -> Vec<(Image, String)> {
    (0..n).map(|i| sample(derive_seed(seed, i), h, w)).collect()
}

/// Writes `n` scenes as PNGs plus `manifest.jsonl` into `dir` and returns the
/// manifest path. Every record carries its caption, a paraphrase, and a color
/// question.
pub fn write_corpus(dir: &Path, seed: u64, n: usize, h: usize, w: usize) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut lines = String::new();
    for i in 0..n {
        let s = scene(derive_seed(seed, i), h, w)?;
        let (c, o, p) = caption_parts(s.caption_index);
        let id = format!("scene{i:03}");
        let file = format!("{id}.png");
        write_png(dir.join(&file), &s.image)?;
        let record = json!({
            "id": id,
            "image_path": file,
            "captions": [
                caption_at(s.caption_index),
                format!("{} {} {}", COLORS[c].0, OBJECTS[o], PLACES[p]).replace(" a ", " the "),
            ],
            "question": format!("what color is the {}", OBJECTS[o]),
            "answer": COLORS[c].0,
        });
        lines.push_str(&record.to_string());
        lines.push('\n');
    }
    let manifest = dir.join("manifest.jsonl");
    fs::write(&manifest, lines).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}

/// A piecewise-smooth texture with edges and a 1/f-like spectrum, used as a
/// stand-in for pristine photographs.
pub fn photo_like(seed: u64, h: usize, w: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64, f64)> = (1..=12)
        .map(|k| {
            let freq = 0.015 * k as f64 * rng.random_range(0.8..1.25);
            let angle = rng.random_range(0.0..PI);
            let amp = 0.12 / k as f64;
            (
                freq * angle.cos(),
                freq * angle.sin(),
                amp,
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..5)
        .map(|_| {
            let c = [
                rng.random_range(0.2..0.8),
                rng.random_range(0.2..0.8),
                rng.random_range(0.2..0.8),
            ];
            (
                rng.random_range(0.0..h as f64),
                rng.random_range(0.0..w as f64),
                rng.random_range(0.1..0.3) * h.min(w) as f64,
                c,
            )
        })
        .collect();
    let base = [
        rng.random_range(0.3..0.6),
        rng.random_range(0.3..0.6),
        rng.random_range(0.3..0.6),
    ];
    Image::from_fn(h, w, |y, x| {
        let (yf, xf) = (y as f64, x as f64);
        let mut px = base;
        for &(by, bx, r, c) in &blobs {
            if (yf - by).powi(2) + (xf - bx).powi(2) <= r * r {
                px = c;
            }
        }
        let t: f64 = waves
            .iter()
            .map(|&(kx, ky, a, ph)| a * (kx * xf + ky * yf + ph).sin())
            .sum();
        px.map(|c| (c + t).clamp(0.0, 1.0))
    })
    .expect("photo-like dimensions are positive")
}

/// `img` plus i.i.d. Gaussian noise of standard deviation `sigma`, clamped.
pub fn add_gaussian_noise(img: &Image, sigma: f64, seed: u64) -> Image {
    use rand_distr::{Distribution, Normal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let data = img
        .data()
        .iter()
        .map(|v| v + normal.sample(&mut rng))
        .collect();
    Image::from_clamped(img.height(), img.width(), data).expect("finite noise")
}
