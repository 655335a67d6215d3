//! Pixel tensors and the linear image operations the rest of the toolkit builds on.
//!
//! Pixels are stored row-major with interleaved RGB channels. Every [`Image`] holds
//! finite values in `[0, 1]`; [`GradientTensor`] shares the layout but is unbounded.

use std::cell::Cell;
use std::io::{BufRead, Cursor, Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::rc::Rc;

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::invalid(format!(
            "image dimensions must be positive, got {height}x{width}"
        )));
    }
    Ok(())
}

fn check_len(height: usize, width: usize, len: usize) -> Result<()> {
    check_dims(height, width)?;
    let expected = height * width * CHANNELS;
    if len != expected {
        return Err(Error::invalid(format!(
            "data length {len} does not match {height}x{width}x{CHANNELS} = {expected}"
        )));
    }
    Ok(())
}

/// An RGB image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image, rejecting any value that is non-finite or outside `[0, 1]`.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_len(height, width, data.len())?;
        if let Some((i, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::invalid(format!(
                "pixel value {v} at index {i} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds an image after clamping every value into `[0, 1]`. NaN is still rejected.
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f64>) -> Result<Self> {
        check_len(height, width, data.len())?;
        for v in &mut data {
            if v.is_nan() {
                return Err(Error::invalid("NaN pixel value"));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn constant(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        Self::from_fn(height, width, |_, _| rgb)
    }

    /// Builds an image from a per-pixel closure `(y, x) -> [r, g, b]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        check_dims(height, width)?;
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.shape() == other.shape()
    }
}

/// A gradient with the same layout as an [`Image`]; values are any finite float.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientTensor {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GradientTensor {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_len(height, width, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite gradient value at index {i}"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        check_dims(height, width)?;
        Ok(Self {
            height,
            width,
            data: vec![0.0; height * width * CHANNELS],
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn dot(&self, other: &GradientTensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Elementwise accumulation; shapes must agree.
    pub fn accumulate(&mut self, other: &GradientTensor) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::invalid(format!(
                "cannot accumulate {:?} into {:?}",
                other.shape(),
                self.shape()
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0)
    }
}

impl From<&Image> for GradientTensor {
    fn from(img: &Image) -> Self {
        Self {
            height: img.height,
            width: img.width,
            data: img.data.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    w_lo: f64,
    w_hi: f64,
}

/// Half-pixel-center source taps for one axis, clamped at the edges.
fn axis_taps(src: usize, dst: usize) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    let last = (src - 1) as f64;
    (0..dst)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            let frac = s - lo as f64;
            Tap {
                lo,
                hi,
                w_lo: 1.0 - frac,
                w_hi: frac,
            }
        })
        .collect()
}

/// The raw bilinear resampling map on interleaved RGB data of any real values.
///
/// This is the linear operator behind [`resize_bilinear`]; [`resize_adjoint`] is its
/// exact transpose.
pub fn resize_values(
    src: &[f64],
    height: usize,
    width: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Vec<f64>> {
    check_len(height, width, src.len())?;
    check_dims(out_h, out_w)?;
    if (out_h, out_w) == (height, width) {
        return Ok(src.to_vec());
    }
    let ty = axis_taps(height, out_h);
    let tx = axis_taps(width, out_w);
    let mut out = vec![0.0; out_h * out_w * CHANNELS];
    let at = |y: usize, x: usize, c: usize| src[(y * width + x) * CHANNELS + c];
    for (oy, a) in ty.iter().enumerate() {
        for (ox, b) in tx.iter().enumerate() {
            let base = (oy * out_w + ox) * CHANNELS;
            for c in 0..CHANNELS {
                let top = b.w_lo * at(a.lo, b.lo, c) + b.w_hi * at(a.lo, b.hi, c);
                let bottom = b.w_lo * at(a.hi, b.lo, c) + b.w_hi * at(a.hi, b.hi, c);
                out[base + c] = a.w_lo * top + a.w_hi * bottom;
            }
        }
    }
    Ok(out)
}

/// Bilinear resize with the half-pixel-center convention and edge clamping.
pub fn resize_bilinear(src: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    let out = resize_values(&src.data, src.height, src.width, out_h, out_w)?;
    // convex weights; the clamp only absorbs last-ulp rounding
    Image::from_clamped(out_h, out_w, out)
}

/// Transpose of [`resize_values`]: pulls a gradient at `out` resolution back to
/// `src_h x src_w`.
pub fn resize_adjoint(
    grad_out: &GradientTensor,
    src_h: usize,
    src_w: usize,
) -> Result<GradientTensor> {
    check_dims(src_h, src_w)?;
    let (out_h, out_w) = grad_out.shape();
    if (out_h, out_w) == (src_h, src_w) {
        return Ok(grad_out.clone());
    }
    let ty = axis_taps(src_h, out_h);
    let tx = axis_taps(src_w, out_w);
    let mut grad = vec![0.0; src_h * src_w * CHANNELS];
    let idx = |y: usize, x: usize, c: usize| (y * src_w + x) * CHANNELS + c;
    for (oy, a) in ty.iter().enumerate() {
        for (ox, b) in tx.iter().enumerate() {
            let base = (oy * out_w + ox) * CHANNELS;
            for c in 0..CHANNELS {
                let g = grad_out.data[base + c];
                let g_top = a.w_lo * g;
                let g_bottom = a.w_hi * g;
                grad[idx(a.lo, b.lo, c)] += b.w_lo * g_top;
                grad[idx(a.lo, b.hi, c)] += b.w_hi * g_top;
                grad[idx(a.hi, b.lo, c)] += b.w_lo * g_bottom;
                grad[idx(a.hi, b.hi, c)] += b.w_hi * g_bottom;
            }
        }
    }
    GradientTensor::new(src_h, src_w, grad)
}

pub fn flip_horizontal(src: &Image) -> Image {
    let (h, w) = src.shape();
    let mut data = Vec::with_capacity(src.data.len());
    for y in 0..h {
        for x in (0..w).rev() {
            data.extend_from_slice(&src.pixel(y, x));
        }
    }
    Image {
        height: h,
        width: w,
        data,
    }
}

pub fn flip_vertical(src: &Image) -> Image {
    let row = src.width * CHANNELS;
    let data = src
        .data
        .chunks_exact(row)
        .rev()
        .flatten()
        .copied()
        .collect();
    Image {
        height: src.height,
        width: src.width,
        data,
    }
}

/// A byte cursor that publishes its position so decode errors can report an offset.
struct TrackedCursor<'a> {
    inner: Cursor<&'a [u8]>,
    position: Rc<Cell<u64>>,
}

impl TrackedCursor<'_> {
    fn sync(&self) {
        self.position.set(self.inner.position());
    }
}

impl Read for TrackedCursor<'_> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.sync();
        Ok(n)
    }
}

impl BufRead for TrackedCursor<'_> {
    fn fill_buf(&mut self) -> std::io::Result<&[u8]> {
        self.inner.fill_buf()
    }

    fn consume(&mut self, amt: usize) {
        self.inner.consume(amt);
        self.sync();
    }
}

impl Seek for TrackedCursor<'_> {
    fn seek(&mut self, pos: SeekFrom) -> std::io::Result<u64> {
        let p = self.inner.seek(pos)?;
        self.sync();
        Ok(p)
    }
}

/// Decodes an 8- or 16-bit RGB/RGBA PNG. Alpha is dropped; samples are normalized
/// by `2^depth - 1`.
pub fn png_decode(bytes: &[u8]) -> Result<Image> {
    let count = Rc::new(Cell::new(0u64));
    let reader = TrackedCursor {
        inner: Cursor::new(bytes),
        position: Rc::clone(&count),
    };
    let decode_err = |e: png::DecodingError| Error::Decode {
        offset: count.get(),
        message: e.to_string(),
    };

    let mut decoder = png::Decoder::new(reader);
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(decode_err)?;
    let info = reader.info();
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "PNG color type {other:?} (only RGB and RGBA are accepted)"
            )))
        }
    };
    let depth = match info.bit_depth {
        png::BitDepth::Eight => 8u32,
        png::BitDepth::Sixteen => 16,
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "PNG bit depth {other:?} (only 8 and 16 are accepted)"
            )))
        }
    };
    let (width, height) = (info.width as usize, info.height as usize);
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::UnsupportedFormat("PNG frame too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(decode_err)?;
    let buf = &buf[..frame.buffer_size()];

    let max = ((1u32 << depth) - 1) as f64;
    let bytes_per_sample = (depth / 8) as usize;
    let line = frame.line_size;
    let mut data = Vec::with_capacity(height * width * CHANNELS);
    for y in 0..height {
        let row = &buf[y * line..];
        for x in 0..width {
            for c in 0..CHANNELS {
                let off = (x * channels + c) * bytes_per_sample;
                let sample = if depth == 8 {
                    row[off] as u32
                } else {
                    u16::from_be_bytes([row[off], row[off + 1]]) as u32
                };
                data.push(sample as f64 / max);
            }
        }
    }
    Image::new(height, width, data)
}

/// Quantizes to 8-bit (round half up) and encodes an RGB PNG.
pub fn png_encode(img: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::invalid(format!("png header: {e}")))?;
        let samples: Vec<u8> = img.data.iter().map(|v| quantize_u8(*v)).collect();
        writer
            .write_image_data(&samples)
            .map_err(|e| Error::invalid(format!("png data: {e}")))?;
    }
    Ok(out)
}

pub fn quantize_u8(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    png_decode(&bytes)
}

pub fn write_png(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    let bytes = png_encode(img)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap()
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn identity_resize_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_image(&mut rng, 5, 7);
        assert_eq!(resize_bilinear(&img, 5, 7).unwrap(), img);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Image::constant(6, 9, [0.3, 0.6, 0.9]).unwrap();
        for (h, w) in [(1, 1), (3, 17), (12, 4), (6, 9)] {
            let out = resize_bilinear(&img, h, w).unwrap();
            for y in 0..h {
                for x in 0..w {
                    let p = out.pixel(y, x);
                    for (a, b) in p.iter().zip([0.3, 0.6, 0.9]) {
                        assert!((a - b).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn two_by_two_to_one_is_the_mean() {
        let vals = [0.0, 0.2, 0.4, 1.0];
        let img = Image::from_fn(2, 2, |y, x| [vals[y * 2 + x]; 3]).unwrap();
        let out = resize_bilinear(&img, 1, 1).unwrap();
        for v in out.pixel(0, 0) {
            assert!((v - 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_target_is_rejected() {
        let img = Image::constant(2, 2, [0.5; 3]).unwrap();
        assert!(matches!(
            resize_bilinear(&img, 0, 3),
            Err(Error::InvalidArgument(_))
        ));
        let g = GradientTensor::zeros(2, 2).unwrap();
        assert!(resize_adjoint(&g, 3, 0).is_err());
    }

    #[test]
    fn adjoint_identity_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = GradientTensor::new(4, 3, random_vec(&mut rng, 36)).unwrap();
        assert_eq!(resize_adjoint(&g, 4, 3).unwrap(), g);
        let z = GradientTensor::zeros(5, 5).unwrap();
        assert!(resize_adjoint(&z, 9, 2).unwrap().is_zero());
    }

    #[test]
    fn adjoint_dot_product_test() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (h, w) = (rng.random_range(1..24), rng.random_range(1..24));
            let (oh, ow) = (rng.random_range(1..24), rng.random_range(1..24));
            let x = random_vec(&mut rng, h * w * 3);
            let y = random_vec(&mut rng, oh * ow * 3);
            let rx = resize_values(&x, h, w, oh, ow).unwrap();
            let gy = GradientTensor::new(oh, ow, y.clone()).unwrap();
            let aty = resize_adjoint(&gy, h, w).unwrap();
            let lhs = dot(&rx, &y);
            let rhs = dot(&x, aty.data());
            assert!(
                (lhs - rhs).abs() <= 1e-4 * (1.0 + lhs.abs()),
                "{lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn flips() {
        let img = Image::new(1, 2, vec![0.1, 0.2, 0.3, 0.7, 0.8, 0.9]).unwrap();
        let f = flip_horizontal(&img);
        assert_eq!(f.data(), &[0.7, 0.8, 0.9, 0.1, 0.2, 0.3]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = random_image(&mut rng, 5, 6);
        assert_eq!(flip_horizontal(&flip_horizontal(&r)), r);
        assert_eq!(flip_vertical(&flip_vertical(&r)), r);
        let c = Image::constant(3, 4, [0.25; 3]).unwrap();
        assert_eq!(flip_horizontal(&c), c);
    }

    #[test]
    fn png_round_trip_on_8bit_lattice() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = Image::from_fn(7, 5, |_, _| {
            [0, 0, 0].map(|_: i32| rng.random_range(0u32..=255) as f64 / 255.0)
        })
        .unwrap();
        let bytes = png_encode(&img).unwrap();
        assert_eq!(png_decode(&bytes).unwrap(), img);
    }

    #[test]
    fn png_truncated_stream_errors() {
        let img = Image::constant(8, 8, [0.5; 3]).unwrap();
        let bytes = png_encode(&img).unwrap();
        for cut in [4, 20, bytes.len() - 13] {
            match png_decode(&bytes[..cut]) {
                Err(Error::Decode { offset, .. }) => assert!(offset <= cut as u64),
                other => panic!("expected decode error, got {other:?}"),
            }
        }
    }

    #[test]
    fn png_16bit_and_rgba() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 2, 1);
            enc.set_color(png::ColorType::Rgba);
            enc.set_depth(png::BitDepth::Sixteen);
            let mut w = enc.write_header().unwrap();
            let mut data = Vec::new();
            for s in [65535u16, 0, 32768, 100, 1, 2, 3, 4] {
                data.extend_from_slice(&s.to_be_bytes());
            }
            w.write_image_data(&data).unwrap();
        }
        let img = png_decode(&out).unwrap();
        assert_eq!(img.shape(), (1, 2));
        assert_eq!(img.pixel(0, 0)[0], 1.0);
        assert_eq!(img.pixel(0, 0)[1], 0.0);
        assert_eq!(
            img.pixel(0, 1),
            [1.0 / 65535.0, 2.0 / 65535.0, 3.0 / 65535.0]
        );
    }

    #[test]
    fn png_grayscale_is_unsupported() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 1, 1);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            enc.write_header().unwrap().write_image_data(&[7]).unwrap();
        }
        assert!(matches!(png_decode(&out), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn invalid_pixels_rejected() {
        assert!(Image::new(1, 1, vec![0.0, 1.5, 0.0]).is_err());
        assert!(Image::new(1, 1, vec![0.0, f64::NAN, 0.0]).is_err());
        assert!(Image::new(1, 2, vec![0.0; 3]).is_err());
        assert!(Image::from_clamped(1, 1, vec![f64::NAN, 0.0, 0.0]).is_err());
        assert_eq!(
            Image::from_clamped(1, 1, vec![-1.0, 0.5, 2.0])
                .unwrap()
                .data(),
            &[0.0, 0.5, 1.0]
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn resize_is_linear(
            seed in any::<u64>(),
            h in 1usize..12, w in 1usize..12, oh in 1usize..12, ow in 1usize..12,
            a in -3.0f64..3.0, b in -3.0f64..3.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_vec(&mut rng, h * w * 3);
            let y = random_vec(&mut rng, h * w * 3);
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = resize_values(&mix, h, w, oh, ow).unwrap();
            let rx = resize_values(&x, h, w, oh, ow).unwrap();
            let ry = resize_values(&y, h, w, oh, ow).unwrap();
            for i in 0..lhs.len() {
                prop_assert!((lhs[i] - (a * rx[i] + b * ry[i])).abs() <= 1e-5);
            }
        }

        #[test]
        fn resize_preserves_bounds(
            seed in any::<u64>(),
            h in 1usize..12, w in 1usize..12, oh in 1usize..16, ow in 1usize..16,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = random_image(&mut rng, h, w);
            let lo = img.data().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = img.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = resize_bilinear(&img, oh, ow).unwrap();
            for v in out.data() {
                prop_assert!(*v >= lo - 1e-6 && *v <= hi + 1e-6);
            }
        }
    }
}
