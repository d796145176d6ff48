//! Image preprocessing (grayscale, LoG filtering, bilinear resize) and the
//! per-pixel Poisson spike encoder.

use crate::error::{CsnnError, Result};
use crate::rng::{derive_rng, stream};
use crate::sim::{SimClock, SpikeTrain};
use rand::Rng;

/// Row-major grayscale image with intensities normalized to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(CsnnError::config("image dimensions must be positive"));
        }
        if data.len() != width * height {
            return Err(CsnnError::config(format!(
                "image data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(CsnnError::config("image intensities must lie in [0, 1]"));
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Reconstruct the 8-bit byte for each pixel (used by IDX round trips).
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v * 255.0).round() as u8).collect()
    }
}

/// Laplacian-of-Gaussian kernel description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogFilterSpec {
    pub sigma: f64,
    pub kernel_size: usize,
}

impl Default for LogFilterSpec {
    fn default() -> Self {
        LogFilterSpec { sigma: 1.0, kernel_size: 7 }
    }
}

impl LogFilterSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(CsnnError::config("LoG sigma must be positive"));
        }
        if self.kernel_size < 3 || self.kernel_size % 2 == 0 {
            return Err(CsnnError::config("LoG kernel size must be odd and at least 3"));
        }
        Ok(())
    }

    /// Sampled kernel, mean-subtracted so the coefficients sum to zero and a
    /// constant image produces an exactly zero response.
    pub fn kernel(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let s = self.kernel_size;
        let c = (s / 2) as isize;
        let sig2 = self.sigma * self.sigma;
        let scale = -1.0 / (std::f64::consts::PI * sig2 * sig2);
        let mut k = Vec::with_capacity(s * s);
        for y in 0..s {
            for x in 0..s {
                let dy = (y as isize - c) as f64;
                let dx = (x as isize - c) as f64;
                let r2 = dx * dx + dy * dy;
                let g = (-r2 / (2.0 * sig2)).exp();
                k.push(scale * (1.0 - r2 / (2.0 * sig2)) * g);
            }
        }
        let mean = k.iter().sum::<f64>() / (s * s) as f64;
        for v in &mut k {
            *v -= mean;
        }
        Ok(k)
    }
}

/// Raw filter response: true convolution (kernel flipped) with replicate
/// padding. Values are unnormalized and may be negative.
pub fn log_response(img: &GrayImage, spec: &LogFilterSpec) -> Result<Vec<f64>> {
    let k = spec.kernel()?;
    let s = spec.kernel_size;
    if s > img.width || s > img.height {
        return Err(CsnnError::config(format!(
            "LoG kernel {s} exceeds image {}x{}",
            img.width, img.height
        )));
    }
    let c = (s / 2) as isize;
    let (w, h) = (img.width as isize, img.height as isize);
    let mut out = vec![0.0f64; img.width * img.height];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for a in -c..=c {
                let sy = (y - a).clamp(0, h - 1) as usize;
                for b in -c..=c {
                    let sx = (x - b).clamp(0, w - 1) as usize;
                    acc += k[((c + a) * s as isize + (c + b)) as usize] * img.get(sx, sy);
                }
            }
            out[(y * w + x) as usize] = acc;
        }
    }
    Ok(out)
}

/// Full preprocessing filter: response, negative rectification, min-max
/// rescale to [0, 1]. A flat response maps to an all-zero image.
pub fn log_filter(img: &GrayImage, spec: &LogFilterSpec) -> Result<GrayImage> {
    let mut out = log_response(img, spec)?;
    for v in &mut out {
        *v = v.max(0.0);
    }
    let lo = out.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-12 {
        out.iter_mut().for_each(|v| *v = 0.0);
    } else {
        for v in &mut out {
            *v = ((*v - lo) / (hi - lo)).clamp(0.0, 1.0);
        }
    }
    GrayImage::new(img.width, img.height, out)
}

/// Grayscale conversion for 8-bit 1- or 3-channel images, using the
/// 0.299/0.587/0.114 luminance weights and byte rounding.
pub fn to_grayscale(img: &image::DynamicImage) -> Result<GrayImage> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        image::DynamicImage::ImageLuma8(g) => {
            g.pixels().map(|p| f64::from(p.0[0]) / 255.0).collect()
        }
        image::DynamicImage::ImageRgb8(rgb) => rgb
            .pixels()
            .map(|p| {
                let [r, g, b] = p.0;
                let lum = 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b);
                lum.round().min(255.0) / 255.0
            })
            .collect(),
        other => {
            return Err(CsnnError::data(format!(
                "unsupported channel layout {:?}; expected 8-bit grayscale or RGB",
                other.color()
            )))
        }
    };
    GrayImage::new(w, h, data)
}

/// Bilinear resize with corner-aligned sampling: source and destination
/// corners coincide; a singleton output dimension samples the source center.
pub fn resize_bilinear(img: &GrayImage, out_w: usize, out_h: usize) -> Result<GrayImage> {
    if out_w == 0 || out_h == 0 {
        return Err(CsnnError::config("resize output dimensions must be positive"));
    }
    let src_pos = |out_i: usize, out_n: usize, src_n: usize| -> f64 {
        if out_n == 1 {
            (src_n - 1) as f64 / 2.0
        } else {
            out_i as f64 * ((src_n - 1) as f64 / (out_n - 1) as f64)
        }
    };
    let mut data = Vec::with_capacity(out_w * out_h);
    for oy in 0..out_h {
        let sy = src_pos(oy, out_h, img.height);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(img.height - 1);
        let fy = sy - y0 as f64;
        for ox in 0..out_w {
            let sx = src_pos(ox, out_w, img.width);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(img.width - 1);
            let fx = sx - x0 as f64;
            let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
            let bot = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
            data.push((top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0));
        }
    }
    GrayImage::new(out_w, out_h, data)
}

/// Poisson encoder constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderSpec {
    pub max_rate_hz: f64,
    pub duration_ms: f64,
    pub rng_seed: u64,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec { max_rate_hz: 500.0, duration_ms: 50.0, rng_seed: 0 }
    }
}

impl EncoderSpec {
    pub fn validate(&self, dt_ms: f64) -> Result<()> {
        if !(self.max_rate_hz > 0.0) {
            return Err(CsnnError::config("max_rate must be positive"));
        }
        SimClock::new(dt_ms, self.duration_ms).map(|_| ())
    }

    /// Per-step spike probability at full intensity, before clamping.
    pub fn bin_probability(&self, dt_ms: f64) -> f64 {
        self.max_rate_hz * dt_ms / 1000.0
    }

    /// True when full-intensity pixels would exceed probability 1 per bin;
    /// the encoder clamps, the CLI warns.
    pub fn clamp_warning(&self, dt_ms: f64) -> bool {
        self.bin_probability(dt_ms) > 1.0
    }
}

/// Independent Bernoulli spike trains, one per pixel, with per-step
/// probability intensity * max_rate * dt (clamped to 1).
///
/// The draw order is fixed: pixels row-major, then steps. One draw happens
/// per (pixel, step) regardless of intensity, and the generator derives from
/// (rng_seed, image_index), so trains are bitwise reproducible and images
/// may be encoded in any order or in parallel.
pub fn poisson_encode(
    img: &GrayImage,
    spec: &EncoderSpec,
    dt_ms: f64,
    image_index: u64,
) -> Result<Vec<SpikeTrain>> {
    spec.validate(dt_ms)?;
    let steps = SimClock::new(dt_ms, spec.duration_ms)?.steps_total();
    let p_full = spec.bin_probability(dt_ms);
    let mut rng = derive_rng(spec.rng_seed, stream::ENCODER, image_index);
    let mut trains = Vec::with_capacity(img.data.len());
    for &intensity in &img.data {
        let p = (intensity * p_full).min(1.0);
        let mut train = SpikeTrain::new();
        for t in 0..steps {
            if rng.gen::<f64>() < p {
                train.push(t);
            }
        }
        trains.push(train);
    }
    Ok(trains)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img_from(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> GrayImage {
        let mut d = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                d.push(f(x, y));
            }
        }
        GrayImage::new(w, h, d).unwrap()
    }

    #[test]
    fn grayscale_weights() {
        let mut rgb = image::RgbImage::new(3, 1);
        rgb.put_pixel(0, 0, image::Rgb([255, 255, 255]));
        rgb.put_pixel(1, 0, image::Rgb([0, 0, 0]));
        rgb.put_pixel(2, 0, image::Rgb([255, 0, 0]));
        let g = to_grayscale(&image::DynamicImage::ImageRgb8(rgb)).unwrap();
        assert_eq!(g.get(0, 0), 1.0);
        assert_eq!(g.get(1, 0), 0.0);
        assert_eq!(g.get(2, 0), 76.0 / 255.0);

        let luma = image::GrayImage::from_pixel(2, 2, image::Luma([128]));
        let g = to_grayscale(&image::DynamicImage::ImageLuma8(luma)).unwrap();
        assert_eq!(g.get(1, 1), 128.0 / 255.0);

        let rgba = image::RgbaImage::new(2, 2);
        assert!(to_grayscale(&image::DynamicImage::ImageRgba8(rgba)).is_err());
    }

    #[test]
    fn log_kernel_sums_to_zero() {
        for (sigma, size) in [(1.0, 7), (0.8, 5), (1.5, 9)] {
            let k = LogFilterSpec { sigma, kernel_size: size }.kernel().unwrap();
            let sum: f64 = k.iter().sum();
            assert!(sum.abs() <= 1e-9, "sum {sum}");
        }
        assert!(LogFilterSpec { sigma: 1.0, kernel_size: 4 }.validate().is_err());
        assert!(LogFilterSpec { sigma: 0.0, kernel_size: 7 }.validate().is_err());
    }

    #[test]
    fn constant_image_yields_zero_response() {
        let img = img_from(12, 10, |_, _| 0.63);
        let spec = LogFilterSpec::default();
        let resp = log_response(&img, &spec).unwrap();
        assert!(resp.iter().all(|v| v.abs() < 1e-12));
        let filtered = log_filter(&img, &spec).unwrap();
        assert!(filtered.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_response_is_flipped_kernel() {
        // Oracle: correlation with the 180-degree rotated kernel, written
        // independently of the convolution loop.
        let spec = LogFilterSpec::default();
        let s = spec.kernel_size;
        let c = s / 2;
        let img = img_from(15, 15, |x, y| if x == 7 && y == 7 { 1.0 } else { 0.0 });
        let resp = log_response(&img, &spec).unwrap();
        let k = spec.kernel().unwrap();
        let mut flipped = vec![0.0; s * s];
        for y in 0..s {
            for x in 0..s {
                flipped[y * s + x] = k[(s - 1 - y) * s + (s - 1 - x)];
            }
        }
        for (i, &r) in resp.iter().enumerate() {
            let (y, x) = (i / 15, i % 15);
            let expect = if y.abs_diff(7) <= c && x.abs_diff(7) <= c {
                // Correlation oracle: out(y, x) = flipped[c + (7 - y)][c + (7 - x)].
                flipped[(c + 7 - y) * s + (c + 7 - x)]
            } else {
                0.0
            };
            assert!((r - expect).abs() < 1e-12, "at ({x},{y}): {r} vs {expect}");
        }
    }

    #[test]
    fn step_edge_peaks_at_the_edge() {
        let img = img_from(16, 9, |x, _| if x < 8 { 0.0 } else { 1.0 });
        let resp = log_response(&img, &LogFilterSpec::default()).unwrap();
        let mut best_col = 0;
        let mut best = 0.0f64;
        for x in 0..16 {
            let mag: f64 = (0..9).map(|y| resp[y * 16 + x].abs()).fold(0.0, f64::max);
            if mag > best {
                best = mag;
                best_col = x;
            }
        }
        assert!(
            (7..=8).contains(&best_col),
            "edge response peaked at column {best_col}"
        );
    }

    #[test]
    fn resize_identity_and_constants() {
        let img = img_from(11, 7, |x, y| ((x * 13 + y * 29) % 100) as f64 / 100.0);
        let same = resize_bilinear(&img, 11, 7).unwrap();
        assert_eq!(img, same);

        let flat = img_from(9, 9, |_, _| 0.42);
        let r = resize_bilinear(&flat, 23, 5).unwrap();
        assert!(r.pixels().iter().all(|&v| (v - 0.42).abs() < 1e-12));

        assert!(resize_bilinear(&img, 0, 5).is_err());
    }

    #[test]
    fn resize_corners_align() {
        let img = img_from(2, 2, |x, y| if (x + y) % 2 == 0 { 0.0 } else { 1.0 });
        let big = resize_bilinear(&img, 40, 40).unwrap();
        assert_eq!(big.get(0, 0), img.get(0, 0));
        assert_eq!(big.get(39, 0), img.get(1, 0));
        assert_eq!(big.get(0, 39), img.get(0, 1));
        assert_eq!(big.get(39, 39), img.get(1, 1));

        let one = resize_bilinear(&img, 1, 1).unwrap();
        // Singleton output samples the source center: the checkerboard mean.
        assert!((one.get(0, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn encoder_is_deterministic_per_image_index() {
        let img = img_from(5, 5, |x, y| ((x + y) % 2) as f64);
        let spec = EncoderSpec { rng_seed: 9, ..Default::default() };
        let a = poisson_encode(&img, &spec, 0.5, 3).unwrap();
        let b = poisson_encode(&img, &spec, 0.5, 3).unwrap();
        assert_eq!(a, b);
        let c = poisson_encode(&img, &spec, 0.5, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_intensity_is_silent_and_probability_clamps() {
        let dark = img_from(3, 3, |_, _| 0.0);
        let spec = EncoderSpec::default();
        let trains = poisson_encode(&dark, &spec, 0.5, 0).unwrap();
        assert!(trains.iter().all(SpikeTrain::is_empty));

        // 500 Hz at a 4 ms bin gives p = 2, clamped to certainty.
        let bright = img_from(2, 1, |_, _| 1.0);
        let spec = EncoderSpec { duration_ms: 48.0, ..Default::default() };
        assert!(spec.clamp_warning(4.0));
        let trains = poisson_encode(&bright, &spec, 4.0, 0).unwrap();
        assert!(trains.iter().all(|t| t.len() == 12));
    }

    #[test]
    fn mean_count_tracks_rate() {
        // Full intensity at 500 Hz for 50 ms expects 25 spikes per train.
        let img = img_from(1, 1, |_, _| 1.0);
        let spec = EncoderSpec { rng_seed: 21, ..Default::default() };
        let n = 2000;
        let total: usize = (0..n)
            .map(|i| poisson_encode(&img, &spec, 0.5, i as u64).unwrap()[0].len())
            .sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 25.0).abs() < 0.4, "mean {mean}");
    }
}
