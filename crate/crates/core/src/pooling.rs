//! Per-second temporal pooling.
//!
//! Four operators collapse a [`SecondWindow`] into one image:
//!
//! * `WA`   uniform average,
//! * `WAE`  exponentially recency-weighted average, weight `exp(λ(τ - sf))`,
//! * `WAR`  linearly recency-weighted average, weight `τ - (s-1)f`,
//! * `BBLF` `α·last + (1-α)·G_σ(uniform average)`.
//!
//! Arithmetic runs on normalized `f64` channels in `[0, 1]`; the result is
//! rounded half-to-even to 8 bits exactly once.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Frame, SecondWindow};

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_SIGMA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Operator {
    Wa,
    Wae,
    War,
    Bblf,
}

impl Operator {
    pub const ALL: [Operator; 4] = [Operator::Wa, Operator::Wae, Operator::War, Operator::Bblf];

    pub fn as_str(self) -> &'static str {
        match self {
            Operator::Wa => "WA",
            Operator::Wae => "WAE",
            Operator::War => "WAR",
            Operator::Bblf => "BBLF",
        }
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Operator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "WA" => Ok(Operator::Wa),
            "WAE" => Ok(Operator::Wae),
            "WAR" => Ok(Operator::War),
            "BBLF" => Ok(Operator::Bblf),
            other => Err(Error::BadParameter(format!("unknown pooling operator {other:?}"))),
        }
    }
}

/// Operator choice plus the parameters it uses.
///
/// `lambda` is set iff the operator is WAE; `alpha` and `sigma` iff BBLF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolingSpec {
    pub operator: Operator,
    pub fps: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sigma: Option<f64>,
}

impl PoolingSpec {
    pub fn wa(fps: u32) -> Result<Self> {
        Self::checked(Operator::Wa, fps, None, None, None)
    }

    pub fn wae(fps: u32, lambda: f64) -> Result<Self> {
        Self::checked(Operator::Wae, fps, Some(lambda), None, None)
    }

    pub fn war(fps: u32) -> Result<Self> {
        Self::checked(Operator::War, fps, None, None, None)
    }

    pub fn bblf(fps: u32, alpha: f64, sigma: f64) -> Result<Self> {
        Self::checked(Operator::Bblf, fps, None, Some(alpha), Some(sigma))
    }

    /// Builds a spec, filling unset parameters with the defaults
    /// (`λ = 1/f`, `α = 0.5`, `σ = 2.0`). Parameters irrelevant to the
    /// operator must be `None`.
    pub fn with_defaults(
        operator: Operator,
        fps: u32,
        lambda: Option<f64>,
        alpha: Option<f64>,
        sigma: Option<f64>,
    ) -> Result<Self> {
        if fps == 0 {
            return Err(Error::EmptyWindow);
        }
        match operator {
            Operator::Wa | Operator::War => Self::checked(operator, fps, lambda, alpha, sigma),
            Operator::Wae => Self::checked(operator, fps, Some(lambda.unwrap_or(1.0 / fps as f64)), alpha, sigma),
            Operator::Bblf => Self::checked(
                operator,
                fps,
                lambda,
                Some(alpha.unwrap_or(DEFAULT_ALPHA)),
                Some(sigma.unwrap_or(DEFAULT_SIGMA)),
            ),
        }
    }

    fn checked(
        operator: Operator,
        fps: u32,
        lambda: Option<f64>,
        alpha: Option<f64>,
        sigma: Option<f64>,
    ) -> Result<Self> {
        let spec = Self {
            operator,
            fps,
            lambda,
            alpha,
            sigma,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fps == 0 {
            return Err(Error::EmptyWindow);
        }
        let is_wae = self.operator == Operator::Wae;
        let is_bblf = self.operator == Operator::Bblf;
        if self.lambda.is_some() != is_wae {
            return Err(Error::BadParameter(format!(
                "lambda is only valid for WAE (operator {})",
                self.operator
            )));
        }
        if self.alpha.is_some() != is_bblf || self.sigma.is_some() != is_bblf {
            return Err(Error::BadParameter(format!(
                "alpha and sigma are only valid for BBLF (operator {})",
                self.operator
            )));
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::BadParameter(format!("lambda must be > 0, got {l}")));
            }
        }
        if let Some(a) = self.alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::BadParameter(format!("alpha must lie in [0, 1], got {a}")));
            }
        }
        if let Some(s) = self.sigma {
            check_sigma(s)?;
        }
        Ok(())
    }
}

/// Nonnegative per-frame weights of one window, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn normalized(raw: Vec<f64>) -> Self {
        let total: f64 = raw.iter().sum();
        WeightVector(raw.into_iter().map(|w| w / total).collect())
    }
}

pub fn uniform_weights(fps: usize) -> Result<WeightVector> {
    if fps == 0 {
        return Err(Error::EmptyWindow);
    }
    Ok(WeightVector(vec![1.0 / fps as f64; fps]))
}

/// Entry for offset `d = τ - sf ∈ {-(f-1), …, 0}` is proportional to `exp(λ·d)`.
/// Once `λ(f-1)` exceeds about 708 the earliest entries underflow to zero.
pub fn exp_weights(fps: usize, lambda: f64) -> Result<WeightVector> {
    if fps == 0 {
        return Err(Error::EmptyWindow);
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::BadParameter(format!("lambda must be > 0, got {lambda}")));
    }
    let raw = (0..fps)
        .map(|k| (lambda * (k as f64 - (fps - 1) as f64)).exp())
        .collect();
    Ok(WeightVector::normalized(raw))
}

/// Entry `k` (1-based) is `k / (f(f+1)/2)`.
pub fn ramp_weights(fps: usize) -> Result<WeightVector> {
    if fps == 0 {
        return Err(Error::EmptyWindow);
    }
    let denom = (fps * (fps + 1) / 2) as f64;
    Ok(WeightVector((1..=fps).map(|k| k as f64 / denom).collect()))
}

/// Weights used by a WA/WAE/WAR spec. BBLF averages uniformly.
pub fn weights_for(spec: &PoolingSpec, fps: usize) -> Result<WeightVector> {
    match spec.operator {
        Operator::Wa | Operator::Bblf => uniform_weights(fps),
        Operator::Wae => exp_weights(fps, spec.lambda.unwrap_or(1.0 / fps.max(1) as f64)),
        Operator::War => ramp_weights(fps),
    }
}

/// Interleaved RGB image with normalized `f64` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RealImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl RealImage {
    pub fn from_bytes(width: u32, height: u32, pixels: &[u8]) -> Self {
        Self {
            width,
            height,
            data: pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        }
    }

    pub fn from_frame(frame: &Frame) -> Self {
        Self::from_bytes(frame.width(), frame.height(), frame.pixels())
    }

    /// The single real-to-8-bit conversion: scale by 255, round half to even, clamp.
    pub fn quantize(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize_channel(v)).collect()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

pub fn quantize_channel(v: f64) -> u8 {
    (v * 255.0).round_ties_even().clamp(0.0, 255.0) as u8
}

/// One pooled image for second `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFrame {
    pub second_index: usize,
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
    pub spec: PoolingSpec,
}

/// `Σ_τ w(τ)·I_τ` in normalized reals, before rounding.
pub fn weighted_average_real(window: &SecondWindow, weights: &WeightVector) -> Result<RealImage> {
    let frames = window.frames();
    if weights.len() != frames.len() {
        return Err(Error::WeightMismatch {
            weights: weights.len(),
            frames: frames.len(),
        });
    }
    let (width, height) = window.dims();
    let mut acc = vec![0.0f64; frames[0].pixels().len()];
    for (frame, &w) in frames.iter().zip(weights.as_slice()) {
        for (a, &p) in acc.iter_mut().zip(frame.pixels()) {
            *a += w * (p as f64 / 255.0);
        }
    }
    Ok(RealImage {
        width,
        height,
        data: acc,
    })
}

/// Weighted average of a window, rounded once to 8 bits. The attached spec is uniform WA
/// at the window's rate; [`pool_second`] attaches the caller's spec instead.
pub fn weighted_average(window: &SecondWindow, weights: &WeightVector) -> Result<PooledFrame> {
    let real = weighted_average_real(window, weights)?;
    Ok(PooledFrame {
        second_index: window.second_index(),
        width: real.width,
        height: real.height,
        pixels: real.quantize(),
        spec: PoolingSpec::wa(window.fps() as u32)?,
    })
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::BadParameter(format!("sigma must be > 0, got {sigma}")));
    }
    Ok(())
}

/// Normalized 1-D Gaussian taps over `[-r, r]` with `r = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    check_sigma(sigma)?;
    let radius = (3.0 * sigma).ceil() as isize;
    let denom = 2.0 * sigma * sigma;
    let raw: Vec<f64> = (-radius..=radius).map(|x| (-((x * x) as f64) / denom).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / total).collect())
}

/// Mirror an out-of-range coordinate back into `[0, n)`, edge sample repeated
/// (`cba|abc|cba`). Handles offsets larger than `n`.
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

/// Separable Gaussian blur on a real-valued image, per channel, reflect borders.
pub fn gaussian_blur_real(image: &RealImage, sigma: f64) -> Result<RealImage> {
    let kernel = gaussian_kernel(sigma)?;
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = (image.width as usize, image.height as usize);
    if w == 0 || h == 0 {
        return Ok(image.clone());
    }

    let mut horizontal = vec![0.0f64; image.data.len()];
    for y in 0..h {
        let row = y * w * 3;
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, &tap) in kernel.iter().enumerate() {
                    let sx = reflect_index(x as isize + k as isize - radius, w);
                    acc += tap * image.data[row + sx * 3 + c];
                }
                horizontal[row + x * 3 + c] = acc;
            }
        }
    }

    let mut out = vec![0.0f64; image.data.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, &tap) in kernel.iter().enumerate() {
                    let sy = reflect_index(y as isize + k as isize - radius, h);
                    acc += tap * horizontal[(sy * w + x) * 3 + c];
                }
                out[(y * w + x) * 3 + c] = acc;
            }
        }
    }
    Ok(RealImage {
        width: image.width,
        height: image.height,
        data: out,
    })
}

/// Blurs an 8-bit RGB buffer; rounds once on output.
pub fn gaussian_blur(width: u32, height: u32, pixels: &[u8], sigma: f64) -> Result<Vec<u8>> {
    if pixels.len() != width as usize * height as usize * 3 {
        return Err(Error::BadParameter(format!(
            "pixel buffer has {} bytes, expected {}",
            pixels.len(),
            width as usize * height as usize * 3
        )));
    }
    let real = RealImage::from_bytes(width, height, pixels);
    Ok(gaussian_blur_real(&real, sigma)?.quantize())
}

/// `α·I_last + (1-α)·G_σ(Ī)` with `Ī` the uniform average, before rounding.
pub fn blend_blur_real(window: &SecondWindow, alpha: f64, sigma: f64) -> Result<RealImage> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::BadParameter(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let average = weighted_average_real(window, &uniform_weights(window.fps())?)?;
    let blurred = gaussian_blur_real(&average, sigma)?;
    let last = window.last().pixels();
    let data = blurred
        .data
        .iter()
        .zip(last)
        .map(|(&b, &l)| alpha * (l as f64 / 255.0) + (1.0 - alpha) * b)
        .collect();
    Ok(RealImage {
        width: blurred.width,
        height: blurred.height,
        data,
    })
}

pub fn blend_blur_last_frame(window: &SecondWindow, spec: &PoolingSpec) -> Result<PooledFrame> {
    spec.validate()?;
    if spec.operator != Operator::Bblf {
        return Err(Error::BadParameter(format!(
            "blend_blur_last_frame needs a BBLF spec, got {}",
            spec.operator
        )));
    }
    let alpha = spec.alpha.unwrap_or(DEFAULT_ALPHA);
    let sigma = spec.sigma.unwrap_or(DEFAULT_SIGMA);
    let real = blend_blur_real(window, alpha, sigma)?;
    Ok(PooledFrame {
        second_index: window.second_index(),
        width: real.width,
        height: real.height,
        pixels: real.quantize(),
        spec: *spec,
    })
}

/// Pools one second with the operator named in `spec`.
pub fn pool_second(window: &SecondWindow, spec: &PoolingSpec) -> Result<PooledFrame> {
    spec.validate()?;
    match spec.operator {
        Operator::Bblf => blend_blur_last_frame(window, spec),
        _ => {
            let weights = weights_for(spec, window.fps())?;
            let mut pooled = weighted_average(window, &weights)?;
            pooled.spec = *spec;
            Ok(pooled)
        }
    }
}

/// The raw last frame of the window, index `sf`.
pub fn key_frame(window: &SecondWindow) -> &Frame {
    window.last()
}

/// File name of the pooled image for second `s`.
pub fn pooled_file_name(second: usize) -> String {
    format!("pooled_{second:04}.png")
}
