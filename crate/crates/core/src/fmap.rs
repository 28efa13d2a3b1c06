//! Dense feature maps and the sampling/convolution primitives built on them.
//!
//! A [`FeatureMap`] is a `(C, H, W)` tensor stored channel-major then
//! row-major as `f32`, with all values finite. Reductions (convolution,
//! pooling, sampling) accumulate in `f64` and cast back on store.
//!
//! Coordinate convention: pixel centers sit at integer coordinates, so
//! `x = 0.0` is the center of column 0. Out-of-range sample coordinates clamp
//! to the border (replicate padding); rotation correction and warped meshes
//! legitimately touch borders and must not produce NaNs.

use crate::error::{Error, Result};

/// Dense `(C, H, W)` tensor of finite `f32` values, channel-major then
/// row-major. The universal carrier between pipeline stages.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    /// Builds a map from raw data, validating length and finiteness.
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let expect = channels
            .checked_mul(height)
            .and_then(|n| n.checked_mul(width))
            .ok_or_else(|| Error::domain("feature map dimensions overflow"))?;
        if data.len() != expect {
            return Err(Error::domain(format!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("feature map contains non-finite values"));
        }
        Ok(Self { channels, height, width, data })
    }

    /// All-zero map of the given shape.
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        debug_assert!(c < self.channels && y < self.height && x < self.width);
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        debug_assert!(c < self.channels && y < self.height && x < self.width);
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// One channel plane as a slice.
    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    /// Mean over all values of all channels, accumulated in f64.
    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        let sum: f64 = self.data.iter().map(|&v| v as f64).sum();
        sum / self.data.len() as f64
    }
}

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::domain(format!(
                "image data length {} does not match {}x{}",
                data.len(),
                height,
                width
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Lifts the image to a single-channel feature map with values in [0, 1].
    pub fn to_fmap(&self) -> FeatureMap {
        let data = self.data.iter().map(|&v| v as f32 / 255.0).collect();
        FeatureMap { channels: 1, height: self.height, width: self.width, data }
    }
}

/// A 2D convolution: kernel geometry plus dense weights and per-output bias.
///
/// Weight layout is `out_channels x in_channels x kernel_h x kernel_w`,
/// row-major.
#[derive(Debug, Clone)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
        in_channels: usize,
        out_channels: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        if stride == 0 || kernel_h == 0 || kernel_w == 0 {
            return Err(Error::domain("kernel dims and stride must be positive"));
        }
        if weights.len() != out_channels * in_channels * kernel_h * kernel_w {
            return Err(Error::domain(format!(
                "weight length {} does not match {}x{}x{}x{}",
                weights.len(),
                out_channels,
                in_channels,
                kernel_h,
                kernel_w
            )));
        }
        if bias.len() != out_channels {
            return Err(Error::domain(format!(
                "bias length {} does not match {} output channels",
                bias.len(),
                out_channels
            )));
        }
        Ok(Self { kernel_h, kernel_w, stride, padding, in_channels, out_channels, weights, bias })
    }

    /// Deterministic fan-in-scaled uniform init: weights in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero bias.
    pub fn seeded(
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
        in_channels: usize,
        out_channels: usize,
        seed: u64,
    ) -> Self {
        let mut rng = crate::rng::SplitMix64::new(seed);
        let fan_in = (in_channels * kernel_h * kernel_w) as f64;
        let a = 1.0 / fan_in.sqrt();
        let n = out_channels * in_channels * kernel_h * kernel_w;
        let weights = (0..n).map(|_| rng.next_range(-a, a) as f32).collect();
        Self {
            kernel_h,
            kernel_w,
            stride,
            padding,
            in_channels,
            out_channels,
            weights,
            bias: vec![0.0; out_channels],
        }
    }

    #[inline]
    fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        self.weights[((o * self.in_channels + i) * self.kernel_h + ky) * self.kernel_w + kx]
    }
}

/// Bilinear sample of one channel at real coordinates `(x, y)`.
///
/// Exact at integer coordinates; out-of-range coordinates clamp to the border.
pub fn bilinear_sample(fmap: &FeatureMap, channel: usize, x: f64, y: f64) -> Result<f64> {
    if channel >= fmap.channels {
        return Err(Error::domain(format!(
            "channel {channel} out of range for {} channels",
            fmap.channels
        )));
    }
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::domain("sample coordinates must be finite"));
    }
    if fmap.height == 0 || fmap.width == 0 {
        return Err(Error::domain("cannot sample an empty map"));
    }
    let x = x.clamp(0.0, (fmap.width - 1) as f64);
    let y = y.clamp(0.0, (fmap.height - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(fmap.width - 1);
    let y1 = (y0 + 1).min(fmap.height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let v00 = fmap.get(channel, y0, x0) as f64;
    let v01 = fmap.get(channel, y0, x1) as f64;
    let v10 = fmap.get(channel, y1, x0) as f64;
    let v11 = fmap.get(channel, y1, x1) as f64;
    let top = v00 * (1.0 - fx) + v01 * fx;
    let bot = v10 * (1.0 - fx) + v11 * fx;
    Ok(top * (1.0 - fy) + bot * fy)
}

/// Direct 2D cross-correlation plus bias.
///
/// Output dims follow `floor((H + 2*padding - kernel) / stride) + 1`.
pub fn conv2d(fmap: &FeatureMap, spec: &ConvSpec) -> Result<FeatureMap> {
    if fmap.channels != spec.in_channels {
        return Err(Error::domain(format!(
            "input has {} channels, conv expects {}",
            fmap.channels, spec.in_channels
        )));
    }
    let out_dim = |n: usize, k: usize| -> Result<usize> {
        let padded = n + 2 * spec.padding;
        if padded < k {
            return Err(Error::domain("non-positive convolution output dims"));
        }
        Ok((padded - k) / spec.stride + 1)
    };
    let out_h = out_dim(fmap.height, spec.kernel_h)?;
    let out_w = out_dim(fmap.width, spec.kernel_w)?;

    let mut out = FeatureMap::zeros(spec.out_channels, out_h, out_w);
    let pad = spec.padding as isize;
    for o in 0..spec.out_channels {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut acc = spec.bias[o] as f64;
                let base_y = (oy * spec.stride) as isize - pad;
                let base_x = (ox * spec.stride) as isize - pad;
                for i in 0..spec.in_channels {
                    for ky in 0..spec.kernel_h {
                        let sy = base_y + ky as isize;
                        if sy < 0 || sy >= fmap.height as isize {
                            continue;
                        }
                        for kx in 0..spec.kernel_w {
                            let sx = base_x + kx as isize;
                            if sx < 0 || sx >= fmap.width as isize {
                                continue;
                            }
                            acc += fmap.get(i, sy as usize, sx as usize) as f64
                                * spec.weight(o, i, ky, kx) as f64;
                        }
                    }
                }
                out.set(o, oy, ox, acc as f32);
            }
        }
    }
    Ok(out)
}

/// Average pooling with floor semantics: windows that would overrun the
/// border are dropped.
pub fn avg_pool(fmap: &FeatureMap, window: usize, stride: usize) -> Result<FeatureMap> {
    if window == 0 || stride == 0 {
        return Err(Error::domain("window and stride must be positive"));
    }
    if window > fmap.height || window > fmap.width {
        return Err(Error::domain(format!(
            "pooling window {} exceeds map dims {}x{}",
            window, fmap.height, fmap.width
        )));
    }
    let out_h = (fmap.height - window) / stride + 1;
    let out_w = (fmap.width - window) / stride + 1;
    let inv = 1.0 / (window * window) as f64;
    let mut out = FeatureMap::zeros(fmap.channels, out_h, out_w);
    for c in 0..fmap.channels {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut acc = 0.0f64;
                for ky in 0..window {
                    for kx in 0..window {
                        acc += fmap.get(c, oy * stride + ky, ox * stride + kx) as f64;
                    }
                }
                out.set(c, oy, ox, (acc * inv) as f32);
            }
        }
    }
    Ok(out)
}

/// Per-channel global average, returned as a `(C, 1, 1)` map.
pub fn global_avg_pool(fmap: &FeatureMap) -> Result<FeatureMap> {
    if fmap.height == 0 || fmap.width == 0 {
        return Err(Error::domain("cannot pool an empty map"));
    }
    let inv = 1.0 / (fmap.height * fmap.width) as f64;
    let data = (0..fmap.channels)
        .map(|c| {
            let sum: f64 = fmap.channel(c).iter().map(|&v| v as f64).sum();
            (sum * inv) as f32
        })
        .collect();
    FeatureMap::new(fmap.channels, 1, 1, data)
}
