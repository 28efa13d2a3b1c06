//! Spatial and channel redundancy removal.
//!
//! `roi_align` extracts a fixed-size region with real-valued bilinear
//! sampling, with no integer rounding anywhere in the coordinate chain.
//! `rotate_fmap` applies the rotation correction, destination-driven with
//! bilinear interpolation so there are no holes. `de_r_conv` removes channel
//! redundancy: channel-attention weights split the map into a positively and
//! a negatively weighted path, each path group-sums four contiguous channel
//! groups, and the concatenated output carries `3C/8` channels.
//!
//! Box convention: a [`RoiBox`] uses edge coordinates (pixel `k` occupies
//! `[k, k+1)`), so a box with integer corners covers whole pixels and
//! `roi_align` with matching output dims reduces to an exact crop. Sampling
//! positions convert to the pixel-center frame by subtracting half a pixel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmap::{bilinear_sample, conv2d, global_avg_pool, ConvSpec, FeatureMap};
use crate::locator::RoiPrediction;
use crate::rng::derive_seed;

const DOM_ATT_REDUCE: u64 = 0xA001;
const DOM_ATT_EXPAND: u64 = 0xA002;
const DOM_FORWARD: u64 = 0xA003;
const DOM_REVERSE: u64 = 0xA004;
const DOM_SQUEEZE: u64 = 0xA005;
const DOM_SHALLOW: u64 = 0xA006;

/// Axis-aligned region in edge coordinates: pixel `k` occupies `[k, k+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", try_from = "[f64; 4]")]
pub struct RoiBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl RoiBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = RoiBox { x_min, y_min, x_max, y_max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.x_min, self.y_min, self.x_max, self.y_max];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("box coordinates must be finite"));
        }
        if self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::domain(format!(
                "degenerate box ({}, {}, {}, {})",
                self.x_min, self.y_min, self.x_max, self.y_max
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Scales both corners, e.g. to map image-space coordinates onto a
    /// strided feature map.
    pub fn scaled(&self, sx: f64, sy: f64) -> RoiBox {
        RoiBox {
            x_min: self.x_min * sx,
            y_min: self.y_min * sy,
            x_max: self.x_max * sx,
            y_max: self.y_max * sy,
        }
    }

    /// Shrinks the box by `margin` pixels on every side, capped so at least
    /// 60% of each dimension survives.
    pub fn inset(&self, margin: f64) -> RoiBox {
        let mx = margin.min(0.2 * self.width());
        let my = margin.min(0.2 * self.height());
        RoiBox {
            x_min: self.x_min + mx,
            y_min: self.y_min + my,
            x_max: self.x_max - mx,
            y_max: self.y_max - my,
        }
    }
}

impl From<RoiBox> for [f64; 4] {
    fn from(b: RoiBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

impl TryFrom<[f64; 4]> for RoiBox {
    type Error = Error;
    fn try_from(v: [f64; 4]) -> Result<Self> {
        RoiBox::new(v[0], v[1], v[2], v[3])
    }
}

/// Extracts `box` into a `(C, out_h, out_w)` map. Each output pixel is the
/// bilinear sample at the real-valued center of its sub-region; boxes may
/// extend past the borders (samples clamp).
pub fn roi_align(fmap: &FeatureMap, bbox: &RoiBox, out_h: usize, out_w: usize) -> Result<FeatureMap> {
    bbox.validate()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::domain("output dims must be >= 1"));
    }
    let bin_w = bbox.width() / out_w as f64;
    let bin_h = bbox.height() / out_h as f64;
    let mut out = FeatureMap::zeros(fmap.channels(), out_h, out_w);
    for c in 0..fmap.channels() {
        for oy in 0..out_h {
            // sub-region center, shifted into the pixel-center frame
            let sy = bbox.y_min + (oy as f64 + 0.5) * bin_h - 0.5;
            for ox in 0..out_w {
                let sx = bbox.x_min + (ox as f64 + 0.5) * bin_w - 0.5;
                out.set(c, oy, ox, bilinear_sample(fmap, c, sx, sy)? as f32);
            }
        }
    }
    Ok(out)
}

/// Rotation correction about the map center: output pixel `p` samples the
/// input at `R(phi) * (p - center) + center`, undoing content that was
/// rotated by `phi`. Same dims; borders clamp.
pub fn rotate_fmap(fmap: &FeatureMap, phi: f64) -> Result<FeatureMap> {
    if !phi.is_finite() {
        return Err(Error::domain("rotation angle must be finite"));
    }
    let (h, w) = (fmap.height(), fmap.width());
    if h == 0 || w == 0 {
        return Ok(fmap.clone());
    }
    let cx = (w - 1) as f64 / 2.0;
    let cy = (h - 1) as f64 / 2.0;
    let (sin, cos) = phi.sin_cos();
    let mut out = FeatureMap::zeros(fmap.channels(), h, w);
    for c in 0..fmap.channels() {
        for y in 0..h {
            let dy = y as f64 - cy;
            for x in 0..w {
                let dx = x as f64 - cx;
                let sx = cx + dx * cos - dy * sin;
                let sy = cy + dx * sin + dy * cos;
                out.set(c, y, x, bilinear_sample(fmap, c, sx, sy)? as f32);
            }
        }
    }
    Ok(out)
}

/// Parameters of the de-redundant convolution. All weights derive
/// deterministically from `init_seed` (fan-in-scaled uniform, zero bias) or
/// load from a weight blob; nothing is trained here.
#[derive(Debug, Clone)]
pub struct DeRConvParams {
    pub in_channels: usize,
    pub init_seed: u64,
    /// 1x1, C -> C/4: first attention stage.
    pub attention_reduce: ConvSpec,
    /// 1x1, C/4 -> C: second attention stage.
    pub attention_expand: ConvSpec,
    /// 3x3 pad 1, C/4 -> C/4: forward (positively weighted) path.
    pub forward_conv: ConvSpec,
    /// 3x3 pad 1, C/4 -> C/4: reverse (negatively weighted) path.
    pub reverse_conv: ConvSpec,
    /// 1x1, C/4 -> C/8: final compression of the reverse path.
    pub reverse_squeeze: ConvSpec,
}

fn check_channels(c: usize) -> Result<()> {
    if c == 0 || !c.is_multiple_of(8) {
        return Err(Error::domain(format!("channel count {c} must be a positive multiple of 8")));
    }
    Ok(())
}

impl DeRConvParams {
    /// Deterministic initialization from a seed.
    pub fn seeded(in_channels: usize, init_seed: u64) -> Result<Self> {
        check_channels(in_channels)?;
        let c = in_channels;
        let s = |dom: u64| derive_seed(init_seed, dom, 0);
        Ok(DeRConvParams {
            in_channels: c,
            init_seed,
            attention_reduce: ConvSpec::seeded(1, 1, 1, 0, c, c / 4, s(DOM_ATT_REDUCE)),
            attention_expand: ConvSpec::seeded(1, 1, 1, 0, c / 4, c, s(DOM_ATT_EXPAND)),
            forward_conv: ConvSpec::seeded(3, 3, 1, 1, c / 4, c / 4, s(DOM_FORWARD)),
            reverse_conv: ConvSpec::seeded(3, 3, 1, 1, c / 4, c / 4, s(DOM_REVERSE)),
            reverse_squeeze: ConvSpec::seeded(1, 1, 1, 0, c / 4, c / 8, s(DOM_SQUEEZE)),
        })
    }

    /// Output channel count: `3C/8`.
    pub fn out_channels(&self) -> usize {
        3 * self.in_channels / 8
    }

    /// The seeded shallow feature bank used to lift a grayscale image to
    /// `C` channels before alignment: 7x7, stride 2, padding 3.
    pub fn shallow_bank(&self) -> ConvSpec {
        ConvSpec::seeded(7, 7, 2, 3, 1, self.in_channels, derive_seed(self.init_seed, DOM_SHALLOW, 0))
    }

    /// Flattens every weight and bias into one blob, in declaration order.
    pub fn to_weight_blob(&self) -> FeatureMap {
        let mut data = Vec::new();
        for spec in [
            &self.attention_reduce,
            &self.attention_expand,
            &self.forward_conv,
            &self.reverse_conv,
            &self.reverse_squeeze,
        ] {
            data.extend_from_slice(&spec.weights);
            data.extend_from_slice(&spec.bias);
        }
        let n = data.len();
        FeatureMap::new(1, 1, n, data).expect("finite weights")
    }

    /// Rebuilds params from a weight blob written by [`Self::to_weight_blob`].
    pub fn from_weight_blob(in_channels: usize, blob: &FeatureMap) -> Result<Self> {
        check_channels(in_channels)?;
        let mut proto = DeRConvParams::seeded(in_channels, 0)?;
        let data = blob.data();
        let mut pos = 0usize;
        for spec in [
            &mut proto.attention_reduce,
            &mut proto.attention_expand,
            &mut proto.forward_conv,
            &mut proto.reverse_conv,
            &mut proto.reverse_squeeze,
        ] {
            let (nw, nb) = (spec.weights.len(), spec.bias.len());
            if pos + nw + nb > data.len() {
                return Err(Error::format("weight blob too short for channel count"));
            }
            spec.weights.copy_from_slice(&data[pos..pos + nw]);
            pos += nw;
            spec.bias.copy_from_slice(&data[pos..pos + nb]);
            pos += nb;
        }
        if pos != data.len() {
            return Err(Error::format("weight blob has trailing data"));
        }
        Ok(proto)
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct DeRConvDescriptor {
    c: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    init_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights_file: Option<String>,
}

/// Writes the JSON descriptor for a parameter set. With `embed_weights` the
/// weights go to a sibling FMAP blob referenced by the descriptor; otherwise
/// the descriptor carries only `{c, init_seed}` and loading re-derives the
/// seeded initialization.
pub fn save_derconv(
    path: impl AsRef<std::path::Path>,
    params: &DeRConvParams,
    embed_weights: bool,
) -> Result<()> {
    let path = path.as_ref();
    let descriptor = if embed_weights {
        let blob_name = format!(
            "{}.weights.fmap",
            path.file_stem().map(|s| s.to_string_lossy()).unwrap_or_default()
        );
        let blob_path = path.with_file_name(&blob_name);
        crate::io::write_fmap(blob_path, &params.to_weight_blob())?;
        DeRConvDescriptor { c: params.in_channels, init_seed: None, weights_file: Some(blob_name) }
    } else {
        DeRConvDescriptor {
            c: params.in_channels,
            init_seed: Some(params.init_seed),
            weights_file: None,
        }
    };
    std::fs::write(path, serde_json::to_vec_pretty(&descriptor)?)?;
    Ok(())
}

/// Loads a parameter set from its JSON descriptor, resolving any weight blob
/// relative to the descriptor's directory.
pub fn load_derconv(path: impl AsRef<std::path::Path>) -> Result<DeRConvParams> {
    let path = path.as_ref();
    let descriptor: DeRConvDescriptor = serde_json::from_slice(&std::fs::read(path)?)
        .map_err(|e| Error::format(format!("derconv descriptor: {e}")))?;
    match (descriptor.init_seed, descriptor.weights_file) {
        (Some(seed), None) => DeRConvParams::seeded(descriptor.c, seed),
        (None, Some(file)) => {
            let base = path.parent().unwrap_or_else(|| std::path::Path::new("."));
            let blob = crate::io::read_fmap(base.join(file))?;
            DeRConvParams::from_weight_blob(descriptor.c, &blob)
        }
        _ => Err(Error::format(
            "derconv descriptor: exactly one of init_seed or weights_file required",
        )),
    }
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Channel weights `w` (logistic of the attention response to the global
/// average pool) and the flipped weights `w' = 1 - w`.
pub fn channel_weights(fmap: &FeatureMap, params: &DeRConvParams) -> Result<(Vec<f64>, Vec<f64>)> {
    if fmap.channels() != params.in_channels {
        return Err(Error::domain(format!(
            "input has {} channels, params expect {}",
            fmap.channels(),
            params.in_channels
        )));
    }
    let pooled = global_avg_pool(fmap)?;
    let hidden = conv2d(&pooled, &params.attention_reduce)?;
    let response = conv2d(&hidden, &params.attention_expand)?;
    let w: Vec<f64> = response.data().iter().map(|&v| logistic(v as f64)).collect();
    let w_flip: Vec<f64> = w.iter().map(|&v| 1.0 - v).collect();
    Ok((w, w_flip))
}

/// Multiplies each channel plane by its weight.
pub fn scale_channels(fmap: &FeatureMap, weights: &[f64]) -> Result<FeatureMap> {
    if weights.len() != fmap.channels() {
        return Err(Error::domain("one weight per channel required"));
    }
    let plane = fmap.height() * fmap.width();
    let mut data = Vec::with_capacity(fmap.data().len());
    for (c, &w) in weights.iter().enumerate() {
        data.extend(fmap.data()[c * plane..(c + 1) * plane].iter().map(|&v| (v as f64 * w) as f32));
    }
    FeatureMap::new(fmap.channels(), fmap.height(), fmap.width(), data)
}

/// Group fusion: splits the channels into four contiguous groups in index
/// order and sums them elementwise, `C -> C/4`.
pub fn group_sum(fmap: &FeatureMap) -> Result<FeatureMap> {
    let c = fmap.channels();
    if c == 0 || !c.is_multiple_of(4) {
        return Err(Error::domain(format!("channel count {c} must be a positive multiple of 4")));
    }
    let out_c = c / 4;
    let plane = fmap.height() * fmap.width();
    let mut data = vec![0.0f32; out_c * plane];
    for g in 0..4 {
        for j in 0..out_c {
            let src = fmap.channel(g * out_c + j);
            let dst = &mut data[j * plane..(j + 1) * plane];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = ((*d as f64) + s as f64) as f32;
            }
        }
    }
    FeatureMap::new(out_c, fmap.height(), fmap.width(), data)
}

fn concat_channels(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::domain("concat requires matching spatial dims"));
    }
    let mut data = Vec::with_capacity(a.data().len() + b.data().len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    FeatureMap::new(a.channels() + b.channels(), a.height(), a.width(), data)
}

/// The de-redundant convolution: dual-path channel-weighted group fusion,
/// `(C, H, W) -> (3C/8, H, W)`.
pub fn de_r_conv(fmap: &FeatureMap, params: &DeRConvParams) -> Result<FeatureMap> {
    check_channels(fmap.channels())?;
    let (w, w_flip) = channel_weights(fmap, params)?;

    let forward = {
        let weighted = scale_channels(fmap, &w)?;
        let fused = group_sum(&weighted)?;
        conv2d(&fused, &params.forward_conv)?
    };
    let reverse = {
        let weighted = scale_channels(fmap, &w_flip)?;
        let fused = group_sum(&weighted)?;
        let dense = conv2d(&fused, &params.reverse_conv)?;
        conv2d(&dense, &params.reverse_squeeze)?
    };
    concat_channels(&forward, &reverse)
}

/// Full compression of a feature map: ROI alignment to `(out_h, out_w)`,
/// channel reduction, then rotation correction with the predicted angle.
pub fn compress_fmap(
    fmap: &FeatureMap,
    prediction: &RoiPrediction,
    params: &DeRConvParams,
    out_h: usize,
    out_w: usize,
) -> Result<FeatureMap> {
    let aligned = roi_align(fmap, &prediction.bbox, out_h, out_w)?;
    let reduced = de_r_conv(&aligned, params)?;
    rotate_fmap(&reduced, prediction.phi)
}

/// Subtracts each row's mean within every channel.
///
/// Compressed vein maps carry a large shared component: the response of the
/// untrained filters to the bright finger band and its cylindrical shading,
/// a near-pure function of the row that is common to every finger. Removing
/// the per-row means leaves the vessel-driven variation that matching
/// should score; a vessel's contribution to a full row mean is diluted by
/// the row length, so identity information survives.
pub fn center_channels(fmap: &FeatureMap) -> FeatureMap {
    let (h, w) = (fmap.height(), fmap.width());
    let mut data = Vec::with_capacity(fmap.data().len());
    for c in 0..fmap.channels() {
        let chan = fmap.channel(c);
        for y in 0..h {
            let row = &chan[y * w..(y + 1) * w];
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / w.max(1) as f64;
            data.extend(row.iter().map(|&v| (v as f64 - mean) as f32));
        }
    }
    FeatureMap::new(fmap.channels(), fmap.height(), fmap.width(), data).expect("finite")
}

/// Compression straight from a grayscale image: the seeded shallow bank
/// lifts the image to `C` channels (stride 2), the predicted box is scaled
/// onto the feature map, then [`compress_fmap`] runs as usual.
pub fn compress_image(
    image: &crate::fmap::Image,
    prediction: &RoiPrediction,
    params: &DeRConvParams,
    out_h: usize,
    out_w: usize,
) -> Result<FeatureMap> {
    let shallow = conv2d(&image.to_fmap(), &params.shallow_bank())?;
    let sx = shallow.width() as f64 / image.width() as f64;
    let sy = shallow.height() as f64 / image.height() as f64;
    let scaled = RoiPrediction { bbox: prediction.bbox.scaled(sx, sy), phi: prediction.phi };
    compress_fmap(&shallow, &scaled, params, out_h, out_w)
}

/// The box inset used when building matchable templates, in image pixels.
///
/// The shallow bank's receptive field drags the strong band/background edge
/// response into the outer rows and columns of an aligned ROI. That response
/// is nearly identical for every finger, so templates built from the raw
/// predicted box correlate across identities regardless of vein content;
/// its exact position also shifts with the per-sample prediction error, which
/// destabilizes genuine comparisons too. Shrinking the box keeps the
/// alignment anchored on the prediction while sampling only edge-free vein
/// area; 20 px clears the edge, its softness, and the receptive radius with
/// margin for prediction error.
pub const TEMPLATE_BOX_INSET: f64 = 20.0;

/// Margins (rows, cols) such that the centered `out_h x out_w` crop of a
/// `(out_h + 2m_y) x (out_w + 2m_x)` map contains only in-band ROI content
/// when the content was rotated by up to `max_angle`.
///
/// Two border effects must stay outside the crop: content rotating out of
/// the canvas during correction, and (dominating) the overhang of the
/// axis-aligned box around the rotated region, which fills the canvas
/// borders with out-of-region content of width about `sin(angle)` times the
/// opposite half-dimension. The margins solve that small fixed point, plus
/// slack for the edge-response bleed and the conv padding ring.
fn rotation_margins(out_h: usize, out_w: usize, max_angle: f64) -> (usize, usize) {
    let sin = max_angle.sin();
    let bleed = 2.5;
    let mut m_y = 0.0f64;
    let mut m_x = 0.0f64;
    for _ in 0..8 {
        m_y = sin * (out_w as f64 / 2.0 + m_x) + bleed;
        m_x = sin * (out_h as f64 / 2.0 + m_y) + bleed;
    }
    (m_y.ceil().max(1.0) as usize, m_x.ceil().max(1.0) as usize)
}

/// Multiplies the map by a raised-cosine window tiled over `block x block`
/// cells: full weight at cell centers, zero at the seams.
///
/// The keyed transform pins the mesh borders of every block, so content at
/// block seams survives protection verbatim; when the keyed remapping leaves
/// a block in place, those seams link the protected template back to its
/// unprotected source. De-weighting the seams removes that pre-image
/// foothold, while comparisons that share a key (and therefore the exact
/// same warp) are unaffected.
pub fn seam_window(fmap: &FeatureMap, block: usize) -> Result<FeatureMap> {
    if block == 0 || !fmap.height().is_multiple_of(block) || !fmap.width().is_multiple_of(block) {
        return Err(Error::domain(format!(
            "seam window block {} must divide map dims {}x{}",
            block,
            fmap.height(),
            fmap.width()
        )));
    }
    let weight = |t: usize| -> f64 {
        let phase = std::f64::consts::TAU * (t % block) as f64 / block as f64;
        0.5 * (1.0 - phase.cos())
    };
    let mut out = FeatureMap::zeros(fmap.channels(), fmap.height(), fmap.width());
    for c in 0..fmap.channels() {
        for y in 0..fmap.height() {
            let wy = weight(y);
            for x in 0..fmap.width() {
                out.set(c, y, x, (fmap.get(c, y, x) as f64 * wy * weight(x)) as f32);
            }
        }
    }
    Ok(out)
}

/// Builds the source-domain template used for enrollment and matching.
///
/// The predicted box is shrunk by [`TEMPLATE_BOX_INSET`], compressed onto a
/// canvas enlarged by the rotation margins, cropped back to
/// `(out_h, out_w)`, row-centered, and seam-windowed for the given block
/// size. The enlarged canvas matters: the rotation correction runs last in
/// the compression chain, so corner wedges of the corrected map would
/// otherwise contain border-clamp content that varies with each sample's
/// angle and poisons genuine comparisons. The margin also swallows the
/// zero-padding ring of the 3x3 stages, which is near-identical for every
/// finger.
pub fn source_template(
    image: &crate::fmap::Image,
    prediction: &RoiPrediction,
    params: &DeRConvParams,
    out_h: usize,
    out_w: usize,
    seam_block: usize,
) -> Result<FeatureMap> {
    let pred = RoiPrediction {
        bbox: prediction.bbox.inset(TEMPLATE_BOX_INSET),
        phi: prediction.phi,
    };
    let (m_y, m_x) = rotation_margins(out_h, out_w, 11f64.to_radians());
    let compressed =
        compress_image(image, &pred, params, out_h + 2 * m_y, out_w + 2 * m_x)?;
    let mut cropped = FeatureMap::zeros(compressed.channels(), out_h, out_w);
    for c in 0..compressed.channels() {
        for y in 0..out_h {
            for x in 0..out_w {
                cropped.set(c, y, x, compressed.get(c, y + m_y, x + m_x));
            }
        }
    }
    seam_window(&center_channels(&cropped), seam_block)
}
