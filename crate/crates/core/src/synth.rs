//! Deterministic synthetic vein-image generator with ground truth.
//!
//! Each identity is a set of curvilinear vessel paths in a canonical
//! 256x128 frame. Rendering places the canonical frame inside a bright
//! finger band on a 256x320 image, applies a pose (translation up to 10 px,
//! rotation up to 10 degrees), draws vessels as dark Gaussian cross-sections,
//! and adds a smooth illumination gradient plus seeded Gaussian noise
//! (sigma = 8 gray levels).
//!
//! Everything is a pure function of seeds: the same `(pattern, pose_seed)`
//! yields byte-identical images, and a whole dataset is a pure function of
//! `(n_identities, samples_per_identity, master_seed)` regardless of the
//! parallel schedule.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compress::RoiBox;
use crate::error::{Error, Result};
use crate::fmap::Image;
use crate::io::write_pgm;
use crate::rng::{derive_seed, SplitMix64};

pub const IMAGE_HEIGHT: usize = 256;
pub const IMAGE_WIDTH: usize = 320;

/// Canonical vessel frame: 256 wide, 128 high.
pub const FRAME_W: f64 = 256.0;
pub const FRAME_H: f64 = 128.0;

// Geometry of the rendered finger band, in unposed image coordinates.
// The band is the bright finger region; the canonical vessel frame sits
// centered inside it; the ground-truth ROI is the band inset by 4 px.
const BAND_X0: f64 = 24.0;
const BAND_X1: f64 = 296.0;
const BAND_Y0: f64 = 56.0;
const BAND_Y1: f64 = 200.0;
const FRAME_X0: f64 = 32.0;
const FRAME_Y0: f64 = 64.0;
const ROI_INSET: f64 = 4.0;

const CENTER_X: f64 = 160.0;
const CENTER_Y: f64 = 128.0;

const BG_LEVEL: f64 = 30.0;
const BAND_LEVEL: f64 = 178.0;
const VESSEL_DEPTH: f64 = 78.0;
const NOISE_SIGMA: f64 = 8.0;

const MAX_SHIFT: f64 = 10.0;
const MAX_ANGLE: f64 = 10.0 * std::f64::consts::PI / 180.0;

const DOM_IDENTITY: u64 = 0x4944_4E54;
const DOM_POSE: u64 = 0x504F_5345;
const DOM_TEXTURE: u64 = 0x5458_5452;

/// One identity: vessel polylines in the canonical frame plus per-vessel
/// Gaussian profile widths.
#[derive(Debug, Clone, PartialEq)]
pub struct VeinPattern {
    pub identity_seed: u64,
    /// Control points `(x, y)` with `x` in `[0, 256]`, `y` in `[0, 128]`.
    pub polylines: Vec<Vec<(f32, f32)>>,
    pub widths: Vec<f32>,
}

/// Pose applied to a rendered sample: translation in pixels, rotation about
/// the image center in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub tx: f64,
    pub ty: f64,
    pub theta: f64,
}

impl Pose {
    pub fn identity() -> Self {
        Pose { tx: 0.0, ty: 0.0, theta: 0.0 }
    }
}

/// Ground truth for one rendered sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub bbox: RoiBox,
    pub angle: f64,
    pub identity: u64,
}

/// One manifest row. `box` is `[x_min, y_min, x_max, y_max]` in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub identity: usize,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub angle_rad: f64,
}

/// Builds the vessel pattern for an identity. Deterministic in `seed`.
///
/// Vessel anchor rows, drifts, and wiggles are drawn independently per
/// vessel so that layouts of distinct identities share rows only by chance;
/// stratified placement would make every identity look alike downstream.
pub fn generate_identity(seed: u64) -> VeinPattern {
    let mut rng = SplitMix64::new(seed);
    let n_main = 5 + rng.next_index(4); // 5..=8 roughly horizontal vessels
    let mut polylines = Vec::new();
    let mut widths = Vec::new();

    for _ in 0..n_main {
        let mut y = rng.next_range(8.0, FRAME_H - 8.0);
        let drift = rng.next_range(-0.06, 0.06); // slow per-vessel slope
        let wiggle = rng.next_range(4.0, 11.0);
        let mut pts = Vec::with_capacity(9);
        for k in 0..9 {
            let x = k as f64 * FRAME_W / 8.0;
            y = (y + drift * FRAME_W / 8.0 + rng.next_range(-wiggle, wiggle))
                .clamp(4.0, FRAME_H - 4.0);
            pts.push((x.clamp(0.0, FRAME_W) as f32, y as f32));
        }
        polylines.push(pts);
        widths.push(rng.next_range(2.8, 5.4) as f32);
    }

    // A few short diagonal connectors for topology variety.
    let n_branch = 2 + rng.next_index(2);
    for _ in 0..n_branch {
        let x0 = rng.next_range(20.0, FRAME_W - 90.0);
        let y0 = rng.next_range(12.0, FRAME_H - 12.0);
        let slope = rng.next_range(-0.9, 0.9);
        let mut pts = Vec::with_capacity(4);
        for k in 0..4 {
            let x = x0 + k as f64 * 22.0;
            let y = (y0 + slope * k as f64 * 22.0 + rng.next_range(-3.0, 3.0))
                .clamp(4.0, FRAME_H - 4.0);
            pts.push((x.clamp(0.0, FRAME_W) as f32, y as f32));
        }
        polylines.push(pts);
        widths.push(rng.next_range(2.2, 3.6) as f32);
    }

    VeinPattern { identity_seed: seed, polylines, widths }
}

fn segment_distance_sq(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq > 0.0 {
        (((px - ax) * dx + (py - ay) * dy) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    (px - cx) * (px - cx) + (py - cy) * (py - cy)
}

fn polyline_distance_sq(pts: &[(f32, f32)], x: f64, y: f64) -> f64 {
    let mut best = f64::INFINITY;
    for w in pts.windows(2) {
        let d = segment_distance_sq(x, y, w[0].0 as f64, w[0].1 as f64, w[1].0 as f64, w[1].1 as f64);
        if d < best {
            best = d;
        }
    }
    best
}

/// Canonical (unposed) ground-truth ROI box: the band inset by 4 px.
pub fn canonical_roi() -> RoiBox {
    RoiBox {
        x_min: BAND_X0 + ROI_INSET,
        y_min: BAND_Y0 + ROI_INSET,
        x_max: BAND_X1 - ROI_INSET,
        y_max: BAND_Y1 - ROI_INSET,
    }
}

fn posed_roi(pose: &Pose) -> RoiBox {
    let r = canonical_roi();
    let corners = [
        (r.x_min, r.y_min),
        (r.x_max, r.y_min),
        (r.x_max, r.y_max),
        (r.x_min, r.y_max),
    ];
    let (sin, cos) = pose.theta.sin_cos();
    let (mut x0, mut y0, mut x1, mut y1) =
        (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (qx, qy) in corners {
        let (dx, dy) = (qx - CENTER_X, qy - CENTER_Y);
        let px = CENTER_X + dx * cos - dy * sin + pose.tx;
        let py = CENTER_Y + dx * sin + dy * cos + pose.ty;
        x0 = x0.min(px);
        y0 = y0.min(py);
        x1 = x1.max(px);
        y1 = y1.max(py);
    }
    RoiBox { x_min: x0, y_min: y0, x_max: x1, y_max: y1 }
}

/// Renders a sample under an explicit pose. `texture_seed` drives the
/// illumination gradient and the pixel noise.
pub fn render_with_pose(pattern: &VeinPattern, pose: &Pose, texture_seed: u64) -> (Image, GroundTruth) {
    let mut rng = SplitMix64::new(texture_seed);
    let grad_x = rng.next_range(-9.0, 9.0);
    let grad_y = rng.next_range(-9.0, 9.0);

    let (sin, cos) = pose.theta.sin_cos();
    let mut data = Vec::with_capacity(IMAGE_HEIGHT * IMAGE_WIDTH);

    for y in 0..IMAGE_HEIGHT {
        for x in 0..IMAGE_WIDTH {
            // inverse pose: posed pixel -> unposed coordinates
            let dx = x as f64 - CENTER_X - pose.tx;
            let dy = y as f64 - CENTER_Y - pose.ty;
            let qx = CENTER_X + dx * cos + dy * sin;
            let qy = CENTER_Y - dx * sin + dy * cos;

            // soft-edged band membership
            let inside =
                (qx - BAND_X0).min(BAND_X1 - qx).min(qy - BAND_Y0).min(BAND_Y1 - qy);
            let alpha = 1.0 / (1.0 + (-inside / 1.5).exp());

            // cylinder-like shading across the finger
            let shade = 14.0 * ((qy - CENTER_Y) / 72.0).powi(2);
            let mut value = BG_LEVEL + (BAND_LEVEL - shade - BG_LEVEL) * alpha;

            if alpha > 1e-4 {
                let fx = qx - FRAME_X0;
                let fy = qy - FRAME_Y0;
                let mut attenuation = 0.0;
                for (pts, &w) in pattern.polylines.iter().zip(&pattern.widths) {
                    let d_sq = polyline_distance_sq(pts, fx, fy);
                    let w = w as f64;
                    if d_sq < 25.0 * w * w {
                        // wider vessels run deeper
                        let depth = VESSEL_DEPTH * (0.55 + w / 8.0);
                        attenuation += depth * (-d_sq / (2.0 * w * w)).exp();
                    }
                }
                value -= attenuation.min(1.4 * VESSEL_DEPTH) * alpha;
            }

            value += grad_x * (x as f64 - CENTER_X) / IMAGE_WIDTH as f64
                + grad_y * (y as f64 - CENTER_Y) / IMAGE_HEIGHT as f64;
            value += NOISE_SIGMA * rng.next_gaussian();
            data.push(value.round().clamp(0.0, 255.0) as u8);
        }
    }

    let image = Image::new(IMAGE_HEIGHT, IMAGE_WIDTH, data).expect("sized buffer");
    let truth = GroundTruth {
        bbox: posed_roi(pose),
        angle: pose.theta,
        identity: pattern.identity_seed,
    };
    (image, truth)
}

/// Renders a sample with a pose drawn from `pose_seed`.
pub fn render_sample(pattern: &VeinPattern, pose_seed: u64) -> (Image, GroundTruth) {
    let mut rng = SplitMix64::new(pose_seed);
    let pose = Pose {
        tx: rng.next_range(-MAX_SHIFT, MAX_SHIFT),
        ty: rng.next_range(-MAX_SHIFT, MAX_SHIFT),
        theta: rng.next_range(-MAX_ANGLE, MAX_ANGLE),
    };
    render_with_pose(pattern, &pose, derive_seed(pose_seed, DOM_TEXTURE, 0))
}

/// Renders one dataset sample without touching the filesystem.
pub fn dataset_sample(master_seed: u64, identity: usize, sample: usize) -> (Image, GroundTruth) {
    let pattern = generate_identity(derive_seed(master_seed, DOM_IDENTITY, identity as u64));
    let pose_seed =
        derive_seed(master_seed, DOM_POSE, ((identity as u64) << 20) | sample as u64);
    render_sample(&pattern, pose_seed)
}

/// Generates `n_identities x samples_per_identity` PGM images plus a JSON
/// manifest under `out_dir`. Fully deterministic from `master_seed`.
pub fn generate_dataset(
    n_identities: usize,
    samples_per_identity: usize,
    master_seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<ManifestEntry>> {
    if n_identities == 0 || samples_per_identity == 0 {
        return Err(Error::domain("identity and sample counts must be >= 1"));
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;

    let indices: Vec<(usize, usize)> = (0..n_identities)
        .flat_map(|i| (0..samples_per_identity).map(move |j| (i, j)))
        .collect();

    let rendered: Vec<(ManifestEntry, Image)> = indices
        .par_iter()
        .map(|&(i, j)| {
            let (image, truth) = dataset_sample(master_seed, i, j);
            let entry = ManifestEntry {
                file: format!("id{i:03}_s{j:02}.pgm"),
                identity: i,
                bbox: [truth.bbox.x_min, truth.bbox.y_min, truth.bbox.x_max, truth.bbox.y_max],
                angle_rad: truth.angle,
            };
            (entry, image)
        })
        .collect();

    let mut manifest = Vec::with_capacity(rendered.len());
    for (entry, image) in &rendered {
        write_pgm(out_dir.join(&entry.file), image)?;
        manifest.push(entry.clone());
    }
    fs::write(out_dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Reads a dataset manifest (ours or an externally supplied one with the
/// same layout).
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let bytes = fs::read(&path)?;
    let manifest: Vec<ManifestEntry> = serde_json::from_slice(&bytes)
        .map_err(|e| Error::format(format!("manifest: {e}")))?;
    for m in &manifest {
        if !(m.bbox[0] < m.bbox[2] && m.bbox[1] < m.bbox[3]) {
            return Err(Error::format(format!("manifest: degenerate box in {}", m.file)));
        }
    }
    Ok(manifest)
}
