//! ROI localization: deterministic grid pooling into a feature vector, a
//! closed-form ridge regressor predicting the four box coordinates plus the
//! rotation angle, and the associated losses.
//!
//! The regressor minimizes the regularized least-squares objective exactly:
//! `W = (X'X + lambda*D)^-1 X'Y` with a bias column appended to `X` and the
//! bias row excluded from regularization (`D` is the identity with a zero in
//! the bias slot). Targets are direct coordinates, not proposal offsets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compress::RoiBox;
use crate::error::{Error, Result};
use crate::fmap::Image;

/// Predicted ROI box and rotation angle, already repaired so that
/// `x_min < x_max` and `y_min < y_max` hold within image bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiPrediction {
    pub bbox: RoiBox,
    pub phi: f64,
}

/// Closed-form ridge regressor mapping pooled features to
/// `(x_min, y_min, x_max, y_max, phi)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RidgeRegressor {
    pub lambda: f64,
    pub feature_dim: usize,
    /// Pooling grid `[h, w]` the model was trained with.
    pub grid: [usize; 2],
    /// Row-major `(feature_dim + 1) x 5`; the bias row is last.
    pub weights: Vec<f64>,
}

/// Grid-pooled feature vector: `grid_h * grid_w` cell means, normalized to
/// `[0, 1]`.
pub fn pool_features(image: &Image, grid_h: usize, grid_w: usize) -> Result<Vec<f64>> {
    let (h, w) = (image.height(), image.width());
    if grid_h == 0 || grid_w == 0 || grid_h > h || grid_w > w {
        return Err(Error::domain(format!(
            "pooling grid {grid_h}x{grid_w} invalid for {h}x{w} image"
        )));
    }
    let mut out = Vec::with_capacity(grid_h * grid_w);
    for gy in 0..grid_h {
        let y0 = gy * h / grid_h;
        let y1 = (gy + 1) * h / grid_h;
        for gx in 0..grid_w {
            let x0 = gx * w / grid_w;
            let x1 = (gx + 1) * w / grid_w;
            let mut sum = 0u64;
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += image.get(y, x) as u64;
                }
            }
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            out.push(sum as f64 / (255.0 * count));
        }
    }
    Ok(out)
}

/// Solves `A x = b` for symmetric positive-definite `A` via Cholesky.
/// `a` is row-major `n x n`, `b` has `m` right-hand sides (row-major `n x m`);
/// the solution overwrites `b`.
fn solve_spd(a: &mut [f64], b: &mut [f64], n: usize, m: usize) -> Result<()> {
    // in-place lower Cholesky factor
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d <= 1e-12 {
            return Err(Error::Numerical(
                "singular or indefinite normal equations; supply lambda > 0".into(),
            ));
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / d;
        }
    }
    // forward then backward substitution per right-hand side
    for col in 0..m {
        for i in 0..n {
            let mut v = b[i * m + col];
            for k in 0..i {
                v -= a[i * n + k] * b[k * m + col];
            }
            b[i * m + col] = v / a[i * n + i];
        }
        for i in (0..n).rev() {
            let mut v = b[i * m + col];
            for k in i + 1..n {
                v -= a[k * n + i] * b[k * m + col];
            }
            b[i * m + col] = v / a[i * n + i];
        }
    }
    Ok(())
}

/// Fits the ridge regressor in closed form.
///
/// `x` holds `n` feature rows of equal length `d`; `y` holds the matching
/// 5-element targets. The bias row is excluded from regularization. With
/// `lambda = 0` a rank-deficient system is reported as a numerical error.
pub fn ridge_fit(x: &[Vec<f64>], y: &[[f64; 5]], lambda: f64, grid: [usize; 2]) -> Result<RidgeRegressor> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::domain("ridge_fit needs matching, non-empty X and Y"));
    }
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::domain("lambda must be finite and >= 0"));
    }
    let d = x[0].len();
    if x.iter().any(|row| row.len() != d) {
        return Err(Error::domain("inconsistent feature dimensions"));
    }
    let n = d + 1; // bias column appended

    // normal equations: A = X'X + lambda*D, B = X'Y
    let mut a = vec![0.0f64; n * n];
    let mut b = vec![0.0f64; n * 5];
    let feat = |row: &Vec<f64>, j: usize| if j < d { row[j] } else { 1.0 };
    for row in 0..x.len() {
        for i in 0..n {
            let xi = feat(&x[row], i);
            for j in i..n {
                a[i * n + j] += xi * feat(&x[row], j);
            }
            for t in 0..5 {
                b[i * 5 + t] += xi * y[row][t];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            a[i * n + j] = a[j * n + i];
        }
    }
    for i in 0..d {
        a[i * n + i] += lambda; // bias row unregularized
    }

    solve_spd(&mut a, &mut b, n, 5)?;
    Ok(RidgeRegressor { lambda, feature_dim: d, grid, weights: b })
}

impl RidgeRegressor {
    /// Raw linear prediction `(x_min, y_min, x_max, y_max, phi)` before any
    /// repair.
    pub fn predict_raw(&self, features: &[f64]) -> Result<[f64; 5]> {
        if features.len() != self.feature_dim {
            return Err(Error::domain(format!(
                "feature dim {} does not match model dim {}",
                features.len(),
                self.feature_dim
            )));
        }
        let mut out = [0.0f64; 5];
        for (t, slot) in out.iter_mut().enumerate() {
            let mut acc = self.weights[self.feature_dim * 5 + t]; // bias row
            for (j, &f) in features.iter().enumerate() {
                acc += self.weights[j * 5 + t] * f;
            }
            *slot = acc;
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let model: RidgeRegressor =
            serde_json::from_slice(&bytes).map_err(|e| Error::format(format!("model: {e}")))?;
        if model.weights.len() != (model.feature_dim + 1) * 5 {
            return Err(Error::format("model: weight length mismatch"));
        }
        if model.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::format("model: non-finite weights"));
        }
        Ok(model)
    }
}

/// Predicts the ROI for pooled features, repairing degenerate outputs by
/// coordinate swap plus clamping to the image bounds (never rejecting).
pub fn predict_roi(
    model: &RidgeRegressor,
    features: &[f64],
    img_h: usize,
    img_w: usize,
) -> Result<RoiPrediction> {
    let raw = model.predict_raw(features)?;
    let (mut x0, mut y0, mut x1, mut y1) = (raw[0], raw[1], raw[2], raw[3]);
    if x0 > x1 {
        std::mem::swap(&mut x0, &mut x1);
    }
    if y0 > y1 {
        std::mem::swap(&mut y0, &mut y1);
    }
    let (w, h) = (img_w as f64, img_h as f64);
    let x0 = x0.clamp(0.0, w - 1.0);
    let x1 = x1.clamp(x0 + 1.0, w);
    let y0 = y0.clamp(0.0, h - 1.0);
    let y1 = y1.clamp(y0 + 1.0, h);
    Ok(RoiPrediction { bbox: RoiBox { x_min: x0, y_min: y0, x_max: x1, y_max: y1 }, phi: raw[4] })
}

/// Smooth-L1 box loss: per coordinate `0.5*e^2` if `|e| < 1`, else
/// `|e| - 0.5`, summed over the four coordinates.
pub fn smooth_l1(pred: &[f64; 4], truth: &[f64; 4]) -> f64 {
    pred.iter()
        .zip(truth)
        .map(|(&p, &t)| {
            let e = (p - t).abs();
            if e < 1.0 {
                0.5 * e * e
            } else {
                e - 0.5
            }
        })
        .sum()
}

/// Plane rotation: `(x', y') = (x cos phi - y sin phi, x sin phi + y cos phi)`.
pub fn rotation_map(phi: f64, x: f64, y: f64) -> (f64, f64) {
    let (sin, cos) = phi.sin_cos();
    (x * cos - y * sin, x * sin + y * cos)
}
