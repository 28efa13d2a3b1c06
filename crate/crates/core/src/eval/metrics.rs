//! Score-level metrics: cosine matching, ROC/EER, IoU, global unlinkability,
//! decidability, and the pre-image attack match rate.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compress::RoiBox;
use crate::error::{Error, Result};
use crate::fmap::FeatureMap;

/// Labeled similarity scores collected by the evaluation protocol. Optional
/// lists are empty when absent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
    pub pseudo_impostor: Vec<f64>,
    pub mated: Vec<f64>,
    pub non_mated: Vec<f64>,
}

/// One operating point of the ROC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// Flattened cosine similarity of two equal-shaped maps, in `[-1, 1]`.
pub fn cosine_score(a: &FeatureMap, b: &FeatureMap) -> Result<f64> {
    if a.channels() != b.channels() || a.height() != b.height() || a.width() != b.width() {
        return Err(Error::domain("cosine_score requires identical dims"));
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::domain("cosine_score is undefined for zero-norm inputs"));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// ROC sweep over all distinct scores plus the equal-error operating point.
///
/// `FAR(t)` is the fraction of impostor scores `>= t`; `FRR(t)` the fraction
/// of genuine scores `< t`. The EER is the value where the two rates cross,
/// linearly interpolated between adjacent thresholds when they never exactly
/// coincide. Returns `(roc, eer, threshold)`.
pub fn roc_eer(genuine: &[f64], impostor: &[f64]) -> Result<(Vec<RocPoint>, f64, f64)> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::domain("roc_eer requires non-empty genuine and impostor lists"));
    }
    if genuine.iter().chain(impostor).any(|s| !s.is_finite()) {
        return Err(Error::domain("scores must be finite"));
    }
    let mut gen_sorted = genuine.to_vec();
    let mut imp_sorted = impostor.to_vec();
    gen_sorted.sort_by(f64::total_cmp);
    imp_sorted.sort_by(f64::total_cmp);

    let mut thresholds: Vec<f64> = gen_sorted.iter().chain(&imp_sorted).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let count_lt = |sorted: &[f64], t: f64| sorted.partition_point(|&s| s < t);
    let roc: Vec<RocPoint> = thresholds
        .iter()
        .map(|&t| RocPoint {
            threshold: t,
            far: (imp_sorted.len() - count_lt(&imp_sorted, t)) as f64 / imp_sorted.len() as f64,
            frr: count_lt(&gen_sorted, t) as f64 / gen_sorted.len() as f64,
        })
        .collect();

    // walk the operating points (plus a virtual end point past the maximum
    // score where FAR = 0, FRR = 1) until FRR catches up with FAR
    let last = *thresholds.last().expect("non-empty");
    let end = RocPoint { threshold: last, far: 0.0, frr: 1.0 };
    let mut crossing = (0.0f64, end.threshold);
    let mut prev = roc[0];
    for &point in roc.iter().skip(1).chain(std::iter::once(&end)) {
        if point.frr >= point.far {
            crossing = if (point.frr - point.far).abs() < f64::EPSILON {
                (point.far, point.threshold)
            } else {
                let gap_prev = prev.far - prev.frr; // > 0 before the crossing
                let gap_next = point.frr - point.far; // > 0 after
                let alpha = gap_prev / (gap_prev + gap_next);
                (
                    prev.far + alpha * (point.far - prev.far),
                    prev.threshold + alpha * (point.threshold - prev.threshold),
                )
            };
            break;
        }
        prev = point;
    }
    let (eer, tau) = crossing;
    Ok((roc, eer, tau))
}

/// Intersection over union of two boxes (edge coordinates), in `[0, 1]`.
pub fn iou(a: &RoiBox, b: &RoiBox) -> f64 {
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// Global unlinkability: the integral of the positive posterior gap between
/// the mated and non-mated hypotheses, weighted by the mated score density.
///
/// Scores are first mapped to normalized ranks over the pooled distinct
/// values, which makes the measure invariant under strictly monotone
/// transforms; densities are then histogram estimates with `n_bins`
/// equal-width bins, Laplace-smoothed (+1 per bin), with posteriors at equal
/// priors. Result is clamped to `[0, 1]`.
pub fn dsys(mated: &[f64], non_mated: &[f64], n_bins: usize) -> Result<f64> {
    if mated.is_empty() || non_mated.is_empty() {
        return Err(Error::domain("dsys requires non-empty mated and non-mated lists"));
    }
    if n_bins < 2 {
        return Err(Error::domain("dsys requires at least 2 bins"));
    }
    if mated.iter().chain(non_mated).any(|s| !s.is_finite()) {
        return Err(Error::domain("scores must be finite"));
    }
    let mut pooled: Vec<f64> = mated.iter().chain(non_mated).copied().collect();
    pooled.sort_by(f64::total_cmp);
    pooled.dedup();
    if pooled.len() < 2 {
        return Ok(0.0); // single distinct score: indistinguishable
    }
    let denom = (pooled.len() - 1) as f64;
    let bin_of = |s: f64| -> usize {
        let rank = pooled.partition_point(|&v| v < s); // index of s in pooled
        (((rank as f64 / denom) * n_bins as f64) as usize).min(n_bins - 1)
    };

    let mut count_m = vec![0usize; n_bins];
    let mut count_n = vec![0usize; n_bins];
    for &s in mated {
        count_m[bin_of(s)] += 1;
    }
    for &s in non_mated {
        count_n[bin_of(s)] += 1;
    }

    let total_m = (mated.len() + n_bins) as f64;
    let total_n = (non_mated.len() + n_bins) as f64;
    let mut d_sys = 0.0f64;
    for i in 0..n_bins {
        let pm = (count_m[i] + 1) as f64 / total_m;
        let pn = (count_n[i] + 1) as f64 / total_n;
        let local = ((pm - pn) / (pm + pn)).max(0.0);
        d_sys += pm * local;
    }
    Ok(d_sys.clamp(0.0, 1.0))
}

/// Decidability index: normalized distance between two score distributions,
/// `|mu1 - mu2| / sqrt((s1^2 + s2^2) / 2)` with unbiased standard
/// deviations. Zero pooled variance with distinct means reports as
/// `+infinity`.
pub fn decidability(dist1: &[f64], dist2: &[f64]) -> Result<f64> {
    if dist1.len() < 2 || dist2.len() < 2 {
        return Err(Error::domain("decidability requires at least 2 scores per distribution"));
    }
    let stats = |d: &[f64]| -> (f64, f64) {
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        (mean, var)
    };
    let (m1, v1) = stats(dist1);
    let (m2, v2) = stats(dist2);
    let gap = (m1 - m2).abs();
    let pooled = ((v1 + v2) / 2.0).sqrt();
    if pooled == 0.0 {
        return Ok(if gap == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(gap / pooled)
}

/// Pre-image attack match rate: the fraction of source-domain attack
/// templates whose best cosine score against the enrolled protected
/// templates meets the acceptance threshold.
pub fn piamr(
    attack_templates: &[FeatureMap],
    enrolled_protected: &[FeatureMap],
    threshold: f64,
) -> Result<f64> {
    if attack_templates.is_empty() || enrolled_protected.is_empty() {
        return Err(Error::domain("piamr requires non-empty template lists"));
    }
    let mut accepted = 0usize;
    for attack in attack_templates {
        let mut best = f64::NEG_INFINITY;
        for enrolled in enrolled_protected {
            best = best.max(cosine_score(attack, enrolled)?);
        }
        if best >= threshold {
            accepted += 1;
        }
    }
    Ok(accepted as f64 / attack_templates.len() as f64)
}

// ---------------------------------------------------------------------------
// CSV interfaces

type LabelSlot = (&'static str, fn(&ScoreSet) -> &Vec<f64>, fn(&mut ScoreSet) -> &mut Vec<f64>);

const LABELS: [LabelSlot; 5] = [
    ("genuine", |s| &s.genuine, |s| &mut s.genuine),
    ("impostor", |s| &s.impostor, |s| &mut s.impostor),
    ("pseudo_impostor", |s| &s.pseudo_impostor, |s| &mut s.pseudo_impostor),
    ("mated", |s| &s.mated, |s| &mut s.mated),
    ("non_mated", |s| &s.non_mated, |s| &mut s.non_mated),
];

/// Writes `pair_id,label,score` rows, one block per populated label.
pub fn write_scores_csv(path: impl AsRef<Path>, scores: &ScoreSet) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref()).map_err(csv_err)?;
    writer.write_record(["pair_id", "label", "score"]).map_err(csv_err)?;
    for (label, get, _) in LABELS {
        for (i, s) in get(scores).iter().enumerate() {
            writer
                .write_record([format!("{label}_{i}"), label.to_string(), format!("{s}")])
                .map_err(csv_err)?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Reads a scores CSV written by [`write_scores_csv`] (or any file with the
/// same header and label vocabulary).
pub fn read_scores_csv(path: impl AsRef<Path>) -> Result<ScoreSet> {
    let mut reader = csv::Reader::from_path(path.as_ref()).map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["pair_id", "label", "score"] {
        return Err(Error::format("scores csv: expected header pair_id,label,score"));
    }
    let mut out = ScoreSet::default();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let label = record.get(1).unwrap_or("");
        let score: f64 = record
            .get(2)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::format(format!("scores csv: bad score {:?}", record.get(2))))?;
        let slot = LABELS
            .iter()
            .find(|(name, _, _)| *name == label)
            .ok_or_else(|| Error::format(format!("scores csv: unknown label {label:?}")))?;
        slot.2(&mut out).push(score);
    }
    Ok(out)
}

/// Dumps ROC operating points as `threshold,far,frr`.
pub fn write_roc_csv(path: impl AsRef<Path>, roc: &[RocPoint]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref()).map_err(csv_err)?;
    writer.write_record(["threshold", "far", "frr"]).map_err(csv_err)?;
    for p in roc {
        writer
            .write_record([format!("{}", p.threshold), format!("{}", p.far), format!("{}", p.frr)])
            .map_err(csv_err)?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::format(format!("csv: {e}"))
}
