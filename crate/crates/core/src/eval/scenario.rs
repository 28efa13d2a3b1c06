//! The end-to-end threat-scenario protocol.
//!
//! For a labeled dataset, each sample runs the pipeline (locate -> compress
//! -> protect) and the protocol collects:
//!
//! * **genuine / impostor** scores within the target system (every identity
//!   enrolled under its own key), giving the verification ROC and EER;
//! * **mated / non-mated** scores across `n_keys` cross systems for the
//!   global unlinkability estimate;
//! * **pseudo-impostor** scores (same instance, re-protected under attacker
//!   knowledge), judging revocability via the decidability triplet;
//! * **attack** outcomes (another instance's sample presented with
//!   scenario-dependent key knowledge), giving rank-1 analogs and the
//!   pre-image attack match rate.
//!
//! The three scenarios grade the attacker's knowledge: `normal` draws both
//! cross-system parameters and keys at random, `stolen_params` fixes the
//! target's parameters but draws random keys, `stolen_key` uses the
//! enrolled keys themselves with unenrolled samples. Everything derives
//! from `master_seed`; reports are byte-identical across runs and thread
//! counts.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bwr::{protect, BwrParams, TransformKey};
use crate::compress::{source_template, DeRConvParams};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::eval::metrics::{
    cosine_score, decidability, dsys, piamr, roc_eer, RocPoint, ScoreSet,
};
use crate::fmap::{FeatureMap, Image};
use crate::io::read_pgm;
use crate::locator::{pool_features, predict_roi, ridge_fit};
use crate::rng::{derive_seed, SplitMix64};
use crate::synth::{read_manifest, ManifestEntry};

const DOM_ENROLL: u64 = 0x454E_524C;
const DOM_CROSS_KEY: u64 = 0x584B_4559;
const DOM_CROSS_PARAMS: u64 = 0x5359_5350;
const DOM_PSEUDO_KEY: u64 = 0x5053_4555;
const DOM_PSEUDO_PARAMS: u64 = 0x5053_5050;
const DOM_ATTACK_KEY: u64 = 0x4154_544B;
const DOM_ATTACK_PARAMS: u64 = 0x4154_5450;

/// Attacker knowledge levels, in increasing order of risk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// No information: random parameters, random keys.
    Normal,
    /// The transform hyperparameters are known; keys are random.
    StolenParams,
    /// The enrolled key itself is known; probes are unenrolled samples.
    StolenKey,
}

impl Scenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::Normal => "normal",
            Scenario::StolenParams => "stolen_params",
            Scenario::StolenKey => "stolen_key",
        }
    }

    fn tag(&self) -> u64 {
        (match self {
            Scenario::Normal => 1u64,
            Scenario::StolenParams => 2,
            Scenario::StolenKey => 3,
        }) << 32
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Scenario::Normal),
            "stolen_params" => Ok(Scenario::StolenParams),
            "stolen_key" => Ok(Scenario::StolenKey),
            other => Err(Error::domain(format!(
                "unknown scenario {other:?}; expected normal, stolen_params or stolen_key"
            ))),
        }
    }
}

/// The metrics of one scenario run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: String,
    pub n_identities: usize,
    pub samples_per_identity: usize,
    pub eer: f64,
    pub threshold: f64,
    pub far_at_threshold: f64,
    pub dsys: f64,
    pub d_gi: f64,
    pub d_gp: f64,
    pub d_ip: f64,
    pub piamr: f64,
    pub rank1_genuine: f64,
    pub rank1_attack: f64,
    pub roc: Vec<RocPoint>,
}

/// Report plus the raw labeled scores it was computed from.
#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub report: EvalReport,
    pub scores: ScoreSet,
}

/// Source-domain templates of a prepared dataset: `sources[i][k]` is the
/// centered compressed template of sample `k` of identity `i`.
pub struct PreparedDataset {
    sources: Vec<Vec<FeatureMap>>,
}

impl PreparedDataset {
    fn n_identities(&self) -> usize {
        self.sources.len()
    }

    fn samples(&self, i: usize) -> usize {
        self.sources[i].len()
    }
}

/// Draws valid random transform parameters for a protected map of the given
/// shape (what a cross system or uninformed attacker would pick).
fn random_params(seed: u64, out_h: usize, out_w: usize, fallback: &BwrParams) -> BwrParams {
    let mut rng = SplitMix64::new(seed);
    // block sizes are capped at 16 so a random system always has enough
    // blocks for the remapping to carry entropy
    let candidates: Vec<usize> = [8usize, 16]
        .into_iter()
        .filter(|&b| out_h.is_multiple_of(b) && out_w.is_multiple_of(b) && b <= out_h.min(out_w))
        .collect();
    if candidates.is_empty() {
        return *fallback;
    }
    let block = candidates[rng.next_index(candidates.len())];
    let mesh_cell = [block / 2, block / 4][rng.next_index(2)].max(1);
    BwrParams {
        block_size: block,
        mesh_cell,
        warp_factor: rng.next_range(0.4, 0.95),
        resample_rate: rng.next_range(0.5, 1.0),
        symmetric_offsets: false,
    }
}

/// Loads a dataset directory, fits the locator on its manifest, and runs
/// locate + compress on every sample.
pub fn prepare_dataset(dataset_dir: &Path, cfg: &Config) -> Result<PreparedDataset> {
    let manifest = read_manifest(dataset_dir.join("manifest.json"))?;
    let mut by_identity: BTreeMap<usize, Vec<ManifestEntry>> = BTreeMap::new();
    for entry in manifest {
        by_identity.entry(entry.identity).or_default().push(entry);
    }
    let mut groups: Vec<Vec<ManifestEntry>> = by_identity.into_values().collect();
    for g in &mut groups {
        g.sort_by(|a, b| a.file.cmp(&b.file));
    }
    if groups.len() < 2 {
        return Err(Error::domain("scenario needs at least 2 identities"));
    }
    if groups.iter().any(|g| g.len() < 2) {
        return Err(Error::domain("scenario needs at least 2 samples per identity"));
    }

    let flat: Vec<(usize, usize)> = groups
        .iter()
        .enumerate()
        .flat_map(|(i, g)| (0..g.len()).map(move |k| (i, k)))
        .collect();

    let images: Vec<Image> = flat
        .par_iter()
        .map(|&(i, k)| read_pgm(dataset_dir.join(&groups[i][k].file)))
        .collect::<Result<_>>()?;

    let features: Vec<Vec<f64>> = images
        .par_iter()
        .map(|img| pool_features(img, cfg.roi.grid_h, cfg.roi.grid_w))
        .collect::<Result<_>>()?;
    let targets: Vec<[f64; 5]> = flat
        .iter()
        .map(|&(i, k)| {
            let e = &groups[i][k];
            [e.bbox[0], e.bbox[1], e.bbox[2], e.bbox[3], e.angle_rad]
        })
        .collect();
    let model = ridge_fit(&features, &targets, cfg.roi.lambda, [cfg.roi.grid_h, cfg.roi.grid_w])?;

    let derconv = DeRConvParams::seeded(cfg.derconv.c, cfg.derconv.init_seed)?;
    let compressed: Vec<FeatureMap> = images
        .par_iter()
        .zip(&features)
        .map(|(img, feats)| {
            let pred = predict_roi(&model, feats, img.height(), img.width())?;
            source_template(
                img,
                &pred,
                &derconv,
                cfg.roi.out_h,
                cfg.roi.out_w,
                cfg.bwr.block_size,
            )
        })
        .collect::<Result<_>>()?;

    let mut sources: Vec<Vec<FeatureMap>> = groups.iter().map(|_| Vec::new()).collect();
    for (&(i, _), fmap) in flat.iter().zip(compressed) {
        sources[i].push(fmap);
    }
    Ok(PreparedDataset { sources })
}

/// Best gallery match: `(index, score)` of the highest cosine score.
fn best_match(probe: &FeatureMap, gallery: &[&FeatureMap]) -> Result<(usize, f64)> {
    let mut best = (0usize, f64::NEG_INFINITY);
    for (idx, entry) in gallery.iter().enumerate() {
        let score = cosine_score(probe, entry)?;
        if score > best.1 {
            best = (idx, score);
        }
    }
    Ok(best)
}

fn sort_scores(scores: &mut [f64]) {
    scores.sort_by(f64::total_cmp);
}

/// Runs one scenario end to end on a dataset directory. Deterministic in
/// `(dataset bytes, scenario, config)`.
pub fn run_scenario(
    dataset_dir: &Path,
    scenario: Scenario,
    cfg: &Config,
) -> Result<ScenarioOutcome> {
    cfg.validate()?;
    let data = prepare_dataset(dataset_dir, cfg)?;
    score_scenario(&data, scenario, cfg)
}

/// Scores an already-prepared dataset under one scenario. Splitting
/// preparation from scoring lets callers reuse the compressed templates
/// across the three scenarios.
pub fn score_scenario(
    data: &PreparedDataset,
    scenario: Scenario,
    cfg: &Config,
) -> Result<ScenarioOutcome> {
    let n = data.n_identities();
    let master = cfg.eval.master_seed;
    let n_keys = cfg.eval.n_keys;
    let (out_h, out_w) = (cfg.roi.out_h, cfg.roi.out_w);
    let tag = scenario.tag();

    let enrolled_key = |i: usize| TransformKey(derive_seed(master, DOM_ENROLL, i as u64));

    // target system: every sample protected under its identity's enrolled key
    let protected: Vec<Vec<FeatureMap>> = data
        .sources
        .par_iter()
        .enumerate()
        .map(|(i, samples)| {
            samples
                .iter()
                .map(|s| protect(s, enrolled_key(i), &cfg.bwr))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let gallery: Vec<&FeatureMap> = protected.iter().map(|p| &p[0]).collect();

    // genuine: same identity, same key, different captures
    let mut genuine = Vec::new();
    for p in &protected {
        for a in 0..p.len() {
            for b in a + 1..p.len() {
                genuine.push(cosine_score(&p[a], &p[b])?);
            }
        }
    }

    // impostor: different identities, each under its own enrolled key
    let mut impostor = Vec::new();
    let spread = 4.min(n - 1);
    for i in 0..n {
        for d in 1..=spread {
            let j = (i + d) % n;
            let a = d % data.samples(i);
            let b = (d + 1) % data.samples(j);
            impostor.push(cosine_score(&protected[i][a], &protected[j][b])?);
        }
    }

    // pseudo-impostor: same instance re-protected under attacker knowledge,
    // matched against the enrolled template
    let pseudo_jobs: Vec<(usize, usize, TransformKey, BwrParams)> = (0..n)
        .flat_map(|i| {
            let cfg = &*cfg;
            (0..4usize).map(move |l| {
                let idx = (i * 8 + l) as u64;
                let sample = 1 + (l % (data.samples(i) - 1));
                let (key, params) = match scenario {
                    Scenario::Normal => (
                        TransformKey(derive_seed(master, DOM_PSEUDO_KEY ^ tag, idx)),
                        random_params(
                            derive_seed(master, DOM_PSEUDO_PARAMS ^ tag, idx),
                            out_h,
                            out_w,
                            &cfg.bwr,
                        ),
                    ),
                    Scenario::StolenParams => {
                        (TransformKey(derive_seed(master, DOM_PSEUDO_KEY ^ tag, idx)), cfg.bwr)
                    }
                    Scenario::StolenKey => (enrolled_key(i), cfg.bwr),
                };
                (i, sample, key, params)
            })
        })
        .collect();
    let pseudo_templates: Vec<FeatureMap> = pseudo_jobs
        .par_iter()
        .map(|&(i, k, key, ref params)| protect(&data.sources[i][k], key, params))
        .collect::<Result<_>>()?;
    let mut pseudo = Vec::new();
    for (&(i, _, _, _), template) in pseudo_jobs.iter().zip(&pseudo_templates) {
        pseudo.push(cosine_score(template, gallery[i])?);
    }

    // cross systems for linkability: n_keys templates per identity, each
    // system enrolling a different capture
    let system_params: Vec<BwrParams> = (0..n_keys)
        .map(|j| match scenario {
            Scenario::Normal => random_params(
                derive_seed(master, DOM_CROSS_PARAMS ^ tag, j as u64),
                out_h,
                out_w,
                &cfg.bwr,
            ),
            _ => cfg.bwr,
        })
        .collect();
    // several captures per cross system so every system pair contributes
    // CAPTURES^2 mated and non-mated scores; the histogram estimate needs
    // the sample mass
    const CAPTURES: usize = 3;
    let cross_jobs: Vec<(usize, usize, usize)> = (0..n)
        .flat_map(|i| {
            (0..n_keys).flat_map(move |j| (0..CAPTURES).map(move |v| (i, j, v)))
        })
        .collect();
    let cross_templates: Vec<FeatureMap> = cross_jobs
        .par_iter()
        .map(|&(i, j, v)| {
            let key = match scenario {
                Scenario::StolenKey => enrolled_key(i),
                _ => TransformKey(derive_seed(master, DOM_CROSS_KEY ^ tag, (i * 1024 + j) as u64)),
            };
            let sample = (j * CAPTURES + v) % data.samples(i);
            protect(&data.sources[i][sample], key, &system_params[j])
        })
        .collect::<Result<_>>()?;
    let cross = |i: usize, j: usize, v: usize| &cross_templates[(i * n_keys + j) * CAPTURES + v];

    let mut mated = Vec::new();
    let mut non_mated = Vec::new();
    for i in 0..n {
        for j in 0..n_keys {
            for j2 in j + 1..n_keys {
                let other = (i + 1 + (j * n_keys + j2) % (n - 1)) % n;
                for v in 0..CAPTURES {
                    for v2 in 0..CAPTURES {
                        mated.push(cosine_score(cross(i, j, v), cross(i, j2, v2))?);
                        non_mated.push(cosine_score(cross(i, j, v), cross(other, j2, v2))?);
                    }
                }
            }
        }
    }

    sort_scores(&mut genuine);
    sort_scores(&mut impostor);
    sort_scores(&mut pseudo);
    sort_scores(&mut mated);
    sort_scores(&mut non_mated);
    let (roc, eer, threshold) = roc_eer(&genuine, &impostor)?;
    let far_at_threshold =
        impostor.iter().filter(|&&s| s >= threshold).count() as f64 / impostor.len() as f64;

    // rank-1 identification of genuine probes, gated by the threshold
    let mut genuine_attempts = 0usize;
    let mut genuine_hits = 0usize;
    for (i, p) in protected.iter().enumerate() {
        for probe in p.iter().skip(1) {
            genuine_attempts += 1;
            let (idx, score) = best_match(probe, &gallery)?;
            if idx == i && score >= threshold {
                genuine_hits += 1;
            }
        }
    }

    // attack probes: another identity's unenrolled sample presented against
    // victim i with scenario knowledge
    let attack_jobs: Vec<(usize, usize, usize, TransformKey, BwrParams)> = (0..n)
        .flat_map(|i| {
            let cfg = &*cfg;
            (0..4.min(n - 1)).map(move |l| {
                let idx = (i * 8 + l) as u64;
                let attacker = (i + 1 + l) % n;
                let sample = 1 + (l % (data.samples(attacker) - 1));
                let (key, params) = match scenario {
                    Scenario::Normal => (
                        TransformKey(derive_seed(master, DOM_ATTACK_KEY ^ tag, idx)),
                        random_params(
                            derive_seed(master, DOM_ATTACK_PARAMS ^ tag, idx),
                            out_h,
                            out_w,
                            &cfg.bwr,
                        ),
                    ),
                    Scenario::StolenParams => {
                        (TransformKey(derive_seed(master, DOM_ATTACK_KEY ^ tag, idx)), cfg.bwr)
                    }
                    Scenario::StolenKey => (enrolled_key(i), cfg.bwr),
                };
                (i, attacker, sample, key, params)
            })
        })
        .collect();
    let attack_templates: Vec<FeatureMap> = attack_jobs
        .par_iter()
        .map(|&(_, attacker, sample, key, ref params)| {
            protect(&data.sources[attacker][sample], key, params)
        })
        .collect::<Result<_>>()?;
    let mut attack_hits = 0usize;
    for (&(victim, _, _, _, _), probe) in attack_jobs.iter().zip(&attack_templates) {
        let (idx, score) = best_match(probe, &gallery)?;
        if idx == victim && score >= threshold {
            attack_hits += 1;
        }
    }

    // pre-image attacks: each raw source-domain template tries to be
    // accepted as its own subject against that subject's enrolled template
    let mut piamr_accepted = 0usize;
    let mut piamr_total = 0usize;
    for (i, samples) in data.sources.iter().enumerate() {
        let own = [gallery[i].clone()];
        for probe in samples {
            piamr_accepted +=
                (piamr(std::slice::from_ref(probe), &own, threshold)? > 0.0) as usize;
            piamr_total += 1;
        }
    }
    let piamr_rate = piamr_accepted as f64 / piamr_total as f64;

    let report = EvalReport {
        scenario: scenario.as_str().to_string(),
        n_identities: n,
        samples_per_identity: (0..n).map(|i| data.samples(i)).min().unwrap_or(0),
        eer,
        threshold,
        far_at_threshold,
        dsys: dsys(&mated, &non_mated, cfg.eval.n_bins)?,
        d_gi: decidability(&genuine, &impostor)?,
        d_gp: decidability(&genuine, &pseudo)?,
        d_ip: decidability(&impostor, &pseudo)?,
        piamr: piamr_rate,
        rank1_genuine: genuine_hits as f64 / genuine_attempts.max(1) as f64,
        rank1_attack: attack_hits as f64 / attack_jobs.len().max(1) as f64,
        roc,
    };
    let scores = ScoreSet { genuine, impostor, pseudo_impostor: pseudo, mated, non_mated };
    Ok(ScenarioOutcome { report, scores })
}
