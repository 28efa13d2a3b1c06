//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//!
//! Run with `cargo test -p veinguard-core --test acceptance -- --nocapture`
//! to see the per-criterion lines.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use veinguard_core::bwr::{apply_plan, derive_plan, BwrParams, BwrPlan, TransformKey};
use veinguard_core::compress::{
    compress_fmap, de_r_conv, group_sum, roi_align, DeRConvParams, RoiBox,
};
use veinguard_core::config::Config;
use veinguard_core::eval::{
    decidability, dsys, iou, prepare_dataset, roc_eer, score_scenario, EvalReport, Scenario,
};
use veinguard_core::fmap::{avg_pool, bilinear_sample, conv2d, ConvSpec, FeatureMap};
use veinguard_core::locator::{pool_features, predict_roi, ridge_fit};
use veinguard_core::rng::SplitMix64;
use veinguard_core::synth::{dataset_sample, generate_dataset};

/// Runs a criterion body, printing one line either way.
fn criterion<F: FnOnce() + std::panic::UnwindSafe>(name: &str, body: F) {
    let start = Instant::now();
    let result = std::panic::catch_unwind(body);
    match &result {
        Ok(()) => println!("ACCEPTANCE {name}: PASS ({:.2?})", start.elapsed()),
        Err(_) => println!("ACCEPTANCE {name}: FAIL ({:.2?})", start.elapsed()),
    }
    if let Err(e) = result {
        std::panic::resume_unwind(e);
    }
}

fn random_map(c: usize, h: usize, w: usize, rng: &mut SplitMix64) -> FeatureMap {
    let data = (0..c * h * w).map(|_| rng.next_range(-2.0, 2.0) as f32).collect();
    FeatureMap::new(c, h, w, data).unwrap()
}

// ---------------------------------------------------------------------------
// shared end-to-end artifacts (dataset + three scenario reports)

struct EndToEnd {
    normal: EvalReport,
    stolen_params: EvalReport,
    stolen_key: EvalReport,
    generation: Duration,
    elapsed: Duration,
}

fn end_to_end() -> &'static EndToEnd {
    static SHARED: OnceLock<EndToEnd> = OnceLock::new();
    SHARED.get_or_init(|| {
        let start = Instant::now();
        let dir = tempfile::tempdir().expect("tempdir");
        generate_dataset(50, 6, 0xACCE_5500, dir.path()).expect("dataset");
        let generation = start.elapsed();
        let cfg = Config::default();
        let data = prepare_dataset(dir.path(), &cfg).expect("prepare");
        let normal = score_scenario(&data, Scenario::Normal, &cfg).expect("normal").report;
        let stolen_params =
            score_scenario(&data, Scenario::StolenParams, &cfg).expect("stolen_params").report;
        let stolen_key =
            score_scenario(&data, Scenario::StolenKey, &cfg).expect("stolen_key").report;
        EndToEnd { normal, stolen_params, stolen_key, generation, elapsed: start.elapsed() }
    })
}

// ---------------------------------------------------------------------------
// criterion 1: identity-configuration exactness

#[test]
fn identity_configuration_exactness() {
    criterion("identity-configuration exactness", || {
        let start = Instant::now();
        let mut rng = SplitMix64::new(1);
        let fmap = random_map(6, 32, 64, &mut rng);
        let params = BwrParams {
            warp_factor: 0.0,
            resample_rate: 1.0,
            ..BwrParams::default()
        };
        let plan = BwrPlan::identity(&params, 32, 64).unwrap();
        let out = apply_plan(&fmap, &plan).unwrap();
        assert_eq!(out.data(), fmap.data(), "identity plan must be bit-exact");

        // phi = 0 and an integer-aligned box: compress == crop + de_r_conv
        let src = random_map(8, 20, 40, &mut rng);
        let derconv = DeRConvParams::seeded(8, 9).unwrap();
        let bbox = RoiBox::new(4.0, 2.0, 36.0, 18.0).unwrap();
        let pred = veinguard_core::locator::RoiPrediction { bbox, phi: 0.0 };
        let compressed = compress_fmap(&src, &pred, &derconv, 16, 32).unwrap();
        let crop = roi_align(&src, &bbox, 16, 32).unwrap();
        let expect = de_r_conv(&crop, &derconv).unwrap();
        assert_eq!(compressed, expect, "compress must reduce to crop + de_r_conv");

        assert!(start.elapsed() < Duration::from_secs(1), "runtime budget");
    });
}

// ---------------------------------------------------------------------------
// criterion 2: oracle equivalence on >= 100 randomized instances each

#[test]
fn oracle_equivalence() {
    criterion("oracle equivalence", || {
        let start = Instant::now();
        let mut rng = SplitMix64::new(2);

        // conv2d vs quadruple-loop oracle
        for trial in 0..100 {
            let (c_in, c_out) = (1 + rng.next_index(4), 1 + rng.next_index(3));
            let (h, w) = (4 + rng.next_index(5), 4 + rng.next_index(5));
            let k = 1 + rng.next_index(3);
            let stride = 1 + rng.next_index(2);
            let padding = rng.next_index(3);
            if h + 2 * padding < k || w + 2 * padding < k {
                continue;
            }
            let fmap = random_map(c_in, h, w, &mut rng);
            let weights = (0..c_out * c_in * k * k).map(|_| rng.next_range(-1.0, 1.0) as f32).collect();
            let bias = (0..c_out).map(|_| rng.next_range(-0.5, 0.5) as f32).collect();
            let spec = ConvSpec::new(k, k, stride, padding, c_in, c_out, weights, bias).unwrap();
            let got = conv2d(&fmap, &spec).unwrap();

            let out_h = (h + 2 * padding - k) / stride + 1;
            let out_w = (w + 2 * padding - k) / stride + 1;
            assert_eq!((got.height(), got.width()), (out_h, out_w));
            for o in 0..c_out {
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        let mut acc = spec.bias[o] as f64;
                        for i in 0..c_in {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let sy = (oy * stride + ky) as isize - padding as isize;
                                    let sx = (ox * stride + kx) as isize - padding as isize;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                        continue;
                                    }
                                    let wgt = spec.weights
                                        [((o * c_in + i) * k + ky) * k + kx]
                                        as f64;
                                    acc += fmap.get(i, sy as usize, sx as usize) as f64 * wgt;
                                }
                            }
                        }
                        assert!(
                            (got.get(o, oy, ox) as f64 - acc).abs() < 1e-5,
                            "conv trial {trial} at ({o},{oy},{ox})"
                        );
                    }
                }
            }
        }

        // avg_pool vs direct-mean oracle
        for trial in 0..100 {
            let (h, w) = (3 + rng.next_index(8), 3 + rng.next_index(8));
            let window = 1 + rng.next_index(h.min(w));
            let stride = 1 + rng.next_index(3);
            let fmap = random_map(2, h, w, &mut rng);
            let got = avg_pool(&fmap, window, stride).unwrap();
            for c in 0..2 {
                for oy in 0..got.height() {
                    for ox in 0..got.width() {
                        let mut acc = 0.0f64;
                        for ky in 0..window {
                            for kx in 0..window {
                                acc += fmap.get(c, oy * stride + ky, ox * stride + kx) as f64;
                            }
                        }
                        let expect = acc / (window * window) as f64;
                        assert!(
                            (got.get(c, oy, ox) as f64 - expect).abs() < 1e-6,
                            "pool trial {trial}"
                        );
                    }
                }
            }
        }

        // roi_align vs an independent clamped-bilinear oracle
        for trial in 0..100 {
            let (h, w) = (6 + rng.next_index(8), 6 + rng.next_index(8));
            let fmap = random_map(2, h, w, &mut rng);
            let x0 = rng.next_range(-1.0, w as f64 - 2.0);
            let y0 = rng.next_range(-1.0, h as f64 - 2.0);
            let bbox = RoiBox::new(
                x0,
                y0,
                x0 + rng.next_range(1.0, w as f64),
                y0 + rng.next_range(1.0, h as f64),
            )
            .unwrap();
            let (oh, ow) = (1 + rng.next_index(6), 1 + rng.next_index(6));
            let got = roi_align(&fmap, &bbox, oh, ow).unwrap();
            let sample = |c: usize, x: f64, y: f64| -> f64 {
                let x = x.clamp(0.0, (w - 1) as f64);
                let y = y.clamp(0.0, (h - 1) as f64);
                let (x0, y0) = (x.floor() as usize, y.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (fx, fy) = (x - x0 as f64, y - y0 as f64);
                fmap.get(c, y0, x0) as f64 * (1.0 - fx) * (1.0 - fy)
                    + fmap.get(c, y0, x1) as f64 * fx * (1.0 - fy)
                    + fmap.get(c, y1, x0) as f64 * (1.0 - fx) * fy
                    + fmap.get(c, y1, x1) as f64 * fx * fy
            };
            for c in 0..2 {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let sx = bbox.x_min + (ox as f64 + 0.5) * bbox.width() / ow as f64 - 0.5;
                        let sy = bbox.y_min + (oy as f64 + 0.5) * bbox.height() / oh as f64 - 0.5;
                        assert!(
                            (got.get(c, oy, ox) as f64 - sample(c, sx, sy)).abs() < 1e-5,
                            "roi trial {trial}"
                        );
                    }
                }
            }
        }

        // group fusion vs direct-sum oracle
        for trial in 0..100 {
            let c = 4 * (1 + rng.next_index(6));
            let (h, w) = (2 + rng.next_index(5), 2 + rng.next_index(5));
            let fmap = random_map(c, h, w, &mut rng);
            let got = group_sum(&fmap).unwrap();
            for j in 0..c / 4 {
                for y in 0..h {
                    for x in 0..w {
                        let expect: f64 =
                            (0..4).map(|g| fmap.get(g * (c / 4) + j, y, x) as f64).sum();
                        assert!(
                            (got.get(j, y, x) as f64 - expect).abs() < 1e-6,
                            "fusion trial {trial}"
                        );
                    }
                }
            }
        }

        // roc_eer vs an exhaustive brute-force sweep (exact), with list
        // sizes ranging up to 10^3 entries
        for trial in 0..100 {
            let cap = if trial < 90 { 40 } else { 500 };
            let n_gen = 2 + rng.next_index(cap);
            let n_imp = 2 + rng.next_index(cap);
            // quantized scores so ties happen regularly
            let genuine: Vec<f64> =
                (0..n_gen).map(|_| rng.next_index(20) as f64 / 19.0 * 0.7 + 0.3).collect();
            let impostor: Vec<f64> =
                (0..n_imp).map(|_| rng.next_index(20) as f64 / 19.0 * 0.7).collect();
            let (_, eer, tau) = roc_eer(&genuine, &impostor).unwrap();
            let (oracle_eer, oracle_tau) = brute_force_eer(&genuine, &impostor);
            assert_eq!(eer, oracle_eer, "eer trial {trial}");
            assert_eq!(tau, oracle_tau, "threshold trial {trial}");
        }

        assert!(start.elapsed() < Duration::from_secs(60), "runtime budget");
    });
}

/// Independent EER: naive counting at every distinct threshold plus the same
/// linear-interpolation crossing rule.
fn brute_force_eer(genuine: &[f64], impostor: &[f64]) -> (f64, f64) {
    let mut thresholds: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let rates = |t: f64| -> (f64, f64) {
        let far = impostor.iter().filter(|&&s| s >= t).count() as f64 / impostor.len() as f64;
        let frr = genuine.iter().filter(|&&s| s < t).count() as f64 / genuine.len() as f64;
        (far, frr)
    };
    let mut points: Vec<(f64, f64, f64)> =
        thresholds.iter().map(|&t| (t, rates(t).0, rates(t).1)).collect();
    points.push((*thresholds.last().unwrap(), 0.0, 1.0));
    for idx in 1..points.len() {
        let (t2, far2, frr2) = points[idx];
        if frr2 >= far2 {
            if (frr2 - far2).abs() < f64::EPSILON {
                return (far2, t2);
            }
            let (t1, far1, frr1) = points[idx - 1];
            let alpha = (far1 - frr1) / ((far1 - frr1) + (frr2 - far2));
            return (far1 + alpha * (far2 - far1), t1 + alpha * (t2 - t1));
        }
    }
    (0.0, *thresholds.last().unwrap())
}

// ---------------------------------------------------------------------------
// criterion 3: metric fixed points

#[test]
fn metric_fixed_points() {
    criterion("metric fixed points", || {
        let start = Instant::now();
        let mut rng = SplitMix64::new(3);

        let same: Vec<f64> = (0..2000).map(|_| rng.next_f64()).collect();
        let d_same = dsys(&same, &same, 100).unwrap();
        assert!(d_same.abs() <= 0.02, "dsys identical {d_same}");

        let mated: Vec<f64> = (0..10_000).map(|_| 0.8 + 0.2 * rng.next_f64()).collect();
        let non_mated: Vec<f64> = (0..10_000).map(|_| 0.2 * rng.next_f64()).collect();
        let d_disjoint = dsys(&mated, &non_mated, 100).unwrap();
        assert!((d_disjoint - 1.0).abs() <= 0.02, "dsys disjoint {d_disjoint}");

        let list = [0.4, 0.1, 0.9, 0.7];
        assert_eq!(decidability(&list, &list).unwrap(), 0.0);
        let one = decidability(&[0.0, 1.0, 2.0], &[-1.0, 0.0, 1.0]).unwrap();
        assert!((one - 1.0).abs() < 1e-12, "d' unit case {one}");

        let a = RoiBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &RoiBox::new(30.0, 0.0, 40.0, 10.0).unwrap()), 0.0);
        let third = iou(&a, &RoiBox::new(5.0, 0.0, 15.0, 10.0).unwrap());
        assert!((third - 1.0 / 3.0).abs() < 1e-12, "iou third {third}");

        assert!(start.elapsed() < Duration::from_secs(10), "runtime budget");
    });
}

// ---------------------------------------------------------------------------
// criterion 4: locator quality

#[test]
fn locator_quality() {
    criterion("locator quality", || {
        let start = Instant::now();
        let cfg = Config::default();
        let (grid_h, grid_w) = (cfg.roi.grid_h, cfg.roi.grid_w);

        // 50 identities x 4 samples = 200 training samples
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..50 {
            for k in 0..4 {
                let (image, truth) = dataset_sample(0x10CA_7E00, i, k);
                x.push(pool_features(&image, grid_h, grid_w).unwrap());
                y.push([
                    truth.bbox.x_min,
                    truth.bbox.y_min,
                    truth.bbox.x_max,
                    truth.bbox.y_max,
                    truth.angle,
                ]);
            }
        }
        let model = ridge_fit(&x, &y, cfg.roi.lambda, [grid_h, grid_w]).unwrap();

        // 100 held-out samples from a disjoint seed
        let mut iou_sum = 0.0;
        for i in 0..25 {
            for k in 0..4 {
                let (image, truth) = dataset_sample(0x7E57_0000, i, k);
                let feats = pool_features(&image, grid_h, grid_w).unwrap();
                let pred = predict_roi(&model, &feats, image.height(), image.width()).unwrap();
                iou_sum += iou(&pred.bbox, &truth.bbox);
            }
        }
        let mean_iou = iou_sum / 100.0;
        assert!(mean_iou >= 0.80, "held-out mean IoU {mean_iou:.4} below 0.80");
        println!("  locator held-out mean IoU = {mean_iou:.4}");

        assert!(start.elapsed() < Duration::from_secs(120), "runtime budget");
    });
}

// ---------------------------------------------------------------------------
// criterion 5: end-to-end protection pattern

#[test]
fn end_to_end_protection_pattern() {
    criterion("end-to-end protection pattern", || {
        let e2e = end_to_end();
        let (n, sp, sk) = (&e2e.normal, &e2e.stolen_params, &e2e.stolen_key);
        println!(
            "  dsys: normal {:.4} / stolen_params {:.4} / stolen_key {:.4}",
            n.dsys, sp.dsys, sk.dsys
        );
        println!(
            "  normal: eer {:.4} d_gi {:.2} d_gp {:.2} d_ip {:.2} rank1 gen {:.3} att {:.3}",
            n.eer, n.d_gi, n.d_gp, n.d_ip, n.rank1_genuine, n.rank1_attack
        );
        println!(
            "  stolen_key: rank1 gen {:.3} att {:.3}",
            sk.rank1_genuine, sk.rank1_attack
        );

        assert!(n.dsys <= 0.10, "normal-scenario dsys {} above 0.10", n.dsys);
        assert!(
            n.dsys <= sp.dsys && sp.dsys <= sk.dsys,
            "dsys not monotone: {} / {} / {}",
            n.dsys,
            sp.dsys,
            sk.dsys
        );
        assert!(n.d_ip < 0.6, "normal d'_IP {} not below 0.6", n.d_ip);
        assert!(n.d_gp > 1.5, "normal d'_GP {} not above 1.5", n.d_gp);
        assert!(n.eer <= 0.05, "genuine/impostor EER {} above 5%", n.eer);
        assert!(
            sk.rank1_attack * 4.0 <= sk.rank1_genuine,
            "stolen-key attack rank-1 {} not 4x below genuine {}",
            sk.rank1_attack,
            sk.rank1_genuine
        );
        assert!(
            e2e.generation < Duration::from_secs(60),
            "300-image generation budget {:?}",
            e2e.generation
        );
        assert!(e2e.elapsed < Duration::from_secs(600), "runtime budget {:?}", e2e.elapsed);
    });
}

// ---------------------------------------------------------------------------
// criterion 6: irreversibility proxies

#[test]
fn irreversibility_proxies() {
    criterion("irreversibility proxies", || {
        let e2e = end_to_end();
        for report in [&e2e.normal, &e2e.stolen_params, &e2e.stolen_key] {
            assert!(
                report.piamr <= 2.0 * report.far_at_threshold + f64::EPSILON,
                "{}: piamr {} above 2x FAR {}",
                report.scenario,
                report.piamr,
                report.far_at_threshold
            );
        }
        println!(
            "  piamr: normal {:.4} (far {:.4})",
            e2e.normal.piamr, e2e.normal.far_at_threshold
        );

        // information ceiling on every plan
        let params = BwrParams::default();
        let mut rng = SplitMix64::new(6);
        for _ in 0..200 {
            let plan =
                derive_plan(TransformKey(rng.next_u64()), &params, 32, 64).unwrap();
            let distinct: std::collections::BTreeSet<usize> =
                plan.slot_assignment.iter().copied().collect();
            let ceiling =
                ((params.resample_rate * plan.n_blocks() as f64).floor() as usize).max(1);
            assert!(distinct.len() <= ceiling, "ceiling violated");
        }

        // key sensitivity: a single flipped bit changes the plan
        let mut changed = 0usize;
        for _ in 0..1000 {
            let key = rng.next_u64();
            let bit = rng.next_index(64);
            let a = derive_plan(TransformKey(key), &params, 32, 64).unwrap();
            let b = derive_plan(TransformKey(key ^ (1 << bit)), &params, 32, 64).unwrap();
            changed += (a != b) as usize;
        }
        assert!(changed >= 990, "only {changed}/1000 bit flips changed the plan");
        println!("  key bit-flip sensitivity: {changed}/1000");
    });
}

// ---------------------------------------------------------------------------
// criterion 7: determinism across runs and thread counts

#[test]
fn determinism_across_runs_and_threads() {
    criterion("determinism across runs and threads", || {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(10, 4, 0xD37E_0001, dir.path()).unwrap();
        let cfg = Config::default();

        let run = |threads: usize| -> Vec<u8> {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            let outcome = pool
                .install(|| veinguard_core::eval::run_scenario(dir.path(), Scenario::StolenKey, &cfg))
                .unwrap();
            serde_json::to_vec(&outcome.report).unwrap()
        };
        let single = run(1);
        let single_again = run(1);
        let eight = run(8);
        let eight_again = run(8);
        assert_eq!(single, single_again, "reruns must be byte-identical");
        assert_eq!(eight, eight_again, "reruns must be byte-identical");
        assert_eq!(single, eight, "thread count must not change the report");
    });
}

// ---------------------------------------------------------------------------
// supporting check: bilinear linear-field exactness backs the roi oracle

#[test]
fn bilinear_exact_on_linear_fields() {
    criterion("bilinear linear-field exactness", || {
        let mut rng = SplitMix64::new(7);
        for _ in 0..100 {
            let (a, b, c) = (
                rng.next_range(-2.0, 2.0),
                rng.next_range(-2.0, 2.0),
                rng.next_range(-5.0, 5.0),
            );
            let (h, w) = (5 + rng.next_index(6), 5 + rng.next_index(6));
            let mut m = FeatureMap::zeros(1, h, w);
            for y in 0..h {
                for x in 0..w {
                    m.set(0, y, x, (a * x as f64 + b * y as f64 + c) as f32);
                }
            }
            for _ in 0..20 {
                let x = rng.next_range(0.0, (w - 1) as f64);
                let y = rng.next_range(0.0, (h - 1) as f64);
                let got = bilinear_sample(&m, 0, x, y).unwrap();
                let expect = a * x + b * y + c;
                assert!((got - expect).abs() < 1e-6, "{got} vs {expect}");
            }
        }
    });
}
