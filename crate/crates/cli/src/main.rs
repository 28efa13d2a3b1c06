//! `veinguard`: one subcommand per pipeline stage. Dataset generation,
//! locator training, localization, compression, protection, matching, and
//! scenario evaluation.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error. All randomness
//! flows from config and flag seeds; reruns overwrite outputs with identical
//! bytes.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use veinguard_core::bwr::{protect, read_key_file};
use veinguard_core::compress::{source_template, DeRConvParams};
use veinguard_core::config::{load_config, Config};
use veinguard_core::error::Result;
use veinguard_core::eval::{
    cosine_score, read_scores_csv, roc_eer, run_scenario, write_roc_csv, Scenario,
};
use veinguard_core::io::{read_fmap, read_pgm, write_fmap};
use veinguard_core::locator::{pool_features, predict_roi, ridge_fit, RidgeRegressor, RoiPrediction};
use veinguard_core::synth::{generate_dataset, read_manifest};

#[derive(Parser)]
#[command(name = "veinguard", version, about = "Keyed cancelable vein-template protection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset (PGM images plus manifest.json).
    Gen {
        #[arg(long)]
        identities: usize,
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the ridge locator on a dataset manifest.
    TrainLocator {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict the ROI box and rotation angle of one image (JSON on stdout).
    Locate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Build the compressed source-domain template for one image.
    Compress {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply the keyed protection transform to a feature map.
    Protect {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cosine score of two feature maps (printed on stdout).
    Match {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Sweep a scores CSV into a ROC curve CSV; prints the EER.
    EvalRoc {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one threat scenario end to end and write the report JSON.
    Scenario {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 }; // help/version exit 0
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Gen { identities, samples, seed, out } => {
            let manifest = generate_dataset(identities, samples, seed, &out)?;
            eprintln!("wrote {} samples to {}", manifest.len(), out.display());
        }
        Command::TrainLocator { manifest, config, out } => {
            let cfg = load_config(&config)?;
            let model = train_locator(&manifest, &cfg)?;
            model.save(&out)?;
            eprintln!("wrote locator model to {}", out.display());
        }
        Command::Locate { model, image } => {
            let model = RidgeRegressor::load(&model)?;
            let image = read_pgm(&image)?;
            let feats = pool_features(&image, model.grid[0], model.grid[1])?;
            let pred = predict_roi(&model, &feats, image.height(), image.width())?;
            println!("{}", serde_json::to_string_pretty(&pred)?);
        }
        Command::Compress { image, pred, config, out } => {
            let cfg = load_config(&config)?;
            let image = read_pgm(&image)?;
            let pred: RoiPrediction = serde_json::from_slice(&std::fs::read(&pred)?)
                .map_err(|e| veinguard_core::Error::Format(format!("prediction: {e}")))?;
            let derconv = DeRConvParams::seeded(cfg.derconv.c, cfg.derconv.init_seed)?;
            let template = source_template(
                &image,
                &pred,
                &derconv,
                cfg.roi.out_h,
                cfg.roi.out_w,
                cfg.bwr.block_size,
            )?;
            write_fmap(&out, &template)?;
        }
        Command::Protect { input, key, out } => {
            let (key, params) = read_key_file(&key)?;
            let fmap = read_fmap(&input)?;
            let protected = protect(&fmap, key, &params)?;
            write_fmap(&out, &protected)?;
        }
        Command::Match { a, b } => {
            let score = cosine_score(&read_fmap(&a)?, &read_fmap(&b)?)?;
            println!("{score}");
        }
        Command::EvalRoc { scores, out } => {
            let set = read_scores_csv(&scores)?;
            let (roc, eer, threshold) = roc_eer(&set.genuine, &set.impostor)?;
            write_roc_csv(&out, &roc)?;
            println!("eer={eer} threshold={threshold}");
        }
        Command::Scenario { config, scenario, out } => {
            let cfg = load_config(&config)?;
            let scenario: Scenario = scenario.parse()?;
            let outcome = run_scenario(&cfg.paths.dataset, scenario, &cfg)?;
            std::fs::write(&out, serde_json::to_vec_pretty(&outcome.report)?)?;
            let r = &outcome.report;
            println!(
                "scenario={} eer={:.4} dsys={:.4} d_gi={:.2} d_gp={:.2} d_ip={:.2} piamr={:.4}",
                r.scenario, r.eer, r.dsys, r.d_gi, r.d_gp, r.d_ip, r.piamr
            );
        }
    }
    Ok(())
}

/// Pools features for every manifest image and fits the ridge locator.
fn train_locator(manifest_path: &std::path::Path, cfg: &Config) -> Result<RidgeRegressor> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| std::path::Path::new("."));
    let mut x = Vec::with_capacity(manifest.len());
    let mut y = Vec::with_capacity(manifest.len());
    for entry in &manifest {
        let image = read_pgm(base.join(&entry.file))?;
        x.push(pool_features(&image, cfg.roi.grid_h, cfg.roi.grid_w)?);
        y.push([entry.bbox[0], entry.bbox[1], entry.bbox[2], entry.bbox[3], entry.angle_rad]);
    }
    ridge_fit(&x, &y, cfg.roi.lambda, [cfg.roi.grid_h, cfg.roi.grid_w])
}
