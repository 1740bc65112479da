mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;
use unmixsr::hsi::{
    degrade, export_png, load_any, load_hsc, save_abn, save_hsc, synth_scene, write_endmembers_csv, HsiCube, HsiError,
};
use unmixsr::metrics::{EvalReport, MetricError};
use unmixsr::tensor::TensorError;
use unmixsr::trainer::{
    cascade_super_resolve, train_step_one, train_step_two, write_csv, Checkpoint, NetKind, TrainError, TrainingPair,
};
use unmixsr::unmixing::UnmixingNetwork;
use unmixsr::ModelError;

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "unmixsr", version, about = "Hyperspectral super-resolution with an unmixing auxiliary task")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene: hr.hsc, abundances.abn and endmembers.csv.
    Synth {
        /// Number of endmembers (≥ 2).
        #[arg(long, default_value_t = 3)]
        p: usize,
        /// Height and width in pixels.
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 16)]
        bands: usize,
        /// Box-blur passes applied to the abundance field.
        #[arg(long, default_value_t = 1)]
        smoothness: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Blur, decimate and add noise to an HR cube.
    Degrade {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 4)]
        scale: usize,
        /// Gaussian blur sigma in HR pixels [default: 0.8 * scale / 2].
        #[arg(long)]
        blur: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run both training steps from a key=value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Super-resolve an LR cube with an SR checkpoint.
    Sr {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate abundances with an unmixing (or SR) checkpoint.
    Unmix {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// Abundance output (ABN1).
        #[arg(long)]
        out: PathBuf,
        /// Also write the decoder reconstruction (HSC1).
        #[arg(long)]
        recon: Option<PathBuf>,
    },
    /// Compare an estimate with a reference cube.
    Eval {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        est: PathBuf,
        /// Resolution ratio used by ERGAS.
        #[arg(long, default_value_t = 1)]
        scale: usize,
    },
    /// Write one band (or abundance channel) as an 8-bit grayscale PNG.
    ExportPng {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

const EXIT_USAGE: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn hsi_code(e: &HsiError) -> u8 {
    match e {
        HsiError::Dimension(_) | HsiError::Config(_) | HsiError::Generation(_) | HsiError::IndexOutOfRange { .. } => {
            EXIT_USAGE
        }
        _ => EXIT_IO,
    }
}

fn model_code(e: &ModelError) -> u8 {
    match e {
        ModelError::Hsi(h) => hsi_code(h),
        ModelError::Config(_) | ModelError::Tensor(_) => EXIT_USAGE,
    }
}

/// Maps the first recognised error in the chain onto the exit-code contract.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return match e {
                TrainError::NonFinite { .. } | TrainError::FrozenModified(_) => EXIT_NUMERIC,
                TrainError::Io(_) | TrainError::Checkpoint(_) => EXIT_IO,
                TrainError::Model(m) => model_code(m),
                TrainError::Config(_) => EXIT_USAGE,
            };
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return model_code(e);
        }
        if let Some(e) = cause.downcast_ref::<HsiError>() {
            return hsi_code(e);
        }
        if let Some(e) = cause.downcast_ref::<MetricError>() {
            return match e {
                MetricError::Undefined(_) => EXIT_NUMERIC,
                _ => EXIT_USAGE,
            };
        }
        if cause.downcast_ref::<TensorError>().is_some() {
            return EXIT_USAGE;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_USAGE
}

fn check_bands(cube: &HsiCube, expected: usize, what: &str) -> Result<()> {
    if cube.bands() != expected {
        bail!(
            "input cube is {}×{}×{} but the {what} checkpoint expects {expected} bands",
            cube.height(),
            cube.width(),
            cube.bands()
        );
    }
    Ok(())
}

fn synth(p: usize, size: usize, bands: usize, smoothness: usize, seed: u64, out: &Path) -> Result<()> {
    let scene = synth_scene(p, size, size, bands, smoothness, seed)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    save_hsc(out.join("hr.hsc"), &scene.cube)?;
    save_abn(out.join("abundances.abn"), &scene.abundances)?;
    write_endmembers_csv(out.join("endmembers.csv"), &scene.endmembers)?;
    println!("wrote {size}×{size}×{bands} scene with {p} endmembers to {}", out.display());
    Ok(())
}

fn degrade_cmd(input: &Path, scale: usize, blur: Option<f64>, noise: f64, seed: u64, out: &Path) -> Result<()> {
    let hr = load_hsc(input).with_context(|| format!("reading {}", input.display()))?;
    let sigma = blur.unwrap_or_else(|| unmixsr::hsi::default_blur_sigma(scale));
    let lr = degrade(&hr, scale, sigma, noise, seed)?;
    save_hsc(out, &lr)?;
    println!("{}×{} -> {}×{}", hr.height(), hr.width(), lr.height(), lr.width());
    Ok(())
}

fn train(path: &Path) -> Result<()> {
    let cfg = RunConfig::load(path)?;
    let mut pairs = Vec::with_capacity(cfg.hr_paths.len());
    for (i, hr_path) in cfg.hr_paths.iter().enumerate() {
        let hr = load_hsc(hr_path).with_context(|| format!("reading {}", hr_path.display()))?;
        if hr.bands() != cfg.unmixing.bands {
            bail!(
                "{} has {} bands but the config says bands = {}",
                hr_path.display(),
                hr.bands(),
                cfg.unmixing.bands
            );
        }
        let lr = match cfg.lr_paths.get(i) {
            Some(p) => load_hsc(p).with_context(|| format!("reading {}", p.display()))?,
            None => degrade(&hr, cfg.train.scale, cfg.blur_sigma(), cfg.noise, cfg.train.seed + i as u64)?,
        };
        pairs.push(TrainingPair { lr, hr });
    }
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;

    let lrs: Vec<HsiCube> = pairs.iter().map(|p| p.lr.clone()).collect();
    info!("step I: {} LR cubes, {} epochs", lrs.len(), cfg.train.epochs_step1);
    let step1 = train_step_one(&lrs, cfg.unmixing, &cfg.train, |_| {})?;
    step1.checkpoint().save(cfg.out_dir.join("unmix.ckpt"))?;
    write_csv(&step1.log, cfg.out_dir.join("step1.csv"))?;

    if cfg.is_baseline() {
        println!("baseline: MAM disabled and beta_ab = 0");
    }
    info!("step II: {} pairs, {} epochs", pairs.len(), cfg.train.epochs_step2);
    let step2 = train_step_two(&pairs, &step1.network, cfg.sr, &cfg.train, |_| {})?;
    step2.checkpoint()?.save(cfg.out_dir.join("sr.ckpt"))?;
    write_csv(&step2.log, cfg.out_dir.join("step2.csv"))?;

    let last = |log: &[unmixsr::trainer::EpochRecord]| log.last().map_or(f64::NAN, |r| r.loss.total);
    println!("step1 final loss {:.6e}", last(&step1.log));
    println!(
        "step2{} final loss {:.6e}",
        if step2.baseline { " (baseline)" } else { "" },
        last(&step2.log)
    );
    println!("outputs in {}", cfg.out_dir.display());
    Ok(())
}

fn sr(ckpt: &Path, input: &Path, out: &Path) -> Result<()> {
    let ck = Checkpoint::load(ckpt).with_context(|| format!("reading {}", ckpt.display()))?;
    if ck.kind != NetKind::Sr {
        bail!("{} is an unmixing checkpoint; `sr` needs an SR checkpoint", ckpt.display());
    }
    let (net, unmix) = ck.sr_networks()?;
    let lr = load_hsc(input).with_context(|| format!("reading {}", input.display()))?;
    check_bands(&lr, net.config().bands, "SR")?;
    let out_cube = cascade_super_resolve(&net, &unmix, &lr)?;
    save_hsc(out, &out_cube)?;
    println!(
        "{}×{}×{} -> {}×{}×{}",
        lr.height(),
        lr.width(),
        lr.bands(),
        out_cube.height(),
        out_cube.width(),
        out_cube.bands()
    );
    Ok(())
}

fn unmix(ckpt: &Path, input: &Path, out: &Path, recon: Option<&Path>) -> Result<()> {
    let ck = Checkpoint::load(ckpt).with_context(|| format!("reading {}", ckpt.display()))?;
    let net: UnmixingNetwork = match ck.kind {
        NetKind::Unmixing => ck.unmixing_network()?,
        NetKind::Sr => ck.sr_networks()?.1,
    };
    let cube = load_hsc(input).with_context(|| format!("reading {}", input.display()))?;
    check_bands(&cube, net.config().bands, "unmixing")?;
    let (abundances, yhat) = net.unmix(&cube)?;
    save_abn(out, &abundances)?;
    if let Some(path) = recon {
        save_hsc(path, &yhat)?;
    }
    println!(
        "{}×{} pixels, {} endmembers",
        abundances.height(),
        abundances.width(),
        abundances.endmembers()
    );
    Ok(())
}

fn eval(reference: &Path, est: &Path, scale: usize) -> Result<()> {
    let r = load_hsc(reference).with_context(|| format!("reading {}", reference.display()))?;
    let e = load_hsc(est).with_context(|| format!("reading {}", est.display()))?;
    print!("{}", EvalReport::compute(&r, &e, scale)?);
    Ok(())
}

fn export(input: &Path, index: usize, out: &Path) -> Result<()> {
    let (_, raster) = load_any(input).with_context(|| format!("reading {}", input.display()))?;
    export_png(&raster, index, out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            p,
            size,
            bands,
            smoothness,
            seed,
            out,
        } => synth(p, size, bands, smoothness, seed, &out),
        Command::Degrade {
            input,
            scale,
            blur,
            noise,
            seed,
            out,
        } => degrade_cmd(&input, scale, blur, noise, seed, &out),
        Command::Train { config } => train(&config),
        Command::Sr { ckpt, input, out } => sr(&ckpt, &input, &out),
        Command::Unmix {
            ckpt,
            input,
            out,
            recon,
        } => unmix(&ckpt, &input, &out, recon.as_deref()),
        Command::Eval { reference, est, scale } => eval(&reference, &est, scale),
        Command::ExportPng { input, index, out } => export(&input, index, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
