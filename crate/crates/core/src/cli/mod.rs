//! Command-line front end: `gen-data`, `pretrain`, `train`, `filter` and `eval`.
//!
//! Settings resolve in order: explicit flag, then the `--config` file, then
//! the built-in default.

mod config;
mod data;

pub use config::{ImpulsiveConfig, NoiseConfig, PathsConfig, RunConfig, CONFIG_SCHEMA_VERSION};
pub use data::{generate_dataset, load_dataset, DatasetManifest, VariantEntry};

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use crate::datagen::DensityRegime;
use crate::error::{Error, Result};
use crate::eval::evaluate_detailed;
use crate::io::{read_mask, read_off, read_xyz, write_xyz};
use crate::loss::LossVariant;
use crate::net::WeightBundle;
use crate::pipeline::{filter_cloud, pretrain_encoder, train_regressor, Model};

/// Environment variable that overrides `--threads`.
pub const THREADS_ENV: &str = "POINTFUSE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "pointfuse", version, about = "Joint point cloud filtering and normal estimation")]
pub struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON run configuration supplying defaults for every command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DensityArg {
    Gradient,
    Striped,
}

impl From<DensityArg> for DensityRegime {
    fn from(d: DensityArg) -> Self {
        match d {
            DensityArg::Gradient => DensityRegime::gradient(),
            DensityArg::Striped => DensityRegime::striped(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Joint,
    Alt,
}

impl From<LossArg> for LossVariant {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Joint => LossVariant::Joint,
            LossArg::Alt => LossVariant::Alternative,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write noisy variants and sharp-feature masks for every cloud in a directory.
    GenData {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Comma-separated noise levels in percent of the bounding-box diagonal.
        #[arg(long)]
        noise: Option<String>,
        /// Extra impulsive variant as `SIGMA:FRACTION`, sigma in percent.
        #[arg(long)]
        impulsive: Option<String>,
        /// Resample the clean cloud to a varying density first.
        #[arg(long, value_enum)]
        density: Option<DensityArg>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Contrastive pretraining of the encoder.
    Pretrain {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
        /// Contrastive pairs per epoch (default: every point).
        #[arg(long)]
        pairs_per_epoch: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the regressor on a frozen pretrained encoder.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        gamma: Option<u32>,
        #[arg(long, value_enum)]
        loss: Option<LossArg>,
        /// Fixed number of training samples (default: every point of every noisy variant).
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter a point cloud and estimate its normals.
    Filter {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        taubin_k: Option<usize>,
        #[arg(long)]
        lrma_k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Compare a prediction with ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[arg(long)]
        sharp: Option<PathBuf>,
        /// Also write per-point errors as CSV.
        #[arg(long)]
        per_point: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn require(path: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    path.ok_or_else(|| Error::Config(format!("--{flag} is required (or set it in the config file)")))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn configure_threads(flag: Option<usize>) -> Result<()> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a non-negative integer, got '{v}'")))?,
        ),
        Err(_) => flag,
    };
    if let Some(n) = threads {
        // Fails only if the pool was already built in this process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Runs one parsed command.
pub fn execute(cli: Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::GenData {
            input,
            output,
            noise,
            impulsive,
            density,
            seed,
        } => {
            let mut nc = cfg.noise.clone();
            if let Some(list) = noise {
                nc.sigmas_percent = config::parse_percent_list(&list)?;
            }
            if let Some(spec) = impulsive {
                nc.impulsive = Some(config::parse_impulsive(&spec)?);
            }
            if let Some(d) = density {
                nc.density = Some(d.into());
            }
            nc.seed = seed.unwrap_or(nc.seed);
            let written = generate_dataset(&input, &output, &nc)?;
            info!("wrote {} shapes to {}", written.len(), output.display());
            Ok(())
        }
        Command::Pretrain {
            data,
            epochs,
            lr,
            batch,
            tau,
            pairs_per_epoch,
            seed,
            out,
        } => {
            let mut pc = cfg.pretrain;
            pc.epochs = epochs.unwrap_or(pc.epochs);
            pc.lr = lr.unwrap_or(pc.lr);
            pc.batch_size = batch.unwrap_or(pc.batch_size);
            pc.tau = tau.unwrap_or(pc.tau);
            pc.pairs_per_epoch = pairs_per_epoch.or(pc.pairs_per_epoch);
            pc.seed = seed.unwrap_or(pc.seed);
            pc.validate()?;
            let dataset = load_dataset(&require(data.or(cfg.paths.data.clone()), "data")?)?;
            let outcome = pretrain_encoder(&dataset, &pc)?;
            WeightBundle::new(vec![outcome.encoder.to_document(), outcome.projection.to_document()]).save(&out)
        }
        Command::Train {
            data,
            encoder,
            epochs,
            lr,
            batch,
            alpha,
            beta,
            delta,
            gamma,
            loss,
            samples,
            seed,
            out,
        } => {
            let mut tc = cfg.train;
            tc.epochs = epochs.unwrap_or(tc.epochs);
            tc.lr = lr.unwrap_or(tc.lr);
            tc.batch_size = batch.unwrap_or(tc.batch_size);
            tc.loss.alpha = alpha.unwrap_or(tc.loss.alpha);
            tc.loss.beta = beta.unwrap_or(tc.loss.beta);
            tc.loss.delta = delta.unwrap_or(tc.loss.delta);
            tc.loss.gamma = gamma.unwrap_or(tc.loss.gamma);
            tc.loss.variant = loss.map_or(tc.loss.variant, Into::into);
            tc.samples_per_epoch = samples.or(tc.samples_per_epoch);
            tc.seed = seed.unwrap_or(tc.seed);
            tc.validate()?;
            let encoder = WeightBundle::load(&require(encoder.or(cfg.paths.encoder.clone()), "encoder")?)?.encoder()?;
            let dataset = load_dataset(&require(data.or(cfg.paths.data.clone()), "data")?)?;
            let outcome = train_regressor(&dataset, &encoder, &tc)?;
            Model {
                encoder,
                regressor: outcome.regressor,
            }
            .save(&out)
        }
        Command::Filter {
            model,
            input,
            iterations,
            taubin_k,
            lrma_k,
            seed,
            output,
        } => {
            let mut ic = cfg.inference;
            ic.iterations = iterations.unwrap_or(ic.iterations);
            ic.taubin_k = taubin_k.unwrap_or(ic.taubin_k);
            ic.lrma_k = lrma_k.unwrap_or(ic.lrma_k);
            ic.seed = seed.unwrap_or(ic.seed);
            ic.validate()?;
            let model = Model::load(&require(model.or(cfg.paths.model.clone()), "model")?)?;
            let cloud = read_xyz(&input)?;
            let outcome = filter_cloud(&cloud, &model, &ic)?;
            write_xyz(&output, &outcome.cloud)
        }
        Command::Eval {
            gt,
            pred,
            mesh,
            sharp,
            per_point,
            out,
        } => {
            let gt = read_xyz(&gt)?;
            let pred = read_xyz(&pred)?;
            let mesh = mesh.as_deref().map(read_off).transpose()?;
            let sharp = sharp.as_deref().map(read_mask).transpose()?;
            let (report, errors) = evaluate_detailed(&gt, &pred, mesh.as_ref(), sharp.as_deref())?;
            write_text(&out, &serde_json::to_string_pretty(&report)?)?;
            if let Some(path) = per_point {
                write_text(&path, &errors.to_csv())?;
            }
            Ok(())
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
