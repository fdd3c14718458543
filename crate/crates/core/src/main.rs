use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use roi_unc_core::metrics::AurocMode;
use roi_unc_core::pipeline::{
    self, cmd_aggregate, cmd_fit, cmd_metrics, cmd_predict, cmd_regions, cmd_render, load_model,
    ImageError, RunConfig,
};
use roi_unc_core::regions::Denominator;
use roi_unc_core::stats::ModelKind;
use roi_unc_core::synth::{self, linear_sweep, PhantomSpec};
use roi_unc_core::Result;

#[derive(Parser)]
#[command(
    name = "roi-unc",
    version,
    about = "Region-of-interest uncertainty for MC-dropout segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom cohort with a manifest and ground truth.
    Synth(SynthArgs),
    /// Binary segmentation and uncertainty map per image.
    Aggregate(CommonArgs),
    /// Region masks, region mean uncertainties and records.csv.
    Regions(CommonArgs),
    /// Per-image Dice, AUROC, TPR and FPR with bootstrap intervals.
    Metrics(MetricsArgs),
    /// Fit the linear Dice models.
    Fit(FitArgs),
    /// Predict Dice from region uncertainties with a fitted or reference model.
    Predict(PredictArgs),
    /// Heatmaps of the overall and region-masked uncertainty maps.
    Render(CommonArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Fraction of iterations that must agree for a foreground pixel.
    #[arg(long, default_value_t = 0.95)]
    threshold: f64,
    /// Average raw probabilities instead of per-iteration binary votes.
    #[arg(long)]
    average_probs: bool,
    #[arg(long, default_value_t = 67.0)]
    p_hi: f64,
    #[arg(long, default_value_t = 33.0)]
    p_lo: f64,
    /// Denominator of region means: `region` pixels or `all` pixels.
    #[arg(long, default_value = "region")]
    denom: Denominator,
    #[arg(long, default_value_t = 220)]
    white_threshold: u8,
    #[arg(long, default_value_t = 5000)]
    n_boot: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

impl CommonArgs {
    fn config(&self) -> RunConfig {
        RunConfig {
            threshold: self.threshold,
            binarize_iters: !self.average_probs,
            p_hi: self.p_hi,
            p_lo: self.p_lo,
            denom: self.denom,
            white_threshold: self.white_threshold,
            n_boot: self.n_boot,
            seed: self.seed,
            jobs: self.jobs,
            ..RunConfig::new(&self.manifest, &self.out)
        }
    }
}

#[derive(Args)]
struct MetricsArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Report one AUROC over all pixels instead of the per-image median.
    #[arg(long)]
    pooled_auroc: bool,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Model kinds to fit (default: all).
    #[arg(long = "model", value_delimiter = ',')]
    models: Vec<ModelKind>,
}

#[derive(Args)]
struct PredictArgs {
    /// Records CSV as written by `regions` or `fit`.
    #[arg(long)]
    records: PathBuf,
    /// Model JSON path, or `reference:<id>` for a bundled published model.
    #[arg(long)]
    model: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    n_images: usize,
    /// Image height and width.
    #[arg(long, default_value_t = 256)]
    size: usize,
    /// MC-dropout iterations per image.
    #[arg(long, default_value_t = 50)]
    alpha: usize,
    #[arg(long, default_value_t = synth::DEFAULT_SIGMAS[0])]
    sigma_tumor: f64,
    #[arg(long, default_value_t = synth::DEFAULT_SIGMAS[1])]
    sigma_non_tumor: f64,
    #[arg(long, default_value_t = synth::DEFAULT_SIGMAS[2])]
    sigma_non_tissue: f64,
    /// Largest noise multiplier; image i gets max * i / (n - 1).
    #[arg(long, default_value_t = synth::DEFAULT_SWEEP_MAX)]
    sweep_max: f64,
    #[arg(long)]
    tumor_free: bool,
    #[arg(long, default_value_t = 1)]
    boundary_band: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn report(errors: &[ImageError]) -> ExitCode {
    if errors.is_empty() {
        ExitCode::SUCCESS
    } else {
        for e in errors {
            error!("{}: {}", e.image_id, e.error);
        }
        eprintln!("{} error(s); see the summary output", errors.len());
        ExitCode::FAILURE
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    Ok(match cli.command {
        Command::Synth(a) => {
            let mut base = PhantomSpec::standard(a.seed, a.size, a.size, a.alpha).with_sigmas(
                a.sigma_tumor,
                a.sigma_non_tumor,
                a.sigma_non_tissue,
            );
            base.boundary_band = a.boundary_band;
            if a.tumor_free {
                base = base.tumor_free();
            }
            let cohort = synth::generate_cohort(
                &base,
                a.n_images,
                &linear_sweep(a.n_images, a.sweep_max),
                &a.out,
            )?;
            println!("wrote {} images to {}", cohort.truth.len(), a.out.display());
            ExitCode::SUCCESS
        }
        Command::Aggregate(a) => report(&cmd_aggregate(&a.config())?),
        Command::Regions(a) => report(&cmd_regions(&a.config())?),
        Command::Metrics(a) => {
            let mut cfg = a.common.config();
            if a.pooled_auroc {
                cfg.auroc_mode = AurocMode::Pooled;
            }
            report(&cmd_metrics(&cfg)?)
        }
        Command::Fit(a) => {
            let mut cfg = a.common.config();
            if !a.models.is_empty() {
                cfg.models = a.models;
            }
            report(&cmd_fit(&cfg)?)
        }
        Command::Predict(a) => {
            let model = load_model(&a.model)?;
            let records = pipeline::read_records(&a.records)?;
            let rows = cmd_predict(&model, &records, &a.out)?;
            if let Some(e) = pipeline::prediction_rmse(&rows, &records)? {
                println!("RMSE against recorded Dice: {e:.4}");
            }
            ExitCode::SUCCESS
        }
        Command::Render(a) => report(&cmd_render(&a.config())?),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ROI_UNC_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
