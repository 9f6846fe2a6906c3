use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use floodseg_cli::commands;
use floodseg_cli::config::PipelineConfig;
use floodseg_cli::dataset::Split;

#[derive(Parser)]
#[command(
    name = "floodseg",
    about = "Self-supervised water segmentation on synthetic multiband rasters",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML configuration file (defaults apply when omitted)
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override the configured top-level seed
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory for this command's artifacts
    #[arg(long)]
    out_dir: PathBuf,

    /// Override the configured worker thread count
    #[arg(long)]
    threads: Option<usize>,
}

impl CommonArgs {
    fn load_config(&self) -> Result<PipelineConfig> {
        let mut config = PipelineConfig::load(self.config.as_deref())?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(threads) = self.threads {
            config.runtime.threads = threads;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multiband dataset with exact ground truth
    SynthData {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train the SWIR synthesis GAN (generator warmup, then adversarial)
    TrainGan {
        #[command(flatten)]
        common: CommonArgs,
        /// Dataset directory produced by synth-data
        #[arg(long)]
        data_dir: PathBuf,
        /// Feed NIR as a fourth generator input channel
        #[arg(long)]
        use_nir: bool,
    },
    /// Refine coarse threshold masks and report the Table-style comparison
    Refine {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data_dir: PathBuf,
        /// Dataset split to refine
        #[arg(long, default_value = "test")]
        split: Split,
        /// Condition the ablation on both raw distance maps only (skips the
        /// adaptive variant everywhere, including the refined-mask exports)
        #[arg(long)]
        no_adaptive_dmap: bool,
        /// Also export distance-map planes for visual debugging
        #[arg(long)]
        export_distance_maps: bool,
    },
    /// Joint training of the segmentor (and generator fine-tuning)
    TrainSeg {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data_dir: PathBuf,
        /// GAN checkpoint from train-gan (required unless --rgb-only)
        #[arg(long)]
        gan_checkpoint: Option<PathBuf>,
        /// Train the 3-channel baseline without synthesized SWIR
        #[arg(long)]
        rgb_only: bool,
        /// Keep the generator fixed during joint training
        #[arg(long)]
        freeze_generator: bool,
        #[arg(long)]
        use_nir: bool,
    },
    /// Run inference over a split and write masks and probability planes
    Predict {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        gan_checkpoint: Option<PathBuf>,
        #[arg(long)]
        seg_checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        rgb_only: bool,
        #[arg(long)]
        use_nir: bool,
    },
    /// Compare predicted masks against truth rasters and emit reports
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory of predicted .rast masks
        #[arg(long)]
        pred_dir: PathBuf,
        /// Directory of truth .rast masks
        #[arg(long)]
        truth_dir: PathBuf,
    },
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::SynthData { common } => {
            let config = common.load_config()?;
            commands::synth::run(&config, &common.out_dir)
        }
        Command::TrainGan { common, data_dir, use_nir } => {
            let mut config = common.load_config()?;
            if use_nir {
                config.gan.use_nir = true;
            }
            commands::train_gan::run(&config, &data_dir, &common.out_dir)
        }
        Command::Refine { common, data_dir, split, no_adaptive_dmap, export_distance_maps } => {
            let mut config = common.load_config()?;
            if no_adaptive_dmap {
                config.refiner.adaptive_dmap = false;
            }
            commands::refine::run(&config, &data_dir, split, export_distance_maps, &common.out_dir)
        }
        Command::TrainSeg {
            common,
            data_dir,
            gan_checkpoint,
            rgb_only,
            freeze_generator,
            use_nir,
        } => {
            let mut config = common.load_config()?;
            if rgb_only {
                config.seg.rgb_only = true;
            }
            if freeze_generator {
                config.seg.freeze_generator = true;
            }
            if use_nir {
                config.gan.use_nir = true;
            }
            commands::train_seg::run(&config, &data_dir, gan_checkpoint.as_deref(), &common.out_dir)
        }
        Command::Predict {
            common,
            data_dir,
            gan_checkpoint,
            seg_checkpoint,
            split,
            rgb_only,
            use_nir,
        } => {
            let mut config = common.load_config()?;
            if rgb_only {
                config.seg.rgb_only = true;
            }
            if use_nir {
                config.gan.use_nir = true;
            }
            commands::predict::run(
                &config,
                &data_dir,
                gan_checkpoint.as_deref(),
                &seg_checkpoint,
                split,
                &common.out_dir,
            )
        }
        Command::Evaluate { common, pred_dir, truth_dir } => {
            let config = common.load_config()?;
            commands::evaluate::run(&config, &pred_dir, &truth_dir, &common.out_dir)
        }
    }
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
