//! `voxsem`: command-line front end for the voxel semantic scene completion
//! toolkit. Unknown subcommands and flags exit with code 2; operation
//! failures print the error and exit with code 1.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "voxsem",
    about = "Voxel semantic scene completion toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a depth PNG into a flipped-TSDF volume plus visibility.
    Tsdf {
        /// 16-bit grayscale PNG, millimeters, 0 = invalid.
        #[arg(long)]
        depth: PathBuf,
        /// Camera config file.
        #[arg(long)]
        cam: PathBuf,
        /// Grid spec config file.
        #[arg(long)]
        spec: PathBuf,
        /// Truncation distance in meters.
        #[arg(long, default_value_t = 0.24)]
        trunc: f32,
        /// Output VGRID (kind 2); visibility goes to `<out>.vis.vgrid`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Scatter a 2-D feature map into a sparse 3-D feature volume.
    Project {
        /// 2-D feature map as VGRID with Z = 1.
        #[arg(long)]
        feat: PathBuf,
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        cam: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional visible-surface mask output (VGRID kind 1, 0/1).
        #[arg(long)]
        mask_out: Option<PathBuf>,
    },
    /// Densify features by classwise mean over visible surfaces.
    Fcm {
        #[arg(long)]
        features: PathBuf,
        /// Per-voxel class map (VGRID kind 1).
        #[arg(long)]
        classes: PathBuf,
        /// Visible-surface mask (VGRID kind 1, nonzero = visible).
        #[arg(long)]
        vis: PathBuf,
        /// Occluded mask (VGRID kind 1, nonzero = occluded).
        #[arg(long)]
        occ: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// SC and SSC metrics for a predicted label volume.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// TSDF volume; its `<stem>.vis.vgrid` sibling provides visibility.
        #[arg(long)]
        tsdf: PathBuf,
        /// Explicit visibility volume, overriding the sibling lookup.
        #[arg(long)]
        vis: Option<PathBuf>,
        /// Output CSV: one row per class plus SC and mIoU rows.
        #[arg(long)]
        out: PathBuf,
    },
    /// Histogram of predicted probabilities for one class.
    Hist {
        #[arg(long)]
        probs: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        class: usize,
        #[arg(long, default_value_t = 100)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference checks of loss and primitive gradients.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 12)]
        classes: usize,
        #[arg(long, default_value_t = 60)]
        voxels: usize,
    },
    /// Generate a synthetic scene dataset.
    Scenes {
        /// Scene config file.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the two-stage fusion network on synthetic scenes.
    TrainDemo {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and compare ablation variants on one shared dataset.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Plan file: `name = fcm=<0|1> reuse=<0|1> lambda1=<f> lambda2=<f>`.
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> voxsem_core::Result<()> {
    match cli.command {
        Command::Tsdf {
            depth,
            cam,
            spec,
            trunc,
            out,
        } => commands::cmd_tsdf(&depth, &cam, &spec, trunc, &out),
        Command::Project {
            feat,
            depth,
            cam,
            spec,
            out,
            mask_out,
        } => commands::cmd_project(&feat, &depth, &cam, &spec, &out, mask_out.as_deref()),
        Command::Fcm {
            features,
            classes,
            vis,
            occ,
            out,
        } => commands::cmd_fcm(&features, &classes, &vis, &occ, &out),
        Command::Eval {
            pred,
            gt,
            tsdf,
            vis,
            out,
        } => commands::cmd_eval(&pred, &gt, &tsdf, vis.as_deref(), &out),
        Command::Hist {
            probs,
            gt,
            class,
            bins,
            out,
        } => commands::cmd_hist(&probs, &gt, class, bins, &out),
        Command::Gradcheck {
            seed,
            classes,
            voxels,
        } => commands::cmd_gradcheck(seed, classes, voxels),
        Command::Scenes { spec, n, seed, out } => commands::cmd_scenes(&spec, n, seed, &out),
        Command::TrainDemo { config, seed, out } => {
            commands::cmd_train_demo(&config, seed, &out)
        }
        Command::Ablate {
            config,
            plan,
            seed,
            out,
        } => commands::cmd_ablate(&config, &plan, seed, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("voxsem: {e}");
            ExitCode::FAILURE
        }
    }
}
