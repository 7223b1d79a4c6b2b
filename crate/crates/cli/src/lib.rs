//! `glioaug` command line: data generation, GAN training and synthesis,
//! U-Net training and inference, evaluation, ablations and the reader-study
//! server. Every subcommand is also callable in-process through [`run`].

use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use glioaug_core::{Modality, Region, Shape3};

mod commands;

pub use commands::{
    prediction_stem, run_ablate, run_count_best, run_evaluate, run_maps, run_phantom, run_predict, run_serve,
    run_synthesize, run_train_gan, run_train_unet, GAN_EXT, UNET_EXT,
};

#[derive(Debug, Parser)]
#[command(name = "glioaug", version, about = "Brain-map GAN augmentation and cascaded U-Net segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

fn parse_shape(s: &str) -> Result<Shape3, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("bad shape component {p:?}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, z] if x > 0 && y > 0 && z > 0 => Ok([x, y, z]),
        _ => Err(format!("expected X,Y,Z with positive sizes, got {s:?}")),
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate phantom cases, one directory per case.
    Phantom {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_shape, default_value = "64,64,32")]
        shape: Shape3,
    },
    /// Build `<id>_<MODALITY>` brain maps for every labelled case.
    Maps {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one modality's generator and discriminator.
    TrainGan {
        #[arg(long)]
        modality: Modality,
        /// TOML augmentation config; defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic cases from manipulated brain maps.
    Synthesize {
        /// Directory holding `<MODALITY>.gan` checkpoints for all four sequences.
        #[arg(long)]
        ckpt_dir: PathBuf,
        #[arg(long)]
        maps: PathBuf,
        /// Lines of `map_id dx dy rot_deg scale`.
        #[arg(long)]
        transforms: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the U-Net of one tumor region.
    TrainUnet {
        #[arg(long)]
        region: Region,
        /// TOML segmentation config; defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment one case with the WT/ET/TC networks and the cascade.
    Predict {
        /// Directory holding `WT.unet`, `ET.unet` and `TC.unet`.
        #[arg(long)]
        ckpts: PathBuf,
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fixed enhancement threshold instead of Otsu.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Score predicted masks against reference labels.
    Evaluate {
        /// Directory of `<id>_<REGION>` mask volumes written by `predict`.
        #[arg(long)]
        pred: PathBuf,
        /// Dataset root with one labelled case directory per case.
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a synthetic-fraction ablation.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Also print the best-metric tally.
        #[arg(long)]
        count_best: bool,
    },
    /// Tally best-per-row cells of a result table CSV.
    CountBest {
        #[arg(long)]
        table: PathBuf,
    },
    /// Serve the reader-study API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long)]
        sessions: PathBuf,
        /// Root that session image paths are resolved against.
        #[arg(long)]
        images: PathBuf,
    },
}

/// Runs one subcommand; results go to `out`, progress to stderr.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> anyhow::Result<()> {
    match cli.command {
        Command::Phantom { count, seed, out: dir, shape } => run_phantom(count, seed, &dir, shape, out),
        Command::Maps { data, out: dir } => run_maps(&data, &dir, out),
        Command::TrainGan {
            modality,
            config,
            data,
            out: path,
        } => run_train_gan(modality, config.as_deref(), &data, &path, out),
        Command::Synthesize {
            ckpt_dir,
            maps,
            transforms,
            out: dir,
        } => run_synthesize(&ckpt_dir, &maps, &transforms, &dir, out),
        Command::TrainUnet {
            region,
            config,
            train,
            val,
            out: path,
        } => run_train_unet(region, config.as_deref(), &train, &val, &path, out),
        Command::Predict {
            ckpts,
            case,
            out: dir,
            threshold,
        } => run_predict(&ckpts, &case, &dir, threshold, out),
        Command::Evaluate {
            pred,
            reference,
            out: path,
        } => run_evaluate(&pred, &reference, &path, out),
        Command::Ablate { config, count_best } => run_ablate(&config, count_best, out),
        Command::CountBest { table } => run_count_best(&table, out),
        Command::Serve { addr, sessions, images } => run_serve(addr, &sessions, &images),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn shapes_parse() {
        assert_eq!(parse_shape("64,64,32").unwrap(), [64, 64, 32]);
        assert!(parse_shape("64,64").is_err());
        assert!(parse_shape("64,0,3").is_err());
        assert!(parse_shape("a,b,c").is_err());
    }

    #[test]
    fn spec_command_lines_parse() {
        let p = |args: &[&str]| Cli::try_parse_from(std::iter::once("glioaug").chain(args.iter().copied()));
        assert!(p(&["phantom", "--count", "3", "--seed", "1", "--out", "d", "--shape", "64,64,32"]).is_ok());
        assert!(p(&["train-gan", "--modality", "T2", "--config", "c", "--data", "d", "--out", "o"]).is_ok());
        assert!(p(&["synthesize", "--ckpt-dir", "c", "--maps", "m", "--transforms", "t", "--out", "o"]).is_ok());
        assert!(p(&["train-unet", "--region", "WT", "--train", "a", "--val", "b", "--out", "o"]).is_ok());
        assert!(p(&["predict", "--ckpts", "c", "--case", "x", "--out", "o"]).is_ok());
        assert!(p(&["evaluate", "--pred", "p", "--ref", "r", "--out", "report.csv"]).is_ok());
        assert!(p(&["ablate", "--config", "ablation.toml"]).is_ok());
        assert!(p(&["train-unet", "--region", "XX", "--train", "a", "--val", "b", "--out", "o"]).is_err());
        assert!(p(&["train-gan", "--modality", "T3", "--data", "d", "--out", "o"]).is_err());
    }
}
