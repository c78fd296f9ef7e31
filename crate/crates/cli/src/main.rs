//! `defn` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use defn_core::harness::{
    evaluate, load_cases, planned_steps, predict_labels, run, to_input_size, Checkpoint, InferenceMode, Phase,
    Predictor, RunConfig, RunFiles, Trainer,
};
use defn_core::net::Defn;
use defn_core::recon::{quantify, reconstruct_case, Laterality};
use defn_core::sdi::{augment_volume, Strategy};
use defn_core::volume_io::{
    load_image, load_label_grid, load_volume, save_label_grid, save_volume, Spacing, VolumeFormat,
};
use defn_core::{Error, Grid3, Result};

#[derive(Parser)]
#[command(name = "defn", version, about = "Retinal OCT segmentation, augmentation and quantification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides both the config seed and DEFN_SEED.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainFlags {
    /// Case directory (overrides the config's data path for this phase).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for logs and checkpoints.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    max_steps: Option<u64>,
    /// Continue an interrupted run of this phase from its checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train from random weights.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Fine-tune from a pre-trained checkpoint.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: TrainFlags,
        /// Pre-trained checkpoint to start from.
        #[arg(long, required_unless_present = "resume")]
        init: Option<PathBuf>,
    },
    /// Score a checkpoint on a test set and write per-case and macro CSV.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "oracle")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// CSV destination (default: `<output_dir>/metrics.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Score the ground truth against itself instead of running the network.
        #[arg(long)]
        oracle: bool,
        /// Sliding-window inference at native resolution.
        #[arg(long)]
        tile: bool,
    },
    /// Segment one volume and write its label grid as NIfTI.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tile: bool,
    },
    /// Inject a synthetic defect into a labeled volume.
    Augment {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long)]
        target_slices: Option<usize>,
        #[arg(long)]
        strength_min: Option<f64>,
        #[arg(long)]
        strength_max: Option<f64>,
        #[arg(long)]
        margin: Option<usize>,
    },
    /// Build class meshes and the ETDRS report for a segmentation.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        /// Labeled case, or a bare `*_seg.nii[.gz]` label file.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        laterality: Option<Laterality>,
    },
    /// Print ETDRS sector volumes as CSV.
    Quantify {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        /// Voxel spacing `d,h,w` in mm, replacing the file's.
        #[arg(long, value_parser = parse_spacing)]
        spacing: Option<Spacing>,
        #[arg(long)]
        laterality: Option<Laterality>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_spacing(s: &str) -> std::result::Result<Spacing, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [d, h, w] => Spacing::new(d, h, w).map_err(|e| e.to_string()),
        _ => Err(format!("expected three comma-separated values, got {s:?}")),
    }
}

/// Config file (or defaults), then `DEFN_SEED`, then `--seed`.
fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn apply_train_flags(cfg: &mut RunConfig, f: &TrainFlags, phase: Phase) -> Result<()> {
    if let Some(o) = &f.out {
        cfg.output_dir = o.clone();
    }
    let (data, epochs) = match phase {
        Phase::Pretrain => (&mut cfg.data.pretrain, &mut cfg.train.pretrain_epochs),
        Phase::Finetune => (&mut cfg.data.finetune, &mut cfg.train.finetune_epochs),
    };
    if let Some(d) = &f.data {
        *data = Some(d.clone());
    }
    if let Some(e) = f.epochs {
        *epochs = Some(e);
    }
    if let Some(b) = f.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = f.lr {
        cfg.optim.lr = lr;
    }
    if let Some(m) = f.max_steps {
        cfg.train.max_steps = Some(m);
    }
    cfg.validate()
}

fn train_phase(mut cfg: RunConfig, flags: &TrainFlags, phase: Phase, init: Option<&Path>) -> Result<()> {
    let trainer = if let Some(path) = &flags.resume {
        let ckpt = Checkpoint::load(path)?;
        if ckpt.phase != phase {
            return Err(Error::Checkpoint(format!(
                "{} holds a {} run, not {}",
                path.display(),
                ckpt.phase.name(),
                phase.name()
            )));
        }
        cfg = ckpt.config.clone();
        let dir = match phase {
            Phase::Pretrain => cfg.data.pretrain.clone(),
            Phase::Finetune => cfg.data.finetune.clone(),
        }
        .ok_or_else(|| Error::Config("checkpoint config has no data directory".into()))?;
        let cases = to_input_size(&load_cases(&dir)?, cfg.train.input_size)?;
        Trainer::resume(ckpt, cases)?
    } else {
        apply_train_flags(&mut cfg, flags, phase)?;
        let (dir, epochs) = match phase {
            Phase::Pretrain => (&cfg.data.pretrain, cfg.train.pretrain_epochs),
            Phase::Finetune => (&cfg.data.finetune, cfg.train.finetune_epochs),
        };
        let dir = dir
            .clone()
            .ok_or_else(|| Error::Config(format!("no data directory for {}", phase.name())))?;
        let epochs = epochs.ok_or_else(|| {
            Error::Config(format!("{}_epochs must be set (no default)", phase.name()))
        })?;
        let cases = to_input_size(&load_cases(&dir)?, cfg.train.input_size)?;
        let total = planned_steps(epochs, cases.len(), cfg.train.batch_size, cfg.train.max_steps);
        match init {
            Some(p) => Trainer::from_pretrained(cfg.clone(), cases, total, &Checkpoint::load(p)?)?,
            None => Trainer::new(cfg.clone(), phase, cases, total)?,
        }
    };
    let mut trainer = trainer;
    let files = RunFiles::new(&trainer.config.output_dir, phase);
    std::fs::create_dir_all(&trainer.config.output_dir).map_err(|e| Error::io(&trainer.config.output_dir, e))?;
    let config_copy = trainer.config.output_dir.join(format!("{}_config.toml", phase.name()));
    std::fs::write(&config_copy, trainer.config.to_toml()).map_err(|e| Error::io(&config_copy, e))?;
    let rows = run(&mut trainer, &files)?;
    println!(
        "{} finished: {} steps, final loss {}, checkpoint {}",
        phase.name(),
        trainer.step,
        rows.last().map_or(f64::NAN, |r| r.loss.total),
        files.last_checkpoint.display()
    );
    Ok(())
}

fn network(ckpt_path: &Path) -> Result<(Checkpoint, Defn)> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let net = Defn::new(ckpt.config.model.clone())?;
    net.check_params(&ckpt.params)?;
    Ok((ckpt, net))
}

fn labels_and_spacing(path: &Path) -> Result<(Grid3<u8>, Spacing)> {
    let name = path.to_string_lossy().to_lowercase();
    if name.ends_with("_seg.nii") || name.ends_with("_seg.nii.gz") {
        load_label_grid(path)
    } else {
        let v = load_volume(path, VolumeFormat::infer(path))?;
        Ok((v.labels().clone(), v.spacing()))
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, flags } => train_phase(load_config(&common)?, &flags, Phase::Pretrain, None),
        Command::Finetune { common, flags, init } => {
            train_phase(load_config(&common)?, &flags, Phase::Finetune, init.as_deref())
        }
        Command::Eval {
            common,
            checkpoint,
            data,
            out,
            oracle,
            tile,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(d) = data {
                cfg.data.test = Some(d);
            }
            let dir = cfg.data.test.clone().ok_or_else(|| Error::Config("no test data directory".into()))?;
            let cases = load_cases(&dir)?;
            let loaded = match (&checkpoint, oracle) {
                (Some(p), false) => Some(network(p)?),
                _ => None,
            };
            let predictor = match &loaded {
                Some((ckpt, net)) => Predictor::Network {
                    net,
                    params: &ckpt.params,
                    input_size: ckpt.config.train.input_size,
                    mode: if tile { InferenceMode::Tile } else { cfg.inference },
                },
                None => Predictor::Oracle,
            };
            let ev = evaluate(&predictor, &cases, &cfg.metrics)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.join("metrics.csv"));
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            ev.write_csv(&out)?;
            let m = &ev.aggregate.mean;
            println!(
                "{} cases; mean mIoU {:?} Dice {:?}; wrote {}",
                ev.cases.len(),
                m.miou_pct,
                m.dice_pct,
                out.display()
            );
            Ok(())
        }
        Command::Predict {
            common,
            checkpoint,
            input,
            out,
            tile,
        } => {
            let cfg = load_config(&common)?;
            let (ckpt, net) = network(&checkpoint)?;
            let (image, spacing) = load_image(&input, VolumeFormat::infer(&input))?;
            let mode = if tile { InferenceMode::Tile } else { cfg.inference };
            let labels = predict_labels(&net, &ckpt.params, &image, ckpt.config.train.input_size, mode)?;
            save_label_grid(&labels, spacing, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Augment {
            common,
            input,
            out,
            strategy,
            target_slices,
            strength_min,
            strength_max,
            margin,
        } => {
            let mut cfg = load_config(&common)?;
            let s = &mut cfg.sdi;
            if let Some(v) = strategy {
                s.strategy = v;
            }
            if let Some(v) = target_slices {
                s.target_slices = v;
            }
            if let Some(v) = strength_min {
                s.strength_min = v;
            }
            if let Some(v) = strength_max {
                s.strength_max = v;
            }
            if let Some(v) = margin {
                s.margin = v;
            }
            cfg.validate()?;
            let v = load_volume(&input, VolumeFormat::infer(&input))?;
            let (aug, spec) = augment_volume(&v, &cfg.sdi, cfg.seed)?;
            save_volume(&aug, &out, VolumeFormat::infer(&out))?;
            println!(
                "wrote {} ({:?}, strength {:.3}, centroid {:?})",
                out.display(),
                spec.strategy,
                spec.distortion_strength,
                spec.centroid
            );
            Ok(())
        }
        Command::Reconstruct {
            common,
            input,
            out,
            sigma,
            laterality,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = sigma {
                cfg.recon.sigma = s;
            }
            if let Some(l) = laterality {
                cfg.recon.laterality = l;
            }
            let (labels, spacing) = labels_and_spacing(&input)?;
            let r = reconstruct_case(&labels, spacing, Some(&out), &cfg.recon)?;
            println!("reconstructed in {:.2} s; wrote {} files to {}", r.seconds, r.files.len(), out.display());
            Ok(())
        }
        Command::Quantify {
            common,
            input,
            spacing,
            laterality,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(l) = laterality {
                cfg.recon.laterality = l;
            }
            let (labels, file_spacing) = labels_and_spacing(&input)?;
            let (_, source, report) = quantify(&labels, spacing.unwrap_or(file_spacing), &cfg.recon)?;
            log::info!("grid center from {source:?}");
            match out {
                Some(p) => {
                    let f = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
                    report.write_csv(f).map_err(|e| Error::io(&p, e))
                }
                None => report
                    .write_csv(std::io::stdout().lock())
                    .map_err(|e| Error::io("<stdout>", e)),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
