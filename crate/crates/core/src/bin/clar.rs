use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use clar::pipeline::{self, override_value, RunConfig, ABLATION_HEADER, SEED_ENV};
use clar::{ClarError, Result};

/// Diffusion-augmented, adaptively weighted contrastive learning on
/// synthetic CSI-like activity data.
#[derive(Debug, Parser)]
#[command(name = "clar", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalOpts {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed (takes precedence over CLAR_SEED and the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for all artifacts without an explicit path.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Arbitrary override, e.g. `--set pretrain.crop.min_fraction=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    /// Number of diffusion steps T.
    #[arg(long, global = true)]
    diffusion_steps: Option<usize>,
    #[arg(long, global = true)]
    beta_start: Option<f64>,
    #[arg(long, global = true)]
    beta_end: Option<f64>,

    /// High-band decay constant.
    #[arg(long, global = true)]
    lambda_h: Option<f64>,
    /// Low-band growth constant.
    #[arg(long, global = true)]
    lambda_l: Option<f64>,
    /// Initial high-band guidance weight in [0, 1].
    #[arg(long, global = true)]
    n_h: Option<f64>,
    /// Initial low-band guidance weight in [0, 1].
    #[arg(long, global = true)]
    n_l: Option<f64>,

    /// Response-map window length H.
    #[arg(long, global = true)]
    window: Option<usize>,
    /// Number of static templates K.
    #[arg(long, global = true)]
    templates: Option<usize>,
    /// Weight exponent alpha.
    #[arg(long, global = true)]
    alpha: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic corpus (CSV plus metadata sidecar).
    GenData,
    /// Train the noise predictor; writes a checkpoint and a loss CSV.
    TrainDdpm {
        /// Continue from the existing checkpoint.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
    },
    /// Generate augmented samples and a DTW summary.
    Augment {
        /// Number of samples to generate.
        #[arg(long)]
        n: Option<usize>,
        /// Disable both guidance bands (unconditional sampling).
        #[arg(long)]
        no_guidance: bool,
    },
    /// Contrastive pretraining of the encoder.
    Pretrain {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
        /// Augmented samples kept per source (0 generates at every step).
        #[arg(long)]
        aug_bank: Option<usize>,
        #[arg(long)]
        no_augmentation: bool,
        #[arg(long)]
        no_weighting: bool,
    },
    /// Fit the linear probe on labeled training items.
    Finetune {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Score the probe on the test split and write the metrics JSON.
    Evaluate,
    /// Run the Base/Aug/Weight/Full comparison over several seeds.
    Ablate {
        #[arg(long)]
        num_seeds: Option<u64>,
    },
}

fn push<T: Into<Value>>(ov: &mut Vec<(String, Value)>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        ov.push((key.to_string(), v.into()));
    }
}

fn overrides(cli: &Cli) -> Result<Vec<(String, Value)>> {
    let g = &cli.global;
    let mut ov = Vec::new();
    for s in &g.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| ClarError::Config(format!("--set expects KEY=VALUE, got `{s}`")))?;
        ov.push((k.trim().to_string(), override_value(v.trim())));
    }
    push(&mut ov, "seed", g.seed);
    push(&mut ov, "out_dir", g.out_dir.as_ref().map(|p| p.display().to_string()));
    push(&mut ov, "schedule.steps", g.diffusion_steps);
    push(&mut ov, "schedule.beta_start", g.beta_start);
    push(&mut ov, "schedule.beta_end", g.beta_end);
    push(&mut ov, "guidance.lambda_h", g.lambda_h);
    push(&mut ov, "guidance.lambda_l", g.lambda_l);
    push(&mut ov, "guidance.n_h", g.n_h);
    push(&mut ov, "guidance.n_l", g.n_l);
    push(&mut ov, "pretrain.weighting.window", g.window);
    push(&mut ov, "pretrain.weighting.templates", g.templates);
    push(&mut ov, "pretrain.weighting.alpha", g.alpha);
    match &cli.command {
        Command::TrainDdpm { steps, lr, batch, .. } => {
            push(&mut ov, "ddpm.steps", *steps);
            push(&mut ov, "ddpm.lr", *lr);
            push(&mut ov, "ddpm.batch", *batch);
        }
        Command::Augment { n, no_guidance } => {
            push(&mut ov, "augment.count", *n);
            if *no_guidance {
                push(&mut ov, "guidance.n_h", Some(0.0));
                push(&mut ov, "guidance.n_l", Some(0.0));
            }
        }
        Command::Pretrain { epochs, lr, batch, tau, aug_bank, no_augmentation, no_weighting } => {
            push(&mut ov, "pretrain.epochs", *epochs);
            push(&mut ov, "pretrain.lr", *lr);
            push(&mut ov, "pretrain.batch", *batch);
            push(&mut ov, "pretrain.tau", *tau);
            push(&mut ov, "pretrain.aug_bank", *aug_bank);
            if *no_augmentation {
                push(&mut ov, "pretrain.use_augmentation", Some(false));
            }
            if *no_weighting {
                push(&mut ov, "pretrain.use_weighting", Some(false));
            }
        }
        Command::Finetune { epochs, lr } => {
            push(&mut ov, "probe.epochs", *epochs);
            push(&mut ov, "probe.lr", *lr);
        }
        Command::Ablate { num_seeds } => push(&mut ov, "ablation.num_seeds", *num_seeds),
        Command::GenData | Command::Evaluate => {}
    }
    Ok(ov)
}

fn run(cli: &Cli) -> Result<()> {
    let env_seed = if cli.global.seed.is_some() { None } else { std::env::var(SEED_ENV).ok() };
    let cfg = RunConfig::load(cli.global.config.as_deref(), &overrides(cli)?, env_seed.as_deref())?;
    match &cli.command {
        Command::GenData => {
            let corpus = pipeline::cmd_gen_data(&cfg)?;
            println!(
                "wrote {} samples ({} train, {} test) to {}",
                corpus.samples.len(),
                corpus.train().len(),
                corpus.test().len(),
                cfg.corpus_path().display()
            );
        }
        Command::TrainDdpm { resume, .. } => {
            let losses = pipeline::cmd_train_ddpm(&cfg, *resume)?;
            if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
                println!("{} steps, loss {first:.4} -> {last:.4}", losses.len());
            }
            println!("checkpoint: {}", cfg.ddpm_path().display());
        }
        Command::Augment { .. } => {
            let s = pipeline::cmd_augment(&cfg, cfg.augment.count)?;
            println!(
                "{} samples; mean DTW to source {:.3}, to reference {:.3}, cross-class {:.3}",
                s.count, s.mean_dtw_aug_src, s.mean_dtw_aug_ref, s.mean_cross_class_dtw
            );
        }
        Command::Pretrain { .. } => {
            let out = pipeline::cmd_pretrain(&cfg)?;
            let means = out.epoch_means();
            if let (Some(first), Some(last)) = (means.first(), means.last()) {
                println!("{} epochs, mean loss {first:.4} -> {last:.4}", means.len());
            }
            println!("encoder: {}", cfg.encoder_path().display());
        }
        Command::Finetune { .. } => {
            pipeline::cmd_finetune(&cfg)?;
            println!("probe: {}", cfg.probe_path().display());
        }
        Command::Evaluate => {
            let m = pipeline::cmd_evaluate(&cfg)?;
            println!("accuracy {:.4}, macro F1 {:.4}", m.accuracy, m.macro_f1);
        }
        Command::Ablate { .. } => {
            let rows = pipeline::cmd_ablate(&cfg)?;
            println!("{ABLATION_HEADER}");
            for r in rows {
                println!("{}", r.csv_line());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
