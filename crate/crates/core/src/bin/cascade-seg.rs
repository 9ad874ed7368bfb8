use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cascade_seg::commands::{self, PhantomGenArgs};
use cascade_seg::config::RunConfig;
use cascade_seg::Result;

/// Two-stage prostate, central gland and peripheral zone segmentation.
#[derive(Parser)]
#[command(name = "cascade-seg", version)]
struct Cli {
    /// Slices predicted concurrently (training is always single-threaded).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Config override `key=value`; repeatable, applied after any config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_pair)]
    overrides: Vec<(String, String)>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic phantom volumes, labels and a manifest.
    PhantomGen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        /// Grid size, e.g. 64,64,32.
        #[arg(long, value_parser = parse_dims)]
        dims: Option<[usize; 3]>,
        /// Write into a non-empty directory.
        #[arg(long)]
        force: bool,
    },
    /// Train both stages of a cascade.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// mres-multi, mres-single or unet-baseline.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment one volume.
    Predict {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write both stages' foreground probabilities.
        #[arg(long)]
        dump_probs: bool,
    },
    /// Score the test split of a manifest.
    Evaluate {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bland-Altman analysis of a tpv CSV.
    Agree {
        #[arg(long)]
        tpv_csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate all three variants on one split and seed.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_pair(s: &str) -> std::result::Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, found {s:?}"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn parse_dims(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<usize> = s.split(',').map(|p| p.trim().parse().map_err(|_| format!("bad dimension {p:?}"))).collect::<std::result::Result<_, _>>()?;
    parts.try_into().map_err(|_| format!("expected X,Y,Z, found {s:?}"))
}

fn run(cli: Cli) -> Result<()> {
    let mut overrides = cli.overrides;
    if let Some(t) = cli.threads {
        overrides.push(("threads".into(), t.to_string()));
    }
    match cli.command {
        Command::PhantomGen { out, count, seed, dims, force } => {
            commands::phantom_gen(&PhantomGenArgs { out, count, seed, dims, force })?;
        }
        Command::Train { config, variant, out } => {
            if let Some(v) = variant {
                overrides.push(("variant".into(), v));
            }
            let cfg = RunConfig::load(config.as_deref(), &overrides)?;
            let report = commands::train(&cfg, &out)?;
            if let (Some(a), Some(b)) = (report.stage1_log.last(), report.stage2_log.last()) {
                log::info!("final train loss: stage1 {:.5}, stage2 {:.5}", a.train_loss, b.train_loss);
            }
        }
        Command::Predict { weights, input, out, dump_probs } => {
            let cfg = commands::weights_config(&weights, &overrides)?;
            let report = commands::predict(&cfg, &weights, &input, &out, dump_probs)?;
            println!("mean_per_slice_seconds={}", report.mean_slice_seconds);
        }
        Command::Evaluate { weights, manifest, out } => {
            let cfg = commands::weights_config(&weights, &overrides)?;
            let report = commands::evaluate(&cfg, &weights, &manifest, &out)?;
            for (st, s) in cascade_seg::cascade::Structure::ALL.iter().zip(&report.scores.summary) {
                log::info!("{} dice {:.3} ± {:.3}", st.name(), s.dice.mean, s.dice.sd);
            }
        }
        Command::Agree { tpv_csv, out } => {
            let stats = commands::agree(&tpv_csv, &out)?;
            log::info!("n {} mean diff {:.3} mL, CV {:.2}%, RPC {:.2}%", stats.n, stats.mean_diff, stats.cv_pct, stats.rpc_pct);
        }
        Command::Ablate(a) => {
            let cfg = RunConfig::load(a.config.as_deref(), &overrides)?;
            commands::ablate(&cfg, &a.out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
