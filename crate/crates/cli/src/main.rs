use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use meritfed_cli::config::{emit, parse_config_with, preset_names};
use meritfed_cli::{resolve_out_dir, run};

#[derive(Parser)]
#[command(name = "meritfed", version, about = "Merit-weighted federated learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Configuration file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed; repeats use consecutive seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Preset applied beneath the file's keys.
    #[arg(long)]
    preset: Option<String>,
    /// Override a key, e.g. `--set rounds=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write CSV tables plus a manifest.
    Run {
        #[command(flatten)]
        args: ConfigArgs,
        /// Output directory [default: config `out`, then $MERITFED_OUT, then ./meritfed-out]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the fully expanded configuration.
    Expand {
        #[command(flatten)]
        args: ConfigArgs,
    },
    /// List preset names.
    Presets,
}

fn load(args: &ConfigArgs) -> Result<meritfed_cli::config::RunConfig> {
    if args.config.is_none() && args.preset.is_none() {
        anyhow::bail!("either --config or --preset is required");
    }
    let text = match &args.config {
        Some(path) => std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?,
        None => String::new(),
    };
    let mut sets = args.sets.clone();
    if let Some(seed) = args.seed {
        sets.push(format!("seed={seed}"));
    }
    let source = args.config.as_ref().map_or("<preset>".into(), |p| p.display().to_string());
    parse_config_with(&text, args.preset.as_deref(), &sets).with_context(|| source)
}

fn main_inner() -> Result<()> {
    match Cli::parse().command {
        Command::Run { args, out } => {
            let cfg = load(&args)?;
            let dir = resolve_out_dir(out.as_deref(), &cfg);
            let outcomes = run(&cfg, &dir)?;
            for o in &outcomes {
                if o.step_warning {
                    eprintln!("warning: seed {}: gamma exceeds 1/(2L)", o.seed);
                }
                for (name, _) in &o.final_points {
                    let m = o.final_metrics(name).expect("method present");
                    let shown = m.dist_sq.or(m.accuracy).unwrap_or(m.val_loss);
                    let label = if m.dist_sq.is_some() {
                        "dist_sq"
                    } else if m.accuracy.is_some() {
                        "accuracy"
                    } else {
                        "val_loss"
                    };
                    println!("seed {} {name}: final {label} = {shown:.6e}", o.seed);
                }
            }
            println!("wrote {}", dir.display());
        }
        Command::Expand { args } => print!("{}", emit(&load(&args)?)),
        Command::Presets => {
            for name in preset_names() {
                println!("{name}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
