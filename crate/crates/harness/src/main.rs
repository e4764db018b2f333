use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kogun::envs::{env_registry, make_env, EnvOptions};
use kogun::ruledsl::{parse_rulebase_bytes, validate_rulebase};
use kogun_harness::config::{load_config, LoadedConfig};
use kogun_harness::error::{HarnessError, Result};
use kogun_harness::experiment::{
    emit_curves, evaluate_checkpoint, output_root, run_ablation, run_experiment, Override,
};

#[derive(Debug, Parser)]
#[command(name = "kogun-run", version, about = "Train and evaluate knowledge-guided policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train every seed of one experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Replaces the configured seed list.
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        seed_override: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a base config under several override sets.
    ///
    /// Each entry is a variant name, or `label:key=value;key=value` for
    /// arbitrary patches.
    Ablate {
        #[arg(long)]
        base: PathBuf,
        #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
        variants: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        /// Defaults to `config.toml` beside the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Aggregate run directories into a tidy curves table.
    Curves {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        window: usize,
    },
    /// Rule base utilities.
    Rules {
        #[command(subcommand)]
        command: RulesCommand,
    },
}

#[derive(Debug, Subcommand)]
enum RulesCommand {
    /// Parse and validate a rule file against an environment.
    Check {
        file: PathBuf,
        #[arg(long)]
        env: String,
    },
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn parse_override(spec: &str) -> Result<Override> {
    let Some((label, patches)) = spec.split_once(':') else {
        return Ok(Override::variant(spec));
    };
    let patches = patches
        .split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| HarnessError::Invalid(format!("override `{p}` is not key=value")))?;
            Ok((k.trim().to_string(), parse_value(v.trim())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Override {
        name: label.to_string(),
        patches,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            seed_override,
            out,
        } => {
            let mut loaded = load_config(&config)?;
            if !seed_override.is_empty() {
                loaded.config.experiment.seeds = seed_override;
            }
            let run = run_experiment(&loaded, out.as_deref())?;
            for o in &run.outcomes {
                match &o.error {
                    None => println!(
                        "seed {}: final mean return {:.1}",
                        o.seed,
                        o.log.rows.last().map_or(f64::NAN, |r| r.mean_eval_return)
                    ),
                    Some(e) => println!("seed {}: failed: {e}", o.seed),
                }
            }
            println!("wrote {}", run.dir.display());
        }
        Command::Ablate { base, variants, out } => {
            let text = std::fs::read_to_string(&base).map_err(|e| HarnessError::io(&base, e))?;
            let base_dir = base.parent().map(Path::to_path_buf).unwrap_or_default();
            let overrides = variants.iter().map(|v| parse_override(v)).collect::<Result<Vec<_>>>()?;
            let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let out = out.unwrap_or_else(|| output_root().join(format!("{stem}-ablation")));
            let art = run_ablation(&text, &base_dir, &overrides, &out)?;
            println!("wrote {}", art.comparison.display());
        }
        Command::Eval {
            checkpoint,
            episodes,
            config,
            seed,
        } => {
            let config = config.unwrap_or_else(|| {
                checkpoint.parent().unwrap_or(Path::new(".")).join("config.toml")
            });
            let loaded: LoadedConfig = load_config(&config)?;
            let r = evaluate_checkpoint(&loaded, &checkpoint, episodes, seed)?;
            println!(
                "update {} w1 {:.3}: mean return {:.2} std {:.2} over {episodes} episodes",
                r.update_index, r.w1, r.mean, r.std
            );
        }
        Command::Curves { dir, window } => {
            let (path, points) = emit_curves(&dir, window)?;
            println!("wrote {} ({} points)", path.display(), points.len());
        }
        Command::Rules {
            command: RulesCommand::Check { file, env },
        } => {
            let bytes = std::fs::read(&file).map_err(|e| HarnessError::io(&file, e))?;
            let rb = parse_rulebase_bytes(&bytes).map_err(kogun::error::KogunError::from)?;
            let env = make_env(&env, &EnvOptions::default()).map_err(|e| {
                HarnessError::Invalid(format!("{e} (known: {})", env_registry().names().join(", ")))
            })?;
            validate_rulebase(&rb, env.spec()).map_err(kogun::error::KogunError::from)?;
            println!("{}: {} rules ok", file.display(), rb.rules.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
