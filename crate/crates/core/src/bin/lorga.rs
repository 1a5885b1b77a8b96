use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use lorga::analysis::ZetaRule;
use lorga::experiment::{
    cmd_ablate, cmd_init_analyze, cmd_stability, cmd_train, cmd_verify, ExperimentConfig, RunOptions, StabilityConfig,
    VerifyOptions,
};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "lorga", version, about = "LoRA-GA initialization experiments and verification suite")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds; overrides `LORGA_SEED` and the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Gradient spectra, coverage curves and criterion residuals of the LoRA-GA initialization.
    InitAnalyze(Common),
    /// Train the configured schemes and report steps-to-threshold and speedup.
    Train(Common),
    /// All five initializations plus full fine-tuning.
    Ablate(Common),
    /// Forward/backward second-moment probe across layer sizes and ranks.
    Stability {
        /// Optional config; its `stability` section replaces the default grid.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run the verification suite; exits 1 if any check fails.
    Verify {
        /// Write verify.json here as well.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Mutation check: use ζ = (α²/γ²)·d_out/r² in the stability probe,
        /// which is expected to fail.
        #[arg(long)]
        mutate_zeta: bool,
    },
}

enum Failure {
    Config(anyhow::Error),
    Run(anyhow::Error),
}

fn env_seed() -> Option<String> {
    std::env::var("LORGA_SEED").ok()
}

fn prepare(c: &Common) -> Result<(ExperimentConfig, RunOptions), Failure> {
    let cfg = ExperimentConfig::load(&c.config).map_err(|e| Failure::Config(e.into()))?;
    let seeds = cfg.resolve_seeds(c.seeds.as_deref(), env_seed().as_deref()).map_err(|e| Failure::Config(e.into()))?;
    let out = c.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("runs"));
    Ok((cfg, RunOptions { out, seeds, jobs: c.jobs }))
}

fn run(cli: Cli) -> Result<bool, Failure> {
    let run_err = |e: lorga::Error| Failure::Run(e.into());
    match cli.command {
        Command::InitAnalyze(c) => {
            let (cfg, opts) = prepare(&c)?;
            let a = cmd_init_analyze(&cfg, &opts).map_err(run_err)?;
            for l in &a.layers {
                println!(
                    "layer {}: {}x{} coverage@2r={:.4} criterion={:?} predicted={:?}",
                    l.layer, l.d_out, l.d_in, l.coverage_2r, l.criterion_residual, l.predicted_residual
                );
            }
            println!("wrote {}", opts.out.join(&cfg.name).join("init").display());
        }
        Command::Train(c) => {
            let (cfg, opts) = prepare(&c)?;
            let s = cmd_train(&cfg, &opts).map_err(run_err)?;
            for sc in &s.schemes {
                println!(
                    "{:<15} {:<8} median steps-to-threshold {:?}",
                    sc.scheme.as_str(),
                    sc.status,
                    sc.median_steps_to_threshold
                );
            }
            if let Some(r) = s.speedup_vanilla_over_lora_ga {
                println!("speedup vanilla/lora_ga: {r:.3}");
            }
        }
        Command::Ablate(c) => {
            let (cfg, opts) = prepare(&c)?;
            let s = cmd_ablate(&cfg, &opts).map_err(run_err)?;
            for sc in &s.schemes {
                println!(
                    "{:<15} {:<8} steps {:?} eval loss {:?}",
                    sc.scheme.as_str(),
                    sc.status,
                    sc.median_steps_to_threshold,
                    sc.median_final_eval_loss
                );
            }
        }
        Command::Stability { config, out, seeds, jobs } => {
            let (stab, name) = match config {
                Some(p) => {
                    let cfg = ExperimentConfig::load(&p).map_err(|e| Failure::Config(e.into()))?;
                    (cfg.stability.clone().unwrap_or_default(), cfg.name)
                }
                None => (StabilityConfig::default(), "stability".to_string()),
            };
            let seeds = match (seeds, env_seed()) {
                (Some(s), _) => s,
                (None, Some(e)) => {
                    vec![e.trim().parse().with_context(|| format!("LORGA_SEED={e:?}")).map_err(Failure::Config)?]
                }
                (None, None) => vec![stab.seed],
            };
            let opts = RunOptions { out, seeds, jobs };
            let s = cmd_stability(&stab, &opts, &name, None).map_err(run_err)?;
            println!(
                "lora_ga spread {:.3} ({}), constant-zeta slopes {:?} ({})",
                s.report.stable_spread,
                if s.report.stable_passed { "ok" } else { "unstable" },
                s.report.constant_slopes,
                if s.report.constant_passed { "ok" } else { "off" }
            );
        }
        Command::Verify { out, seeds, mutate_zeta } => {
            let seed = match (seeds, env_seed()) {
                (Some(s), _) => *s.first().context("--seeds is empty").map_err(Failure::Config)?,
                (None, Some(e)) => e.trim().parse().with_context(|| format!("LORGA_SEED={e:?}")).map_err(Failure::Config)?,
                (None, None) => 0,
            };
            let opts = VerifyOptions {
                seed,
                zeta_rule: mutate_zeta.then_some(ZetaRule::LinearInDout { gamma: 16.0 }),
                ..VerifyOptions::default()
            };
            let report = cmd_verify(&opts).map_err(run_err)?;
            for line in &report.lines {
                println!("{line}");
            }
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| Failure::Run(e.into()))?;
                let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::Run(e.into()))?;
                std::fs::write(dir.join("verify.json"), json + "\n").map_err(|e| Failure::Run(e.into()))?;
            }
            return Ok(report.passed);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAILURE),
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
