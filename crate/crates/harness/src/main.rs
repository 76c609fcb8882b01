//! `fdia`: benchmark physics-compliant injection generators against DC
//! state estimation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fdia_harness::{config::ExperimentConfig, report, runner};

#[derive(Parser)]
#[command(
    name = "fdia",
    about = "Benchmark pool of attack-distribution generators against DC state estimation",
    version
)]
struct Cli {
    /// JSON experiment config; defaults apply where omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Case file path or builtin name (ieee14, ieee30); overrides the config.
    #[arg(long, global = true)]
    case: Option<String>,
    /// Comma-separated training seeds; overrides the config.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Report format.
    #[arg(long, global = true)]
    format: Option<String>,
    /// BDD evasion semantics.
    #[arg(long, global = true, value_name = "isolated|superposed")]
    evasion_mode: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Block A: benchmark the full roster and apply Pareto selection.
    Bench,
    /// Block B: attacker-knowledge sweep over the representative cells.
    Ksweep,
    /// Block C: cross-level attribution for Pareto-optimal cells.
    Xai,
    /// Failure/recovery demonstration of the normalized-space projection.
    Lemma,
    /// Retrain under an ablation condition and report the MMD change.
    Ablate {
        #[arg(long, value_name = "no_physics|no_selection|no_conditioning")]
        condition: String,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(case) = &cli.case {
        cfg.case = case.clone();
    }
    if !cli.seeds.is_empty() {
        cfg.seeds = cli.seeds.clone();
    }
    if let Some(fmt) = &cli.format {
        cfg.format = fmt.parse().map_err(|e: String| anyhow::anyhow!(e))?;
    }
    if let Some(mode) = &cli.evasion_mode {
        cfg.evasion_mode = mode.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    let cfg = load_config(cli)?;
    std::fs::create_dir_all(&cli.out)?;
    let pipeline = runner::prepare(&cfg)?;

    let failures = match &cli.command {
        Command::Bench => {
            let result = runner::run_block_a(&cfg, &pipeline)?;
            report::write_block_a(&cli.out, &result, cfg.format)?;
            report::write_manifest(&cli.out, "bench", &cfg)?;
            result.failures.len()
        }
        Command::Ksweep => {
            let result = runner::run_block_b(&cfg, &pipeline)?;
            report::write_block_b(&cli.out, &result, cfg.format)?;
            report::write_manifest(&cli.out, "ksweep", &cfg)?;
            if let Some(notice) = &result.notice {
                eprintln!("notice: {notice}");
            }
            result.failures.len()
        }
        Command::Xai => {
            let block_a = runner::run_block_a(&cfg, &pipeline)?;
            let result = runner::run_block_c(&cfg, &pipeline, &block_a)?;
            report::write_block_c(&cli.out, &result, cfg.format)?;
            report::write_manifest(&cli.out, "xai", &cfg)?;
            block_a.failures.len() + result.failures.len()
        }
        Command::Lemma => {
            let result = runner::run_lemma_demo(&cfg, &pipeline)?;
            report::write_lemma(&cli.out, &result, cfg.format)?;
            report::write_manifest(&cli.out, "lemma", &cfg)?;
            result.failures.len()
        }
        Command::Ablate { condition } => {
            let result = runner::run_ablation(&cfg, &pipeline, condition)?;
            report::write_ablation(&cli.out, &result, cfg.format)?;
            report::write_manifest(&cli.out, &format!("ablate:{condition}"), &cfg)?;
            result.failures.len()
        }
    };
    if failures > 0 {
        eprintln!("{failures} cell(s) failed; partial reports written to {}", cli.out.display());
    }
    Ok(failures == 0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
