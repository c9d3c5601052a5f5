use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use diffmn_cli::config::{DatasetKind, GenerateMode, PipelineConfig};
use diffmn_cli::io::read_jsonl;
use diffmn_cli::pipeline::{
    cmd_ablate, cmd_evaluate, cmd_generate, cmd_synth, cmd_train, generated_name, EvalPaths, Stage, CHECKPOINT,
    COMPLETE, CONFIG, DATASET, HOLDOUT, TRUTH,
};
use diffmn_cli::report::cmd_report;
use diffmn_core::metrics::Metric;

#[derive(Parser)]
#[command(
    name = "diffmn",
    version,
    about = "Irregular-to-continuous time series generation with a MoE neural CDE"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML config; defaults to `<out>/config.toml` when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs/default")]
    out: PathBuf,
    /// Observation drop rate for `synth`.
    #[arg(long, global = true)]
    drop: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Synth {
        #[arg(long, value_enum)]
        kind: Option<DatasetKind>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train the autoencoder, MoE-NCDE and diffusion stages.
    Train {
        /// Dataset JSONL; defaults to `<out>/dataset.jsonl`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        stage: Stage,
        /// Train an ablated variant (`no-moe`, `no-decoupled`).
        #[arg(long)]
        ablate: Option<String>,
    },
    /// Sample new series from a trained checkpoint.
    Generate(GenerateArgs),
    /// Shorthand for `generate --mode refined`.
    Refine(GenerateArgs),
    /// Compute metrics, or run an ablation sweep with `--ablate`.
    Evaluate {
        /// Real series; defaults to `<out>/complete.jsonl`.
        #[arg(long)]
        real: Option<PathBuf>,
        /// Generated series; defaults to the configured generation output.
        #[arg(long)]
        generated: Option<PathBuf>,
        #[arg(long)]
        holdout: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Comma-separated subset of ds, mdd, kl, mir, forecast, cubic.
        #[arg(long, value_delimiter = ',', default_value = "ds,mdd,kl")]
        metrics: Vec<Metric>,
        /// Comma-separated ablation arms compared against the full model.
        #[arg(long, value_delimiter = ',')]
        ablate: Vec<String>,
        /// Training data for `--ablate`; defaults to `<out>/dataset.jsonl`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Render loss curves and samples from the output directory as SVG.
    Report,
}

#[derive(Args)]
struct GenerateArgs {
    /// Defaults to `<out>/checkpoint.json`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<GenerateMode>,
    #[arg(long)]
    refine_factor: Option<usize>,
}

fn load_config(g: &Global) -> Result<PipelineConfig> {
    let implicit = g.out.join(CONFIG);
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None if implicit.exists() => PipelineConfig::load(&implicit)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(d) = g.drop {
        cfg.dataset.drop = d;
    }
    Ok(cfg)
}

fn existing(dir: &Path, name: &str) -> Option<PathBuf> {
    Some(dir.join(name)).filter(|p| p.exists())
}

fn apply_generate(cfg: &mut PipelineConfig, a: &GenerateArgs, refined: bool) {
    if let Some(n) = a.n {
        cfg.generate.n = n;
    }
    if let Some(m) = a.mode {
        cfg.generate.mode = m;
    }
    if refined {
        cfg.generate.mode = GenerateMode::Refined;
    }
    if let Some(k) = a.refine_factor {
        cfg.generate.refine_factor = k;
    }
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("DIFFMN_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("DIFFMN_THREADS={v} is not a number"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let g = &cli.global;
    let mut cfg = load_config(g)?;
    let out = &g.out;
    match &cli.command {
        Command::Synth { kind, n } => {
            if let Some(k) = kind {
                cfg.dataset.kind = *k;
                cfg.dataset.channels = None;
            }
            if let Some(n) = n {
                cfg.dataset.n = *n;
                cfg.dataset.holdout = None;
            }
            let cfg = cfg.resolved()?;
            let s = cmd_synth(&cfg, out)?;
            println!("wrote {} samples to {}", s.observed.len(), out.join(DATASET).display());
        }
        Command::Train { data, stage, ablate } => {
            if let Some(a) = ablate {
                cfg.ncde.variant = a.parse()?;
            }
            let cfg = cfg.resolved()?;
            let data = data.clone().unwrap_or_else(|| out.join(DATASET));
            let ckpt = cmd_train(&cfg, &data, out, *stage)?;
            println!(
                "checkpoint {} at stage `{}`",
                out.join(CHECKPOINT).display(),
                ckpt.stage
            );
        }
        Command::Generate(a) | Command::Refine(a) => {
            apply_generate(&mut cfg, a, matches!(cli.command, Command::Refine(_)));
            let cfg = cfg.resolved()?;
            let ckpt = a.checkpoint.clone().unwrap_or_else(|| out.join(CHECKPOINT));
            let s = cmd_generate(&cfg, &ckpt, out)?;
            println!(
                "wrote {} samples to {}",
                s.len(),
                out.join(generated_name(&cfg.generate)).display()
            );
        }
        Command::Evaluate {
            real,
            generated,
            holdout,
            truth,
            metrics,
            ablate,
            data,
        } => {
            let cfg = cfg.resolved()?;
            let real = real.clone().unwrap_or_else(|| out.join(COMPLETE));
            if !ablate.is_empty() {
                let data = read_jsonl(&data.clone().unwrap_or_else(|| out.join(DATASET)))?;
                let rows = cmd_ablate(&cfg, &data, &read_jsonl(&real)?, ablate, metrics, out)?;
                for (arm, metric, value) in rows {
                    println!("{arm}\t{metric}\t{value:.6}");
                }
                return Ok(());
            }
            let paths = EvalPaths {
                real,
                generated: generated
                    .clone()
                    .unwrap_or_else(|| out.join(generated_name(&cfg.generate))),
                holdout: holdout.clone().or_else(|| existing(out, HOLDOUT)),
                truth: truth.clone().or_else(|| existing(out, TRUTH)),
            };
            let report = cmd_evaluate(&cfg, &paths, metrics, out)?;
            for (k, v) in &report.values {
                println!("{k}\t{v:.6}");
            }
        }
        Command::Report => {
            cmd_report(out)?;
            println!("wrote {}", out.join(diffmn_cli::pipeline::REPORT).display());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
