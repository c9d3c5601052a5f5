use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use diffmn_core::autoencoder::{pretrain_autoencoder, AeReport, ChannelAutoencoder};
use diffmn_core::diffusion::{DiffusionModel, DiffusionReport};
use diffmn_core::generate::generate;
use diffmn_core::metrics::{
    cubic_recovery, discriminative_score, downstream_forecast, kl_divergence, mdd, mir, wasserstein1, Metric,
    MetricsReport,
};
use diffmn_core::ncde::{MoeNcde, NcdeReport, TrainedWeights, Variant};
use diffmn_core::rng::{self, streams};
use diffmn_core::IrregularSeries;

use crate::checkpoint::Checkpoint;
use crate::config::{synthesize, GenerateConfig, PipelineConfig, Synthesized};
use crate::io::{dataset_hash, read_jsonl, read_truth, write_jsonl, write_losses, write_table, write_truth, Manifest};

pub const CONFIG: &str = "config.toml";
pub const GENERATE_CONFIG: &str = "generate.toml";
pub const EVALUATE_CONFIG: &str = "evaluate.toml";
pub const ABLATION_CONFIG: &str = "ablation.toml";
pub const DATASET: &str = "dataset.jsonl";
pub const COMPLETE: &str = "complete.jsonl";
pub const HOLDOUT: &str = "holdout.jsonl";
pub const TRUTH: &str = "truth.csv";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const IMPUTED: &str = "imputed.jsonl";
pub const WEIGHTS: &str = "weights.csv";
pub const AE_LOSS: &str = "ae_loss.csv";
pub const NCDE_LOSS: &str = "ncde_loss.csv";
pub const DIFFUSION_LOSS: &str = "diffusion_loss.csv";
pub const GENERATED: &str = "generated.jsonl";
pub const REFINED: &str = "refined.jsonl";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const ABLATION: &str = "ablation.csv";
pub const REPORT: &str = "report.svg";

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Ae,
    Ncde,
    Diffusion,
    All,
}

/// Writes the resolved config beside a command's outputs.
pub fn write_config(dir: &Path, name: &str, cfg: &PipelineConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), cfg.to_toml()?)?;
    Ok(())
}

/// Common time grid of a dataset.
pub fn shared_grid(data: &[IrregularSeries]) -> Result<Vec<f64>> {
    let first = data.first().ok_or_else(|| anyhow!("empty dataset"))?;
    if data.iter().any(|s| s.times() != first.times()) {
        bail!("all samples must share one time grid");
    }
    Ok(first.times().to_vec())
}

pub fn cmd_synth(cfg: &PipelineConfig, out: &Path) -> Result<Synthesized> {
    let synth = synthesize(cfg)?;
    write_config(out, CONFIG, cfg)?;
    let hash = cfg.hash();
    let mut manifest = Manifest::new("synth", &hash, cfg.seed);
    write_jsonl(&out.join(DATASET), &synth.observed)?;
    write_jsonl(&out.join(COMPLETE), &synth.complete)?;
    write_jsonl(&out.join(HOLDOUT), &synth.holdout)?;
    for name in [CONFIG, DATASET, COMPLETE, HOLDOUT] {
        manifest.record(out, name)?;
    }
    if let Some(truth) = &synth.truth {
        write_truth(&out.join(TRUTH), &synth.complete, truth)?;
        manifest.record(out, TRUTH)?;
    }
    manifest.write(out)?;
    log::info!("synthesized {} samples into {}", synth.observed.len(), out.display());
    Ok(synth)
}

pub fn stage_ae(cfg: &PipelineConfig, data: &[IrregularSeries]) -> Result<(ChannelAutoencoder<f64>, AeReport)> {
    Ok(pretrain_autoencoder::<f64>(data, &cfg.autoencoder, cfg.seed)?)
}

pub struct NcdeStage {
    pub model: MoeNcde<f64>,
    pub report: NcdeReport,
    pub weights: TrainedWeights,
    pub imputed: Vec<IrregularSeries>,
    pub grid: Vec<f64>,
}

pub fn stage_ncde(cfg: &PipelineConfig, ae: ChannelAutoencoder<f64>, data: &[IrregularSeries]) -> Result<NcdeStage> {
    let grid = shared_grid(data)?;
    let mut init = rng::stream(cfg.seed, streams::NCDE_INIT);
    let mut model = MoeNcde::new(ae, grid.len(), &cfg.ncde, &mut init)?;
    let (report, weights) = model.train(data, &cfg.ncde, cfg.seed)?;
    let imputed = model.impute_dataset(data)?;
    Ok(NcdeStage {
        model,
        report,
        weights,
        imputed,
        grid,
    })
}

pub fn stage_diffusion(
    cfg: &PipelineConfig,
    imputed: &[IrregularSeries],
    weights: &[Vec<f64>],
) -> Result<(DiffusionModel, DiffusionReport)> {
    let series: Vec<Vec<f64>> = imputed.iter().map(IrregularSeries::flat_values).collect();
    Ok(DiffusionModel::fit(&series, weights, &cfg.diffusion, cfg.seed)?)
}

/// Every model and report of a full training run.
pub struct Trained {
    pub ae_report: AeReport,
    pub ncde: NcdeStage,
    pub diffusion: DiffusionModel,
    pub diffusion_report: DiffusionReport,
}

impl Trained {
    pub fn generate(&self, n: usize, factor: usize, seed: u64) -> Result<Vec<IrregularSeries>> {
        Ok(generate(
            &self.ncde.model,
            &self.diffusion,
            &self.ncde.grid,
            n,
            factor,
            seed,
        )?)
    }
}

/// All stages in memory, without touching the filesystem.
pub fn train_pipeline(cfg: &PipelineConfig, data: &[IrregularSeries]) -> Result<Trained> {
    let (ae, ae_report) = stage_ae(cfg, data).context("stage `ae` failed")?;
    let ncde = stage_ncde(cfg, ae, data).context("stage `ncde` failed")?;
    let (diffusion, diffusion_report) =
        stage_diffusion(cfg, &ncde.imputed, &ncde.weights.weights).context("stage `diffusion` failed")?;
    Ok(Trained {
        ae_report,
        ncde,
        diffusion,
        diffusion_report,
    })
}

fn write_weights(path: &Path, w: &TrainedWeights, hash: &str, seed: u64) -> Result<()> {
    let k = w.weights.first().map_or(0, Vec::len);
    let names: Vec<String> = (0..k).map(|i| format!("w{i}")).collect();
    let mut header = vec!["id"];
    header.extend(names.iter().map(String::as_str));
    let rows = w.ids.iter().zip(&w.weights).map(|(id, ws)| {
        let mut row = vec![id.clone()];
        row.extend(ws.iter().map(|v| format!("{v:?}")));
        row
    });
    write_table(path, &header, rows, hash, seed)
}

fn read_weights(path: &Path) -> Result<TrainedWeights> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let k = r.headers()?.iter().filter(|h| h.starts_with('w')).count();
    let mut out = TrainedWeights {
        ids: Vec::new(),
        weights: Vec::new(),
    };
    for rec in r.records() {
        let rec = rec?;
        out.ids.push(rec[0].to_string());
        out.weights
            .push((1..=k).map(|i| rec[i].parse::<f64>()).collect::<Result<Vec<_>, _>>()?);
    }
    Ok(out)
}

fn load_matching(path: &Path, hash: &str, need: &str, hint: &str) -> Result<Checkpoint> {
    if !path.exists() {
        bail!("no checkpoint at {}; {hint}", path.display());
    }
    let ckpt = Checkpoint::load(path)?;
    if ckpt.config_hash != hash {
        bail!(
            "checkpoint {} was written under config {}, current config is {hash}",
            path.display(),
            ckpt.config_hash
        );
    }
    if !ckpt.has(need) {
        bail!("checkpoint {} has no `{need}` section; {hint}", path.display());
    }
    Ok(ckpt)
}

/// Runs the requested stages on the dataset at `data`, writing the
/// checkpoint after every completed stage.
pub fn cmd_train(cfg: &PipelineConfig, data: &Path, out: &Path, stage: Stage) -> Result<Checkpoint> {
    let dataset = read_jsonl(data)?;
    write_config(out, CONFIG, cfg)?;
    let hash = cfg.hash();
    let seed = cfg.seed;
    let ckpt_path = out.join(CHECKPOINT);
    let mut manifest = Manifest::new("train", &hash, seed);
    manifest.record(out, CONFIG)?;

    let mut ckpt = match stage {
        Stage::Ae | Stage::All => Checkpoint::new(&hash, seed),
        Stage::Ncde => load_matching(&ckpt_path, &hash, "channel_ae", "run `train --stage ae` first")?,
        Stage::Diffusion => load_matching(&ckpt_path, &hash, "experts", "run `train --stage ncde` first")?,
    };
    let fail = |name: &str, ckpt: &Checkpoint| {
        format!(
            "stage `{name}` failed; last good checkpoint ({}) is {}",
            ckpt.stage,
            ckpt_path.display()
        )
    };

    let mut ae = None;
    if matches!(stage, Stage::Ae | Stage::All) {
        let (model, report) = stage_ae(cfg, &dataset).with_context(|| fail("ae", &ckpt))?;
        ckpt.set_autoencoder(&model);
        ckpt.save(&ckpt_path)?;
        write_losses(&out.join(AE_LOSS), &report.losses, &hash, seed)?;
        manifest.record(out, AE_LOSS)?;
        ae = Some(model);
    }

    let mut imputed = None;
    if matches!(stage, Stage::Ncde | Stage::All) {
        let ae = match ae.take() {
            Some(a) => a,
            None => ckpt.autoencoder()?,
        };
        let r = stage_ncde(cfg, ae, &dataset).with_context(|| fail("ncde", &ckpt))?;
        ckpt.set_ncde(&r.model, &r.grid);
        ckpt.save(&ckpt_path)?;
        write_jsonl(&out.join(IMPUTED), &r.imputed)?;
        write_weights(&out.join(WEIGHTS), &r.weights, &hash, seed)?;
        write_losses(&out.join(NCDE_LOSS), &r.report.losses, &hash, seed)?;
        for name in [IMPUTED, WEIGHTS, NCDE_LOSS] {
            manifest.record(out, name)?;
        }
        imputed = Some((r.imputed, r.weights));
    }

    if matches!(stage, Stage::Diffusion | Stage::All) {
        let (series, weights) = match imputed.take() {
            Some(x) => x,
            None => {
                let (ip, wp) = (out.join(IMPUTED), out.join(WEIGHTS));
                if !ip.exists() || !wp.exists() {
                    bail!("diffusion needs the imputed dataset and weight table; run `train --stage ncde` first");
                }
                (read_jsonl(&ip)?, read_weights(&wp)?)
            }
        };
        if series.len() != weights.weights.len() || series.iter().zip(&weights.ids).any(|(s, id)| s.id() != id) {
            bail!("imputed dataset and weight table disagree");
        }
        let (model, report) =
            stage_diffusion(cfg, &series, &weights.weights).with_context(|| fail("diffusion", &ckpt))?;
        ckpt.set_diffusion(&model);
        ckpt.save(&ckpt_path)?;
        write_losses(&out.join(DIFFUSION_LOSS), &report.losses, &hash, seed)?;
        manifest.record(out, DIFFUSION_LOSS)?;
    }
    manifest.record(out, CHECKPOINT)?;
    manifest.write(out)?;
    Ok(ckpt)
}

/// Output file for a generation mode.
pub fn generated_name(gen: &GenerateConfig) -> &'static str {
    if gen.factor() == 1 {
        GENERATED
    } else {
        REFINED
    }
}

pub fn cmd_generate(cfg: &PipelineConfig, checkpoint: &Path, out: &Path) -> Result<Vec<IrregularSeries>> {
    let ckpt = Checkpoint::load(checkpoint)?;
    if !ckpt.has("denoiser") {
        bail!(
            "checkpoint {} is not fully trained (stage `{}`)",
            checkpoint.display(),
            ckpt.stage
        );
    }
    let ncde = ckpt.ncde()?;
    let diffusion = ckpt.diffusion()?;
    let grid = ckpt.grid()?;
    let gen = &cfg.generate;
    let samples = generate(&ncde, &diffusion, &grid, gen.n, gen.factor(), cfg.seed)?;
    write_config(out, GENERATE_CONFIG, cfg)?;
    let name = generated_name(gen);
    write_jsonl(&out.join(name), &samples)?;
    let mut manifest = Manifest::new("generate", &cfg.hash(), cfg.seed);
    manifest.record(out, GENERATE_CONFIG)?;
    manifest.record(out, name)?;
    manifest.write(out)?;
    Ok(samples)
}

/// Inputs of an evaluation run.
pub struct EvalInputs<'a> {
    pub real: &'a [IrregularSeries],
    pub generated: &'a [IrregularSeries],
    pub holdout: Option<&'a [IrregularSeries]>,
    pub truth: Option<&'a [[f64; 4]]>,
}

const COEFS: [&str; 4] = ["a", "b", "c", "d"];

pub fn evaluate(cfg: &PipelineConfig, inputs: &EvalInputs, which: &[Metric]) -> Result<MetricsReport> {
    let mc = &cfg.metrics;
    let seed = cfg.seed;
    let both: Vec<IrregularSeries> = inputs.real.iter().chain(inputs.generated).cloned().collect();
    let mut report = MetricsReport::new(mc.clone(), seed, cfg.hash(), dataset_hash(&both));
    for &m in which {
        match m {
            Metric::Ds => report.insert("ds", discriminative_score(inputs.real, inputs.generated, mc, seed)?)?,
            Metric::Mdd => report.insert("mdd", mdd(inputs.real, inputs.generated, mc.bins)?)?,
            Metric::Kl => report.insert(
                "kl",
                kl_divergence(inputs.real, inputs.generated, mc.bins, mc.smoothing)?,
            )?,
            Metric::Mir => {
                let holdout = inputs.holdout.ok_or_else(|| anyhow!("mir needs a held-out real set"))?;
                report.insert("mir", mir(inputs.real, holdout, inputs.generated)?)?;
            }
            Metric::Forecast => {
                let s = downstream_forecast(inputs.generated, mc, seed)?;
                report.insert("forecast_mse", s.mse)?;
                report.insert("forecast_mae", s.mae)?;
            }
            Metric::Cubic => {
                let truth = inputs
                    .truth
                    .ok_or_else(|| anyhow!("cubic recovery needs the truth coefficient sidecar"))?;
                let rec = cubic_recovery(inputs.generated, &cfg.dataset.cubic, mc.reference_draws, seed)?;
                for (k, name) in COEFS.iter().enumerate() {
                    report.insert(format!("cubic_mean_error_{name}"), rec.mean_error[k])?;
                    report.insert(format!("cubic_std_error_{name}"), rec.std_error[k])?;
                    report.insert(format!("cubic_w1_{name}"), rec.w1[k])?;
                    let fitted: Vec<f64> = rec.refits.iter().map(|c| c[k]).collect();
                    let actual: Vec<f64> = truth.iter().map(|c| c[k]).collect();
                    report.insert(format!("cubic_truth_w1_{name}"), wasserstein1(&fitted, &actual))?;
                }
            }
        }
    }
    Ok(report)
}

pub struct EvalPaths {
    pub real: PathBuf,
    pub generated: PathBuf,
    pub holdout: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

pub fn cmd_evaluate(cfg: &PipelineConfig, paths: &EvalPaths, which: &[Metric], out: &Path) -> Result<MetricsReport> {
    let real = read_jsonl(&paths.real)?;
    let generated = read_jsonl(&paths.generated)?;
    let holdout = paths.holdout.as_deref().map(read_jsonl).transpose()?;
    if which.contains(&Metric::Cubic) && paths.truth.as_deref().is_none_or(|p| !p.exists()) {
        bail!("`--metrics cubic` needs the truth sidecar ({TRUTH}) written by `synth --kind cubic`");
    }
    let truth = paths
        .truth
        .as_deref()
        .filter(|p| p.exists())
        .map(read_truth)
        .transpose()?;
    let report = evaluate(
        cfg,
        &EvalInputs {
            real: &real,
            generated: &generated,
            holdout: holdout.as_deref(),
            truth: truth.as_deref(),
        },
        which,
    )?;
    write_config(out, EVALUATE_CONFIG, cfg)?;
    fs::write(out.join(METRICS_CSV), report.to_csv())?;
    fs::write(out.join(METRICS_JSON), serde_json::to_string_pretty(&report)? + "\n")?;
    let mut manifest = Manifest::new("evaluate", &report.config_hash, cfg.seed);
    manifest.record(out, EVALUATE_CONFIG)?;
    manifest.record(out, METRICS_CSV)?;
    manifest.record(out, METRICS_JSON)?;
    manifest.write(out)?;
    Ok(report)
}

/// One ablation arm: a named variant of the base config.
pub fn ablation_config(base: &PipelineConfig, arm: &str) -> Result<PipelineConfig> {
    let mut cfg = base.clone();
    if let Some(k) = arm.strip_prefix("experts=") {
        cfg.ncde.variant = Variant::Full;
        cfg.ncde.experts = k.parse().with_context(|| format!("bad expert count in `{arm}`"))?;
    } else {
        cfg.ncde.variant = arm.parse()?;
    }
    Ok(cfg)
}

/// Trains and evaluates `full` plus every arm, returning `(arm, metric,
/// value)` rows and writing them as the comparison table.
pub fn cmd_ablate(
    base: &PipelineConfig,
    data: &[IrregularSeries],
    real: &[IrregularSeries],
    arms: &[String],
    which: &[Metric],
    out: &Path,
) -> Result<Vec<(String, String, f64)>> {
    let mut names = vec!["full".to_string()];
    names.extend(arms.iter().filter(|a| a.as_str() != "full").cloned());
    let mut rows = Vec::new();
    for arm in &names {
        let cfg = ablation_config(base, arm)?;
        log::info!("ablation arm `{arm}`");
        let trained = train_pipeline(&cfg, data).with_context(|| format!("ablation arm `{arm}`"))?;
        let generated = trained.generate(cfg.generate.n, 1, cfg.seed)?;
        let report = evaluate(
            &cfg,
            &EvalInputs {
                real,
                generated: &generated,
                holdout: None,
                truth: None,
            },
            which,
        )?;
        rows.extend(report.values.iter().map(|(k, v)| (arm.clone(), k.clone(), *v)));
    }
    write_config(out, ABLATION_CONFIG, base)?;
    let hash = base.hash();
    write_table(
        &out.join(ABLATION),
        &["variant", "metric", "value"],
        rows.iter()
            .map(|(a, m, v)| vec![a.clone(), m.clone(), format!("{v:?}")]),
        &hash,
        base.seed,
    )?;
    let mut manifest = Manifest::new("ablate", &hash, base.seed);
    manifest.record(out, ABLATION_CONFIG)?;
    manifest.record(out, ABLATION)?;
    manifest.write(out)?;
    Ok(rows)
}
