//! Acceptance criteria 1–11. Each criterion prints one line; pass criterion
//! numbers as arguments to run a subset. Failures are reported in the summary
//! line; `--strict` also turns them into a non-zero exit status.

#![allow(clippy::field_reassign_with_default)]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use anyhow::{anyhow, ensure, Result};
use diffmn_cli::config::{synthesize, DatasetKind, PipelineConfig, Synthesized};
use diffmn_cli::pipeline::{self, stage_ae, stage_diffusion, stage_ncde, EvalInputs, NcdeStage};
use diffmn_core::diffusion::{
    ancestral_sample, sample, train_diffusion, DiffusionConfig, DiffusionModel, NoiseSchedule,
};
use diffmn_core::generate::generate;
use diffmn_core::metrics::{cubic_recovery, downstream_forecast, mir, Metric};
use diffmn_core::ncde::{cde_integrate, BoundExperts};
use diffmn_core::rng;
use diffmn_core::spline::{fit_control_path, ChannelSpline, ControlPath};
use diffmn_core::IrregularSeries;
use diffmn_nn::{gradcheck, Activation, BoundGru, BoundMlp, GruCell, Mlp, Parameterized, Tape, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        pass,
        detail: detail.into(),
    })
}

fn majority(passes: &[bool]) -> bool {
    2 * passes.iter().filter(|&&p| p).count() > passes.len()
}

fn tally(passes: &[bool]) -> String {
    format!("{}/{} seeds", passes.iter().filter(|&&p| p).count(), passes.len())
}

/// One sine pipeline per seed, trained lazily and shared by criteria 4, 7, 9
/// and 11.
struct SineRun {
    cfg: PipelineConfig,
    data: Synthesized,
    ncde: NcdeStage,
    diffusion: Option<DiffusionModel>,
}

#[derive(Default)]
struct Shared {
    sines: Vec<SineRun>,
}

fn sine_config(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.seed = seed;
    cfg.ncde.epochs = 100;
    cfg.resolved().expect("valid sine config")
}

impl Shared {
    fn sine_ncde(&mut self) -> Result<&mut [SineRun]> {
        if self.sines.is_empty() {
            for seed in SEEDS {
                let cfg = sine_config(seed);
                let data = synthesize(&cfg)?;
                let (ae, _) = stage_ae(&cfg, &data.observed)?;
                let ncde = stage_ncde(&cfg, ae, &data.observed)?;
                self.sines.push(SineRun {
                    cfg,
                    data,
                    ncde,
                    diffusion: None,
                });
            }
        }
        Ok(&mut self.sines)
    }

    fn sine_pipelines(&mut self) -> Result<&[SineRun]> {
        for run in self.sine_ncde()? {
            if run.diffusion.is_none() {
                let (model, _) = stage_diffusion(&run.cfg, &run.ncde.imputed, &run.ncde.weights.weights)?;
                run.diffusion = Some(model);
            }
        }
        Ok(&self.sines)
    }
}

impl SineRun {
    fn generate(&self, factor: usize) -> Result<Vec<IrregularSeries>> {
        let diffusion = self
            .diffusion
            .as_ref()
            .ok_or_else(|| anyhow!("diffusion stage not trained"))?;
        Ok(generate(
            &self.ncde.model,
            diffusion,
            &self.ncde.grid,
            self.cfg.generate.n,
            factor,
            self.cfg.seed,
        )?)
    }
}

fn rand_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn project(tape: &mut Tape, y: Var, w: &Tensor) -> diffmn_nn::Result<Var> {
    let w = tape.constant(w.clone());
    let p = tape.mul(y, w)?;
    Ok(tape.sum_all(p))
}

fn criterion_1(_: &mut Shared) -> Result<Outcome> {
    const STEP: f64 = 1e-5;
    let (mut cases, mut worst_layer, mut worst_cde) = (0, 0.0f64, 0.0f64);
    for seed in 0..40u64 {
        let mut rng = rng::stream(seed, 100);

        let widths = [
            rng.random_range(1..5),
            rng.random_range(2..6),
            rng.random_range(2..6),
            rng.random_range(1..4),
        ];
        let mlp = Mlp::xavier(&widths, Activation::Tanh, Activation::Identity, &mut rng);
        let mut inputs: Vec<Tensor> = mlp.parameters().into_iter().map(|(_, t)| t.clone()).collect();
        inputs.push(rand_tensor(&mut rng, &[5, widths[0]]));
        let w = rand_tensor(&mut rng, &[5, widths[3]]);
        let r = gradcheck(
            &inputs,
            |tape, v| {
                let layers = mlp
                    .layers()
                    .iter()
                    .enumerate()
                    .map(|(i, l)| (v[2 * i], v[2 * i + 1], l.activation))
                    .collect();
                let out = BoundMlp::from_vars(layers, widths[0]).forward(tape, v[6])?;
                project(tape, out, &w)
            },
            STEP,
        )?;
        worst_layer = worst_layer.max(r.max_relative_error());

        let (input, hidden) = (rng.random_range(1..4), rng.random_range(2..5));
        let cell = GruCell::xavier(input, hidden, &mut rng);
        let mut inputs: Vec<Tensor> = cell.parameters().into_iter().map(|(_, t)| t.clone()).collect();
        inputs.push(rand_tensor(&mut rng, &[2, hidden]));
        inputs.push(rand_tensor(&mut rng, &[2, input]));
        inputs.push(rand_tensor(&mut rng, &[2, input]));
        let w = rand_tensor(&mut rng, &[2, hidden]);
        let r = gradcheck(
            &inputs,
            |tape, v| {
                let gru = BoundGru::from_vars([v[0], v[1], v[2], v[3]], input, hidden);
                let h = gru.step(tape, v[4], v[5])?;
                let h = gru.step(tape, h, v[6])?;
                project(tape, h, &w)
            },
            STEP,
        )?;
        worst_layer = worst_layer.max(r.max_relative_error());

        let (rows, cols) = (rng.random_range(1..4), rng.random_range(2..7));
        let logits = rand_tensor(&mut rng, &[rows, cols]).map(|x| 4.0 * x);
        let w = rand_tensor(&mut rng, &[rows, cols]);
        let r = gradcheck(
            &[logits],
            |tape, v| {
                let y = tape.softmax(v[0]);
                project(tape, y, &w)
            },
            STEP,
        )?;
        worst_layer = worst_layer.max(r.max_relative_error());
        cases += 3;
    }
    for seed in 0..10u64 {
        worst_cde = worst_cde.max(cde_case(seed)?);
        cases += 1;
    }
    let pass = cases >= 100 && worst_layer < 1e-4 && worst_cde < 1e-3;
    outcome(
        pass,
        format!("{cases} cases, max rel error {worst_layer:.2e} (layers), {worst_cde:.2e} (CDE)"),
    )
}

/// Two tanh experts `2 → 3 → 4` through a 4-knot path with one data channel.
fn cde_case(seed: u64) -> Result<f64> {
    let mut rng = rng::stream(seed, 101);
    let mut inputs = Vec::new();
    for _ in 0..2 {
        inputs.push(rand_tensor(&mut rng, &[2, 3]).map(|x| 0.8 * x));
        inputs.push(rand_tensor(&mut rng, &[3]).map(|x| 0.8 * x));
        inputs.push(rand_tensor(&mut rng, &[3, 4]).map(|x| 0.8 * x));
        inputs.push(rand_tensor(&mut rng, &[4]).map(|x| 0.8 * x));
    }
    inputs.push(rand_tensor(&mut rng, &[1, 2]));
    let probe = rand_tensor(&mut rng, &[1, 2]);
    let mut knots = vec![0.0, rng.random_range(0.15..0.45), rng.random_range(0.55..0.85), 1.0];
    knots.sort_by(f64::total_cmp);
    let values: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mix = rng.random_range(0.1..0.9);
    let path = ControlPath::from_channels(vec![ChannelSpline::fit(&knots, &values)?], knots.clone())?;
    let query = [0.0, knots[1], 0.5 * (knots[1] + knots[2]), knots[2], 1.0];
    let r = gradcheck(
        &inputs,
        |tape, v| {
            let nn = |e: diffmn_core::Error| diffmn_nn::Error::contract(e.to_string());
            let experts = vec![
                vec![(v[0], v[1], Activation::Tanh), (v[2], v[3], Activation::Tanh)],
                vec![(v[4], v[5], Activation::Tanh), (v[6], v[7], Activation::Tanh)],
            ];
            let bank = BoundExperts::fuse(tape, &experts).map_err(nn)?;
            let s = tape.constant(Tensor::matrix(1, 2, vec![mix, 1.0 - mix])?);
            let states =
                cde_integrate(tape, |t, z, dx| bank.field(t, z, s, dx), v[8], &[&path], 4, &query).map_err(nn)?;
            let mut total = None;
            for z in states {
                let p = project(tape, z, &probe)?;
                total = Some(match total {
                    None => p,
                    Some(acc) => tape.add(acc, p)?,
                });
            }
            Ok(total.expect("queries present"))
        },
        1e-5,
    )?;
    Ok(r.max_relative_error())
}

fn criterion_2(_: &mut Shared) -> Result<Outcome> {
    let mut rng = rng::stream(0, 102);
    let (mut knot, mut c1, mut c2, mut natural, mut deriv) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let n = rng.random_range(3..16);
        let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        x.sort_by(f64::total_cmp);
        x.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
        if x.len() < 3 {
            continue;
        }
        let y: Vec<f64> = x.iter().map(|_| rng.random_range(-2.0..2.0)).collect();
        let s = ChannelSpline::<f64>::fit(&x, &y)?;
        for (xi, yi) in x.iter().zip(&y) {
            knot = knot.max((s.eval(*xi) - yi).abs());
        }
        for k in 1..x.len() - 1 {
            let p = s.pieces()[k - 1];
            let h = x[k] - x[k - 1];
            let left_value = ((p.d * h + p.c) * h + p.b) * h + p.a;
            let left_d1 = p.b + 2.0 * p.c * h + 3.0 * p.d * h * h;
            let left_d2 = 2.0 * p.c + 6.0 * p.d * h;
            knot = knot.max((left_value - y[k]).abs());
            c1 = c1.max((left_d1 - s.deriv(x[k])).abs());
            c2 = c2.max((left_d2 - s.second_deriv(x[k])).abs());
        }
        let last = s.pieces()[x.len() - 2];
        let h = x[x.len() - 1] - x[x.len() - 2];
        natural = natural
            .max(s.second_deriv(x[0]).abs())
            .max((2.0 * last.c + 6.0 * last.d * h).abs());
    }
    let x: Vec<f64> = (0..8)
        .map(|i| i as f64 / 7.0 + if i % 2 == 1 { 0.03 } else { 0.0 })
        .collect();
    let y: Vec<f64> = x.iter().map(|_| rng.random_range(-2.0..2.0)).collect();
    let s = ChannelSpline::<f64>::fit(&x, &y)?;
    let h = 1e-6;
    for i in 0..1000 {
        let t = -0.1 + 1.2 * (i as f64 + 0.5) / 1000.0;
        let fd = (s.eval(t + h) - s.eval(t - h)) / (2.0 * h);
        deriv = deriv.max((fd - s.deriv(t)).abs());
    }
    let pass = knot <= 1e-9 && c1 <= 1e-9 && c2 <= 1e-9 && natural <= 1e-6 && deriv <= 1e-6;
    outcome(
        pass,
        format!("knots {knot:.1e}, C1 {c1:.1e}, C2 {c2:.1e}, natural ends {natural:.1e}, deriv vs FD {deriv:.1e}"),
    )
}

/// `z(1)` of `dz/dt = z` from `z(0) = 1` along `X(t) = t` on 4 knots.
fn exponential(substeps: usize) -> Result<f64> {
    let grid = vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
    let path = ControlPath::from_channels(Vec::new(), grid)?;
    let mut tape = Tape::new();
    let z0 = tape.constant(Tensor::matrix(1, 1, vec![1.0])?);
    let states = cde_integrate(&mut tape, |t, z, dx| Ok(t.mul(z, dx)?), z0, &[&path], substeps, &[1.0])?;
    Ok(tape.value(states[0]).item())
}

fn criterion_3(_: &mut Shared) -> Result<Outcome> {
    let e = 1f64.exp();
    let fine = (exponential(4)? - e).abs();
    let coarse = (exponential(2)? - e).abs();
    let (rel, ratio) = (fine / e, coarse / fine);
    outcome(
        rel < 1e-5 && (8.0..=32.0).contains(&ratio),
        format!("relative error {rel:.2e} at 4 substeps, halving ratio {ratio:.1}"),
    )
}

fn criterion_4(shared: &mut Shared) -> Result<Outcome> {
    let mut passes = Vec::new();
    let mut parts = Vec::new();
    for run in shared.sine_ncde()?.iter() {
        let (mut model_se, mut spline_se, mut n) = (0.0, 0.0, 0usize);
        for ((truth, sparse), imputed) in run.data.complete.iter().zip(&run.data.observed).zip(&run.ncde.imputed) {
            let path = fit_control_path::<f64>(sparse)?;
            for (i, &t) in sparse.times().iter().enumerate() {
                for c in 0..sparse.channels() {
                    if sparse.is_observed(i, c) {
                        continue;
                    }
                    model_se += (imputed.values()[i][c] - truth.values()[i][c]).powi(2);
                    spline_se += (path.channel(c).eval(t) - truth.values()[i][c]).powi(2);
                    n += 1;
                }
            }
        }
        let (model, spline) = (model_se / n as f64, spline_se / n as f64);
        passes.push(model <= spline);
        parts.push(format!("seed {}: {model:.4} vs spline {spline:.4}", run.cfg.seed));
    }
    outcome(majority(&passes), format!("{}; {}", tally(&passes), parts.join(", ")))
}

fn criterion_5(_: &mut Shared) -> Result<Outcome> {
    let arms = ["full", "no-moe", "no-decoupled"];
    let (mut passes, mut depth, mut parts) = (Vec::new(), Vec::new(), Vec::new());
    for seed in SEEDS {
        let mut base = PipelineConfig::default();
        base.seed = seed;
        base.dataset.kind = DatasetKind::Mixed;
        base.dataset.drop = 0.5;
        base.dataset.n = 1000;
        base.dataset.holdout = Some(0);
        base.ncde.epochs = 20;
        base.generate.n = 1000;
        let base = base.resolved()?;
        let data = synthesize(&base)?;
        let mut scores = BTreeMap::new();
        for arm in arms {
            let cfg = pipeline::ablation_config(&base, arm)?;
            let trained = pipeline::train_pipeline(&cfg, &data.observed)?;
            let generated = trained.generate(cfg.generate.n, 1, cfg.seed)?;
            let inputs = EvalInputs {
                real: &data.complete,
                generated: &generated,
                holdout: None,
                truth: None,
            };
            let report = pipeline::evaluate(&cfg, &inputs, &[Metric::Mdd, Metric::Kl])?;
            scores.insert(arm, (report.get("mdd").unwrap(), report.get("kl").unwrap()));
        }
        let (full, no_moe, coupled) = (scores["full"], scores["no-moe"], scores["no-decoupled"]);
        passes.push(full.0 < no_moe.0 && full.0 < coupled.0 && full.1 < no_moe.1 && full.1 < coupled.1);
        depth.push(full.0 < no_moe.0);
        parts.push(format!(
            "seed {seed}: mdd/kl full {:.4}/{:.4}, no-moe {:.4}/{:.4}, no-decoupled {:.4}/{:.4}",
            full.0, full.1, no_moe.0, no_moe.1, coupled.0, coupled.1
        ));
    }
    outcome(
        majority(&passes) && majority(&depth),
        format!(
            "ablation {}, 4 experts vs 1×8 layers on MDD {}; {}",
            tally(&passes),
            tally(&depth),
            parts.join("; ")
        ),
    )
}

fn criterion_6(_: &mut Shared) -> Result<Outcome> {
    let cfg = DiffusionConfig {
        iterations: 10_000,
        ..DiffusionConfig::default()
    };
    let schedule = NoiseSchedule::<f64>::linear(cfg.steps, cfg.beta_start, cfg.beta_end)?;
    let mut rng = rng::stream(0, 106);
    let (mu, sd) = ([1.0, -2.0], [0.5, 1.5]);
    let data: Vec<Vec<f64>> = (0..2000)
        .map(|_| {
            (0..2)
                .map(|j| mu[j] + sd[j] * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let (den, _) = train_diffusion(&data, &schedule, &cfg, 1)?;
    let out = sample(&den, &schedule, 2000, &mut rng)?;
    let n = out.len() as f64;
    let (mut gaussian, mut parts) = (true, Vec::new());
    for j in 0..2 {
        let m = out.iter().map(|x| x[j]).sum::<f64>() / n;
        let v = out.iter().map(|x| (x[j] - m).powi(2)).sum::<f64>() / n;
        let se = (m - mu[j]).abs() / (sd[j] / n.sqrt());
        let var_rel = (v - sd[j] * sd[j]).abs() / (sd[j] * sd[j]);
        gaussian &= se <= 3.0 && var_rel <= 0.2;
        parts.push(format!(
            "dim {j}: mean off {se:.2} SE, variance off {:.1}%",
            100.0 * var_rel
        ));
    }

    let target = [1.5, -0.5, 2.0];
    let norm = target.iter().map(|x| x * x).sum::<f64>().sqrt();
    let within = |xs: &[Vec<f64>]| {
        xs.iter()
            .map(|x| x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
            / norm
    };
    let optimal = ancestral_sample(&schedule, 3, 500, &mut rng, |x, t| {
        let ab = schedule.alpha_bar(t);
        Ok(x.iter()
            .enumerate()
            .map(|(i, &v)| (v - ab.sqrt() * target[i % 3]) / (1.0 - ab).sqrt())
            .collect())
    })?;
    let repeated = vec![target.to_vec(); 64];
    let point_cfg = DiffusionConfig {
        iterations: 3000,
        ..DiffusionConfig::default()
    };
    let (den, _) = train_diffusion(&repeated, &schedule, &point_cfg, 4)?;
    let learned = sample(&den, &schedule, 500, &mut rng)?;
    let (opt_far, learned_far) = (within(&optimal), within(&learned));
    parts.push(format!(
        "point mass max distance {opt_far:.3}·‖x*‖ (optimal), {learned_far:.3}·‖x*‖ (trained)"
    ));
    outcome(gaussian && opt_far < 0.1 && learned_far < 0.1, parts.join(", "))
}

fn on_simplex(w: &[f64]) -> bool {
    w.iter().all(|&x| x >= 0.0) && (w.iter().sum::<f64>() - 1.0).abs() <= 1e-6
}

fn criterion_7(shared: &mut Shared) -> Result<Outcome> {
    let (mut routed, mut routed_ok, mut sampled, mut sampled_ok) = (0, 0, 0, 0);
    for run in shared.sine_pipelines()? {
        for s in run.data.observed.iter().chain(&run.data.holdout) {
            routed += 1;
            routed_ok += usize::from(on_simplex(&run.ncde.model.route(s)?.weights));
        }
        let diffusion = run.diffusion.as_ref().expect("trained above");
        for joint in diffusion.generate(1000, run.cfg.seed)? {
            sampled += 1;
            sampled_ok += usize::from(on_simplex(&joint.weights));
        }
    }
    outcome(
        routed_ok == routed && sampled_ok == sampled,
        format!("router {routed_ok}/{routed}, diffusion weight blocks {sampled_ok}/{sampled}"),
    )
}

fn mean_normalized_w1(w1: &[f64; 4], cfg: &PipelineConfig) -> f64 {
    let spec = cfg.dataset.cubic.coefficients();
    (0..4).map(|k| w1[k] / spec[k].std).sum::<f64>() / 4.0
}

fn criterion_8(_: &mut Shared) -> Result<Outcome> {
    let (mut passes, mut parts) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let mut cfg = PipelineConfig::default();
        cfg.seed = seed;
        cfg.dataset.kind = DatasetKind::Cubic;
        cfg.dataset.n = 2500;
        cfg.dataset.holdout = Some(0);
        cfg.ncde.epochs = 10;
        cfg.generate.n = 1000;
        let cfg = cfg.resolved()?;
        let data = synthesize(&cfg)?;
        let trained = pipeline::train_pipeline(&cfg, &data.observed)?;
        let spec = cfg.dataset.cubic.coefficients();
        let draws = cfg.metrics.reference_draws;
        let plain = cubic_recovery(
            &trained.generate(cfg.generate.n, 1, seed)?,
            &cfg.dataset.cubic,
            draws,
            seed,
        )?;
        let refined_samples = trained.generate(cfg.generate.n, 2, seed)?;
        ensure!(
            refined_samples[0].len() == 47,
            "refined length {}",
            refined_samples[0].len()
        );
        let refined = cubic_recovery(&refined_samples, &cfg.dataset.cubic, draws, seed)?;
        let accurate = (0..4).all(|k| plain.mean_error[k] < 0.15 && plain.w1[k] < 0.3 * spec[k].std);
        let (w_plain, w_refined) = (
            mean_normalized_w1(&plain.w1, &cfg),
            mean_normalized_w1(&refined.w1, &cfg),
        );
        passes.push(accurate && w_refined <= w_plain);
        parts.push(format!(
            "seed {seed}: mean error {:.3?}, W1/σ {:.3?}, mean W1/σ refined {w_refined:.4} vs {w_plain:.4}",
            plain.mean_error,
            (0..4).map(|k| plain.w1[k] / spec[k].std).collect::<Vec<_>>(),
        ));
    }
    outcome(majority(&passes), format!("{}; {}", tally(&passes), parts.join("; ")))
}

fn criterion_9(shared: &mut Shared) -> Result<Outcome> {
    let (mut passes, mut parts) = (Vec::new(), Vec::new());
    for run in shared.sine_pipelines()? {
        let mc = &run.cfg.metrics;
        let plain = downstream_forecast(&run.generate(1)?, mc, run.cfg.seed)?;
        let refined = downstream_forecast(&run.generate(2)?, mc, run.cfg.seed)?;
        passes.push(refined.mse <= plain.mse);
        parts.push(format!(
            "seed {}: {:.5} refined vs {:.5}",
            run.cfg.seed, refined.mse, plain.mse
        ));
    }
    outcome(majority(&passes), format!("{}; {}", tally(&passes), parts.join(", ")))
}

fn cli(out: &Path, args: &[&str]) -> Result<()> {
    let output = Command::new(env!("CARGO_BIN_EXE_diffmn"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "error")
        .output()?;
    ensure!(
        output.status.success(),
        "`diffmn {}` failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&output.stderr)
    );
    Ok(())
}

fn snapshot(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        files.insert(
            entry.file_name().to_string_lossy().into_owned(),
            fs::read(entry.path())?,
        );
    }
    Ok(files)
}

fn criterion_10(_: &mut Shared) -> Result<Outcome> {
    let config = "seed = 11\n\n[dataset]\nn = 60\nlength = 16\n\n[autoencoder]\nepochs = 40\n\n\
                  [ncde]\nepochs = 3\n\n[diffusion]\niterations = 300\n\n[generate]\nn = 60\n";
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir()?;
        let out = dir.path();
        let cfg = out.join("acceptance.toml");
        fs::write(&cfg, config)?;
        let cfg = cfg.to_string_lossy().into_owned();
        cli(out, &["--config", &cfg, "synth"])?;
        cli(out, &["--config", &cfg, "train"])?;
        cli(out, &["--config", &cfg, "generate"])?;
        let holdout = out.join(pipeline::HOLDOUT).to_string_lossy().into_owned();
        cli(
            out,
            &[
                "--config",
                &cfg,
                "evaluate",
                "--metrics",
                "ds,mdd,kl,mir",
                "--holdout",
                &holdout,
            ],
        )?;
        runs.push(snapshot(out)?);
    }
    let differing: Vec<&String> = runs[0]
        .iter()
        .filter(|(name, bytes)| runs[1].get(*name) != Some(bytes))
        .map(|(name, _)| name)
        .collect();
    let same_names = runs[0].keys().eq(runs[1].keys());
    outcome(
        same_names && differing.is_empty(),
        if differing.is_empty() {
            format!("{} files byte-identical across two runs", runs[0].len())
        } else {
            format!("differing files: {differing:?}")
        },
    )
}

fn criterion_11(shared: &mut Shared) -> Result<Outcome> {
    let (mut passes, mut parts) = (Vec::new(), Vec::new());
    for run in shared.sine_pipelines()? {
        let generated = run.generate(1)?;
        let ours = mir(&run.data.complete, &run.data.holdout, &generated)?;
        let copy = mir(&run.data.complete, &run.data.holdout, &run.data.complete)?;
        passes.push(ours <= copy - 0.15);
        parts.push(format!("seed {}: {ours:.3} vs copy {copy:.3}", run.cfg.seed));
    }
    outcome(majority(&passes), format!("{}; {}", tally(&passes), parts.join(", ")))
}

type Criterion = (usize, &'static str, fn(&mut Shared) -> Result<Outcome>);

const CRITERIA: [Criterion; 11] = [
    (1, "gradient suite", criterion_1),
    (2, "spline suite", criterion_2),
    (3, "solver order", criterion_3),
    (4, "imputation vs spline", criterion_4),
    (5, "ablation direction", criterion_5),
    (6, "diffusion sanity", criterion_6),
    (7, "simplex contract", criterion_7),
    (8, "cubic recovery", criterion_8),
    (9, "refinement direction", criterion_9),
    (10, "determinism", criterion_10),
    (11, "memorization guard", criterion_11),
];

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let strict = args.iter().any(|a| a == "--strict");
    let selected: Vec<usize> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let mut shared = Shared::default();
    let (mut ran, mut failed) = (0, Vec::new());
    for (id, name, run) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = run(&mut shared);
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match result {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e:#}")),
        };
        ran += 1;
        if !pass {
            failed.push(id.to_string());
        }
        println!(
            "criterion {id} ({name}): {} in {secs:.1}s: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    if failed.is_empty() {
        println!("acceptance: {ran}/{ran} criteria passed");
        return ExitCode::SUCCESS;
    }
    println!(
        "acceptance: {}/{ran} criteria passed, FAILED: {}",
        ran - failed.len(),
        failed.join(", ")
    );
    if strict {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
