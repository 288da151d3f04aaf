use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use fakepcd_core::attribution::{evaluate, select_threshold, verdict_for, Evaluation, ThresholdPolicy};
use fakepcd_core::config::PipelineConfig;
use fakepcd_core::experiment::{
    anchors_for, calibrate, clouds, evaluate_open, perturb_samples, profiles, train_closed, train_open, truth, Calibration,
    Perturbation,
};
use fakepcd_core::nnet::{load_checkpoint, save_checkpoint, Model};
use fakepcd_core::rng::derive_seed;
use fakepcd_core::simsource::{build_scenario, read_dataset, Datasets};

use crate::run::{resolve_config, Run};
use crate::Cli;

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    /// Known/unknown accuracy as the percentile varies.
    ThresholdSweep,
    /// Retrain the open stage at several embedding dimensions.
    DimSweep,
    /// Closed-stage initialization against training from scratch.
    Pretrain,
    /// Test-time translation, jitter, rotation and their combination.
    Perturb,
}

#[derive(Args, Debug, Clone)]
pub struct AblateArgs {
    #[arg(value_enum)]
    pub which: Ablation,
    /// Dataset directory; simulated from the configuration when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Reuse a closed-stage checkpoint instead of training one.
    #[arg(long)]
    pub closed: Option<PathBuf>,
    /// Reuse an open-stage checkpoint (threshold-sweep, perturb).
    #[arg(long)]
    pub open: Option<PathBuf>,
    /// Embedding dimensions for dim-sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [32, 64, 128, 256, 512])]
    pub dims: Vec<usize>,
    /// Fixed percentiles for pretrain; the tuned one is added.
    #[arg(long, value_delimiter = ',', default_values_t = [85.0, 90.0, 95.0])]
    pub percentiles: Vec<f64>,
}

fn fmt(v: Option<f64>) -> String {
    v.map_or("NA".into(), |x| format!("{x:.6}"))
}

struct Ctx<'a> {
    cfg: PipelineConfig,
    data: Datasets,
    args: &'a AblateArgs,
}

impl Ctx<'_> {
    fn closed(&self, run: &mut Run) -> Result<Model> {
        if let Some(path) = &self.args.closed {
            run.input(path);
            return Ok(load_checkpoint(path)?);
        }
        log::info!("training closed stage");
        let model = train_closed(&self.cfg, &self.data, None).context("closed-stage training")?.model;
        save_checkpoint(&model, run.path("closed.fpcd"))?;
        Ok(model)
    }

    fn open(&self, run: &mut Run) -> Result<Model> {
        if let Some(path) = &self.args.open {
            run.input(path);
            return Ok(load_checkpoint(path)?);
        }
        let closed = self.closed(run)?;
        log::info!("training open stage");
        let model = train_open(&self.cfg, &self.data, Some(&closed), None).context("open-stage training")?.model;
        save_checkpoint(&model, run.path("open.fpcd"))?;
        Ok(model)
    }
}

fn eval_at(model: &Model, cal: &Calibration, ctx: &Ctx, p: f64) -> Result<(ThresholdPolicy, Evaluation)> {
    let policy = select_threshold(&cal.anchors, p)?;
    let fixed = Calibration { policy: policy.clone(), anchors: cal.anchors.clone(), tune: None };
    Ok((policy, evaluate_open(model, &fixed, &ctx.data.test)?))
}

pub fn run(cli: &Cli, args: &AblateArgs, run: &mut Run) -> Result<()> {
    let cfg = resolve_config(cli, args.data.as_deref())?;
    run.config(&cfg);
    let data = match &args.data {
        Some(dir) => {
            run.input(dir);
            read_dataset(dir, &cfg.scenario.known)?
        }
        None => build_scenario(&cfg.scenario)?,
    };
    let ctx = Ctx { cfg, data, args };
    let mut csv = String::new();
    let name = match args.which {
        Ablation::ThresholdSweep => {
            let model = ctx.open(run)?;
            let anchors = anchors_for(&ctx.cfg, &model, &ctx.data)?;
            let test = &ctx.data.test;
            let prof = profiles(&model, &anchors, &clouds(test))?;
            let gt = truth(test);
            csv.push_str("percentile,threshold,known_accuracy,unknown_accuracy\n");
            for p in (1..=20).map(|i| i as f64 * 5.0) {
                let t = select_threshold(&anchors, p)?.threshold;
                let pred: Vec<Option<usize>> = prof.iter().map(|d| verdict_for(d, t)).collect();
                let e = evaluate(&pred, &gt, anchors.num_sources())?;
                let _ = writeln!(csv, "{p},{t:.9},{},{}", fmt(e.known_accuracy), fmt(e.unknown_accuracy));
            }
            "threshold_sweep.csv"
        }
        Ablation::DimSweep => {
            let closed = ctx.closed(run)?;
            csv.push_str("dim,percentile,threshold,known_accuracy,unknown_accuracy,macro_f1\n");
            for &d in &args.dims {
                let mut cfg = ctx.cfg.clone();
                cfg.model.embedding_dim = d;
                log::info!("open stage at d = {d}");
                let model = train_open(&cfg, &ctx.data, Some(&closed), None).with_context(|| format!("open stage at d = {d}"))?.model;
                let cal = calibrate(&cfg, &model, &ctx.data)?;
                let e = evaluate_open(&model, &cal, &ctx.data.test)?;
                let _ = writeln!(
                    csv,
                    "{d},{},{:.9},{},{},{}",
                    cal.policy.percentile,
                    cal.policy.threshold,
                    fmt(e.known_accuracy),
                    fmt(e.unknown_accuracy),
                    fmt(e.macro_f1)
                );
            }
            "dim_sweep.csv"
        }
        Ablation::Pretrain => {
            let closed = ctx.closed(run)?;
            let init = train_open(&ctx.cfg, &ctx.data, Some(&closed), None).context("open stage from checkpoint")?.model;
            save_checkpoint(&init, run.path("open_init.fpcd"))?;
            let scratch = train_open(&ctx.cfg, &ctx.data, None, None).context("open stage from scratch")?.model;
            save_checkpoint(&scratch, run.path("open_scratch.fpcd"))?;
            let mut tuned_cfg = ctx.cfg.clone();
            tuned_cfg.attribution.percentile = None;
            let cal_init = calibrate(&tuned_cfg, &init, &ctx.data)?;
            let cal_scratch = calibrate(&tuned_cfg, &scratch, &ctx.data)?;
            let mut grid = args.percentiles.clone();
            if !grid.contains(&cal_init.policy.percentile) {
                grid.push(cal_init.policy.percentile);
            }
            csv.push_str("init,percentile,threshold,known_accuracy,unknown_accuracy\n");
            for &p in &grid {
                for (label, model, cal) in [("checkpoint", &init, &cal_init), ("scratch", &scratch, &cal_scratch)] {
                    let (policy, e) = eval_at(model, cal, &ctx, p)?;
                    let _ = writeln!(
                        csv,
                        "{label},{p},{:.9},{},{}",
                        policy.threshold,
                        fmt(e.known_accuracy),
                        fmt(e.unknown_accuracy)
                    );
                }
            }
            "pretrain.csv"
        }
        Ablation::Perturb => {
            let model = ctx.open(run)?;
            let cal = calibrate(&ctx.cfg, &model, &ctx.data)?;
            let base = evaluate_open(&model, &cal, &ctx.data.test)?;
            let (bk, bu) = (base.known_accuracy.unwrap_or(0.0), base.unknown_accuracy.unwrap_or(0.0));
            csv.push_str("perturbation,known_accuracy,unknown_accuracy,delta_known,delta_unknown\n");
            let _ = writeln!(csv, "none,{bk:.6},{bu:.6},0.000000,0.000000");
            for (i, p) in Perturbation::standard_set().into_iter().enumerate() {
                let perturbed = perturb_samples(&ctx.data.test, p, derive_seed(ctx.cfg.attribution.seed, 100 + i as u64))?;
                let e = evaluate_open(&model, &cal, &perturbed)?;
                let (k, u) = (e.known_accuracy.unwrap_or(0.0), e.unknown_accuracy.unwrap_or(0.0));
                let _ = writeln!(csv, "{},{k:.6},{u:.6},{:.6},{:.6}", p.name(), k - bk, u - bu);
            }
            "perturb.csv"
        }
    };
    run.write(name, &csv)?;
    print!("{csv}");
    Ok(())
}
