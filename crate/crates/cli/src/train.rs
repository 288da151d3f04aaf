use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use fakepcd_core::experiment::{train_closed, train_open};
use fakepcd_core::nnet::{load_checkpoint, save_checkpoint, Model};
use fakepcd_core::simsource::read_dataset;
use fakepcd_core::train::EpochMetrics;

use crate::run::{resolve_config, usage, Run};
use crate::{Cli, StageArg};

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub stage: StageArg,
    /// Dataset directory written by `simulate`.
    #[arg(long)]
    pub data: PathBuf,
    /// Closed-stage checkpoint to initialize the open-stage encoder from.
    #[arg(long)]
    pub init_from: Option<PathBuf>,
    /// Also write `checkpoints/epoch_NNNN.fpcd` every N epochs.
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
}

pub fn run(cli: &Cli, args: &TrainArgs, run: &mut Run) -> Result<()> {
    if args.stage == StageArg::Closed && args.init_from.is_some() {
        return Err(usage("--init-from only applies to --stage open"));
    }
    let cfg = resolve_config(cli, Some(&args.data))?;
    run.config(&cfg);
    run.input(&args.data);
    let data = read_dataset(&args.data, &cfg.scenario.known)?;
    run.write("config.cfg", &cfg.to_text())?;

    let every = args.checkpoint_every;
    let ckpt_dir = if every > 0 { Some(run.subdir("checkpoints")?) } else { None };
    let mut hook = |m: &EpochMetrics, model: &Model| -> fakepcd_core::Result<()> {
        log::debug!("epoch {} loss {:.6} accuracy {:.4}", m.epoch, m.loss, m.accuracy);
        if let Some(dir) = &ckpt_dir {
            if m.epoch % every == 0 {
                save_checkpoint(model, dir.join(format!("epoch_{:04}.fpcd", m.epoch)))?;
            }
        }
        Ok(())
    };

    let stage = match args.stage {
        StageArg::Closed => "closed",
        StageArg::Open => "open",
    };
    let outcome = match args.stage {
        StageArg::Closed => train_closed(&cfg, &data, Some(&mut hook)),
        StageArg::Open => {
            let init = match &args.init_from {
                Some(path) => {
                    run.input(path);
                    Some(load_checkpoint(path)?)
                }
                None => None,
            };
            run.result("init_from", args.init_from.as_ref().map_or("scratch".into(), |p| p.display().to_string()));
            train_open(&cfg, &data, init.as_ref(), Some(&mut hook))
        }
    }
    .with_context(|| format!("{stage}-stage training"))?;

    let mut csv = String::from("epoch,loss,accuracy\n");
    for m in &outcome.metrics {
        let _ = writeln!(csv, "{},{:.9},{:.6}", m.epoch, m.loss, m.accuracy);
    }
    run.write("metrics.csv", &csv)?;
    save_checkpoint(&outcome.model, run.path("model.fpcd"))?;

    run.result("stage", stage);
    run.result("epochs_run", outcome.metrics.len());
    if let Some(e) = outcome.stopped_early_at {
        run.result("stopped_early_at", e);
    }
    if let Some(last) = outcome.metrics.last() {
        run.result("final_loss", format!("{:.9}", last.loss));
        run.result("final_accuracy", format!("{:.6}", last.accuracy));
        println!("{stage} stage: {} epochs, loss {:.4}, accuracy {:.4}", outcome.metrics.len(), last.loss, last.accuracy);
    }
    Ok(())
}
