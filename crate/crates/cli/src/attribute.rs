use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use fakepcd_core::attribution::{
    report_csv, select_threshold, tune_percentile, verdict_for, AnchorSet, Evaluation, ThresholdPolicy,
};
use fakepcd_core::experiment::{anchors_for, clouds, profiles, truth};
use fakepcd_core::nnet::load_checkpoint;
use fakepcd_core::pcd::{read_point_cloud, Format, PointCloud};
use fakepcd_core::simsource::{read_dataset, Datasets, Split};

use crate::run::{resolve_config, usage, Run};
use crate::Cli;

#[derive(Args, Debug, Clone)]
pub struct AttributeArgs {
    /// Open-stage checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory; needed to build anchors, tune, or attribute a split.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Saved anchor set.
    #[arg(long, conflicts_with = "build_anchors")]
    pub anchors: Option<PathBuf>,
    /// Build an anchor set of N clouds per source from the training split.
    #[arg(long)]
    pub build_anchors: Option<usize>,
    /// Fixed percentile in (0, 100].
    #[arg(long, conflicts_with = "tune")]
    pub percentile: Option<f64>,
    /// Pick the percentile on the validation split.
    #[arg(long)]
    pub tune: bool,
    /// Split of the dataset to attribute when no --input is given.
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Point cloud files (.xyz or .pcda) to attribute instead of a split.
    #[arg(long, num_args = 1..)]
    pub input: Vec<PathBuf>,
}

fn need_data<'a>(data: &'a Option<Datasets>, why: &str) -> Result<&'a Datasets> {
    data.as_ref().ok_or_else(|| usage(format!("--data is required to {why}")))
}

pub fn evaluation_rows(e: &Evaluation) -> String {
    let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.6}"));
    format!(
        "known_accuracy,{}\nunknown_accuracy,{}\naccuracy,{}\nmacro_f1,{}\n",
        fmt(e.known_accuracy),
        fmt(e.unknown_accuracy),
        fmt(e.accuracy),
        fmt(e.macro_f1)
    )
}

pub fn run(cli: &Cli, args: &AttributeArgs, run: &mut Run) -> Result<()> {
    if let Some(p) = args.percentile {
        if !(p > 0.0 && p <= 100.0) {
            return Err(usage(format!("--percentile must lie in (0, 100], got {p}")));
        }
    }
    if args.build_anchors == Some(0) {
        return Err(usage("--build-anchors needs at least one cloud per source"));
    }
    let mut cfg = resolve_config(cli, args.data.as_deref())?;
    if let Some(n) = args.build_anchors {
        cfg.attribution.anchors = n;
    }
    if let Some(p) = args.percentile {
        cfg.attribution.percentile = Some(p);
    } else if args.tune {
        cfg.attribution.percentile = None;
    }
    run.config(&cfg);

    run.input(&args.checkpoint);
    let model = load_checkpoint(&args.checkpoint)?;
    let dim = model
        .embedding_dim()
        .ok_or_else(|| usage("checkpoint has no projection head; attribute needs an open-stage model"))?;
    let data = match &args.data {
        Some(dir) => {
            run.input(dir);
            Some(read_dataset(dir, &cfg.scenario.known)?)
        }
        None => None,
    };
    let known = cfg.scenario.known.clone();

    let anchors = match &args.anchors {
        Some(path) => {
            run.input(path);
            AnchorSet::load(path, known.clone())?
        }
        None => {
            let a = anchors_for(&cfg, &model, need_data(&data, "build anchors")?)?;
            a.save(run.path("anchors.fpcd"))?;
            a
        }
    };
    if anchors.dim() != dim {
        return Err(usage(format!("anchor embeddings have dimension {}, the checkpoint produces {dim}", anchors.dim())));
    }

    let policy = match cfg.attribution.percentile {
        Some(p) => select_threshold(&anchors, p)?,
        None => {
            let val = &need_data(&data, "tune the percentile")?.validation;
            let prof = profiles(&model, &anchors, &clouds(val))?;
            let tune = tune_percentile(&prof, &truth(val), &anchors, &cfg.attribution.grid)?;
            let mut csv = String::from("percentile,threshold,known_accuracy,unknown_accuracy\n");
            for (p, t, k, u) in &tune.table {
                let _ = writeln!(csv, "{p},{t:.9},{k:.6},{u:.6}");
            }
            run.write("tune.csv", &csv)?;
            println!("tuned percentile: {}", tune.percentile);
            ThresholdPolicy { percentile: tune.percentile, threshold: tune.threshold }
        }
    };
    run.result("percentile", policy.percentile);
    run.result("threshold", format!("{:.9}", policy.threshold));

    let (ids, queries, ground): (Vec<String>, Vec<PointCloud>, Option<Vec<Option<usize>>>) = if args.input.is_empty() {
        let samples = need_data(&data, "attribute a split")?.split(args.split);
        let ids = samples.iter().map(|s| s.id.clone()).collect();
        (ids, samples.iter().map(|s| s.cloud.clone()).collect(), Some(truth(samples)))
    } else {
        let mut clouds = Vec::new();
        for path in &args.input {
            run.input(path);
            clouds.push(read_point_cloud(path, Format::Auto)?);
        }
        (args.input.iter().map(|p| p.display().to_string()).collect(), clouds, None)
    };

    let refs: Vec<&PointCloud> = queries.iter().collect();
    let prof = profiles(&model, &anchors, &refs)?;
    let results: Vec<_> = prof
        .into_iter()
        .map(|p| fakepcd_core::attribution::assign_profile(p, &anchors, policy.threshold))
        .collect();
    run.write("report.csv", &report_csv(&ids, &results, &known))?;

    if let Some(truth) = ground {
        let pred: Vec<Option<usize>> = results.iter().map(|r| verdict_for(&r.profile, policy.threshold)).collect();
        let eval = fakepcd_core::attribution::evaluate(&pred, &truth, known.len())?;
        let summary = format!("metric,value\npercentile,{}\nthreshold,{:.9}\n{}", policy.percentile, policy.threshold, evaluation_rows(&eval));
        run.write("summary.csv", &summary)?;
        print!("{}", summary.lines().skip(1).map(|l| l.replace(',', ": ") + "\n").collect::<String>());
        for (k, v) in [("known_accuracy", eval.known_accuracy), ("unknown_accuracy", eval.unknown_accuracy)] {
            if let Some(v) = v {
                run.result(k, format!("{v:.6}"));
            }
        }
    } else {
        println!("attributed {} clouds at threshold {:.6}", ids.len(), policy.threshold);
    }
    Ok(())
}
