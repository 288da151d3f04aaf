use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use fakepcd_core::explain::{build_fingerprint, critical_depth_image, critical_points, match_similar, Fingerprint, Plane};
use fakepcd_core::nnet::{encode, load_checkpoint, Model};
use fakepcd_core::pcd::{chamfer_distance, read_point_cloud, Format, PointCloud};
use fakepcd_core::simsource::read_dataset;

use crate::run::{resolve_config, usage, Run};
use crate::Cli;

#[derive(Args, Debug, Clone)]
pub struct ExplainArgs {
    /// Checkpoint whose encoder defines critical points.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Clouds to extract critical points from.
    #[arg(long, num_args = 1..)]
    pub critical: Vec<PathBuf>,
    /// Build a fingerprint from M clouds per source.
    #[arg(long, value_name = "M")]
    pub fingerprint: Option<usize>,
    /// Dataset directory for --fingerprint.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Sources to fingerprint; defaults to every source in the dataset.
    #[arg(long, num_args = 1..)]
    pub source: Vec<String>,
    /// Query cloud for a Chamfer nearest match.
    #[arg(long = "match", value_name = "QUERY")]
    pub query: Option<PathBuf>,
    #[arg(long, num_args = 1..)]
    pub candidates: Vec<PathBuf>,
    /// Fingerprint and depth image resolution (square).
    #[arg(long)]
    pub resolution: Option<usize>,
}

fn stem(path: &Path, i: usize) -> String {
    let s = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    format!("{i:03}_{s}")
}

fn load_model(args: &ExplainArgs, run: &mut Run) -> Result<Model> {
    let path = args.checkpoint.as_ref().ok_or_else(|| usage("--checkpoint is required for critical points and fingerprints"))?;
    run.input(path);
    Ok(load_checkpoint(path)?)
}

pub fn run(cli: &Cli, args: &ExplainArgs, run: &mut Run) -> Result<()> {
    if args.critical.is_empty() && args.fingerprint.is_none() && args.query.is_none() {
        return Err(usage("nothing to do: give --critical, --fingerprint or --match"));
    }
    let cfg = resolve_config(cli, args.data.as_deref())?;
    run.config(&cfg);
    let res = args.resolution.unwrap_or(cfg.explain.resolution);
    if res == 0 {
        return Err(usage("--resolution must be positive"));
    }

    if !args.critical.is_empty() {
        let model = load_model(args, run)?;
        let dir = run.subdir("critical")?;
        let mut summary = String::from("file,points,critical,exact\n");
        for (i, path) in args.critical.iter().enumerate() {
            run.input(path);
            let cloud = read_point_cloud(path, Format::Auto)?;
            let crit = critical_points(&model, &cloud)?;
            let subset = cloud.select(&crit.indices)?;
            let exact = encode(&model, &subset)?.global == encode(&model, &cloud)?.global;
            let mut csv = String::from("index,x,y,z\n");
            for &k in &crit.indices {
                let p = cloud.points()[k];
                let _ = writeln!(csv, "{k},{:.9},{:.9},{:.9}", p.x, p.y, p.z);
            }
            let name = stem(path, i);
            std::fs::write(dir.join(format!("{name}.csv")), csv)?;
            let image = critical_depth_image(&model, &cloud, Plane::Xy, (res, res))?;
            std::fs::write(dir.join(format!("{name}.pgm")), image.to_pgm())?;
            let _ = writeln!(summary, "{},{},{},{}", path.display(), cloud.len(), crit.indices.len(), exact);
            println!("{}: {} of {} points critical, re-encoding exact: {exact}", path.display(), crit.indices.len(), cloud.len());
        }
        run.write("critical/summary.csv", &summary)?;
    }

    if let Some(m) = args.fingerprint {
        let model = load_model(args, run)?;
        let dir_in = args.data.as_ref().ok_or_else(|| usage("--fingerprint needs --data"))?;
        run.input(dir_in);
        let data = read_dataset(dir_in, &cfg.scenario.known)?;
        let present: Vec<String> = cfg
            .scenario
            .sources
            .iter()
            .map(|s| s.name.clone())
            .filter(|name| data.all().any(|s| &s.source == name))
            .collect();
        let sources = if args.source.is_empty() { present.clone() } else { args.source.clone() };
        let dir = run.subdir("fingerprints")?;
        let mut prints: Vec<Fingerprint> = Vec::new();
        for name in &sources {
            let pool: Vec<&PointCloud> = data.all().filter(|s| &s.source == name).map(|s| &s.cloud).collect();
            if pool.is_empty() {
                return Err(usage(format!("source '{name}' not in dataset; available: {}", present.join(", "))));
            }
            let fp = build_fingerprint(&model, &pool, name, m, (res, res), cfg.explain.seed)?;
            std::fs::write(dir.join(format!("{name}.pgm")), fp.to_pgm())?;
            std::fs::write(dir.join(format!("{name}.csv")), fp.to_csv())?;
            prints.push(fp);
        }
        let mut csv = String::from("source_a,source_b,mean_abs_diff\n");
        for i in 0..prints.len() {
            for j in i + 1..prints.len() {
                let _ = writeln!(csv, "{},{},{:.9}", prints[i].source, prints[j].source, prints[i].mean_abs_diff(&prints[j])?);
            }
        }
        run.write("fingerprints/pairwise.csv", &csv)?;
        println!("fingerprints written for {}", sources.join(", "));
    }

    if let Some(query_path) = &args.query {
        if args.candidates.is_empty() {
            return Err(usage("--match needs --candidates"));
        }
        run.input(query_path);
        let query = read_point_cloud(query_path, Format::Auto)?;
        let mut cands = Vec::new();
        for path in &args.candidates {
            run.input(path);
            cands.push(read_point_cloud(path, Format::Auto)?);
        }
        let refs: Vec<&PointCloud> = cands.iter().collect();
        let (best, best_cd) = match_similar(&query, &refs)?;
        let mut csv = String::from("candidate,chamfer,best\n");
        for (i, (path, c)) in args.candidates.iter().zip(&cands).enumerate() {
            let _ = writeln!(csv, "{},{:.9},{}", path.display(), chamfer_distance(&query, c)?, i == best);
        }
        run.write("match.csv", &csv)?;
        run.result("match", args.candidates[best].display());
        println!("closest: {} (Chamfer {best_cd:.6})", args.candidates[best].display());
    }
    Ok(())
}
