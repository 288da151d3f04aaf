//! Shared plumbing: output directory, configuration resolution, run
//! manifests and dispatch.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use fakepcd_core::config::PipelineConfig;
use fakepcd_core::rng::RNG_ALGORITHM;
use fakepcd_core::Error;

use crate::manifest::{list_outputs, with_out, RunManifest};
use crate::{ablate, attribute, explain, simulate, train, Cli, Command};

/// Name of the resolved configuration written next to a simulated dataset.
pub const SCENARIO_CFG: &str = "scenario.cfg";

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Error::Argument(msg.into()).into()
}

/// Configuration precedence: `--seed` over `--config` over the dataset's
/// own `scenario.cfg` over the desk preset.
pub fn resolve_config(cli: &Cli, data: Option<&Path>) -> Result<PipelineConfig> {
    let mut cfg = match (&cli.config, data) {
        (Some(path), _) => PipelineConfig::load(path)?,
        (None, Some(dir)) if dir.join(SCENARIO_CFG).is_file() => PipelineConfig::load(dir.join(SCENARIO_CFG))?,
        _ => PipelineConfig::desk(),
    };
    if let Some(seed) = cli.seed {
        cfg.reseed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

pub struct Run {
    pub out: PathBuf,
    manifest: RunManifest,
    started: Instant,
}

impl Run {
    fn start(cli: &Cli, args: Vec<String>, command: &str) -> Result<Self> {
        let out = cli.out.clone().ok_or_else(|| usage("--out is required"))?;
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        let cwd = std::env::current_dir().map(|p| p.to_string_lossy().into_owned()).unwrap_or_default();
        let started_unix_secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args,
            cwd,
            rng_algorithm: RNG_ALGORITHM.into(),
            started_unix_secs,
            ..Default::default()
        };
        Ok(Self { out, manifest, started: Instant::now() })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    pub fn subdir(&self, rel: &str) -> Result<PathBuf> {
        let dir = self.out.join(rel);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    pub fn write(&self, rel: &str, contents: &str) -> Result<()> {
        let path = self.path(rel);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }

    pub fn config(&mut self, cfg: &PipelineConfig) {
        let seeds = [
            ("scenario", cfg.scenario.seed),
            ("closed", cfg.closed.seed),
            ("open", cfg.open.seed),
            ("attribution", cfg.attribution.seed),
            ("explain", cfg.explain.seed),
        ];
        self.manifest.seeds = seeds.iter().map(|&(k, v)| (k.to_string(), v)).collect();
        self.manifest.config = Some(cfg.to_text());
    }

    pub fn input(&mut self, path: &Path) {
        self.manifest.inputs.push(path.to_string_lossy().into_owned());
    }

    pub fn result(&mut self, key: &str, value: impl Display) {
        self.manifest.results.insert(key.into(), value.to_string());
    }

    fn finish(mut self) -> Result<()> {
        self.manifest.outputs = list_outputs(&self.out)?;
        self.manifest.wall_clock_secs = self.started.elapsed().as_secs_f64();
        let path = self.manifest.save(&self.out)?;
        log::info!("run manifest written to {}", path.display());
        Ok(())
    }
}

pub fn dispatch(cli: Cli, args: Vec<String>) -> Result<()> {
    if let Command::Replay { manifest } = &cli.command {
        return replay(&cli, manifest);
    }
    let name = match &cli.command {
        Command::Simulate => "simulate",
        Command::Train(_) => "train",
        Command::Attribute(_) => "attribute",
        Command::Explain(_) => "explain",
        Command::Ablate(_) => "ablate",
        Command::Replay { .. } => unreachable!(),
    };
    let mut run = Run::start(&cli, args, name)?;
    match &cli.command {
        Command::Simulate => simulate::run(&cli, &mut run)?,
        Command::Train(a) => train::run(&cli, a, &mut run)?,
        Command::Attribute(a) => attribute::run(&cli, a, &mut run)?,
        Command::Explain(a) => explain::run(&cli, a, &mut run)?,
        Command::Ablate(a) => ablate::run(&cli, a, &mut run)?,
        Command::Replay { .. } => unreachable!(),
    }
    run.finish()
}

/// Re-executes the recorded command from its original working directory,
/// writing into the new `--out`.
fn replay(cli: &Cli, manifest: &Path) -> Result<()> {
    let out = cli.out.clone().ok_or_else(|| usage("replay needs --out"))?;
    let out = std::path::absolute(&out).with_context(|| format!("resolving {}", out.display()))?;
    let recorded = RunManifest::load(manifest)?;
    if recorded.args.first().map(String::as_str) == Some("replay") {
        return Err(usage("refusing to replay a replay manifest"));
    }
    let args = with_out(&recorded.args, &out);
    if !recorded.cwd.is_empty() {
        std::env::set_current_dir(&recorded.cwd).with_context(|| format!("entering {}", recorded.cwd))?;
    }
    log::info!("replaying: {}", args.join(" "));
    let argv = std::iter::once(recorded.tool.clone()).chain(args.iter().cloned());
    let replayed = <Cli as clap::Parser>::try_parse_from(argv).map_err(|e| usage(format!("recorded arguments: {e}")))?;
    dispatch(replayed, args)
}
