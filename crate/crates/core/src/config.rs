//! Flat `key = value` configuration with `[section]` headers.
//!
//! ```text
//! preset = desk
//! [scenario]
//! points = 64
//! source.noisy = surface-noise sigma=0.05 correlation=0.8
//! [open]
//! epochs = 150
//! ```
//!
//! A file starts from the preset named by its top-level `preset` key (desk
//! when absent) and overrides individual values. Unknown keys are errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::attribution::{DEFAULT_ANCHORS, DEFAULT_GRID};
use crate::error::{Error, Result};
use crate::explain::{DEFAULT_MEMBERS, DEFAULT_RESOLUTION};
use crate::nnet::Architecture;
use crate::simsource::{ScenarioConfig, Shape, Signature, SimSourceSpec};
use crate::train::{TrainConfig, TwinAugment};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    pub projection_hidden: Vec<usize>,
    pub embedding_dim: usize,
}

impl ModelConfig {
    pub fn closed_arch(&self, num_classes: usize) -> Architecture {
        let g = *self.encoder.last().expect("encoder widths are validated");
        let mut classifier = vec![g];
        classifier.extend(&self.classifier_hidden);
        classifier.push(num_classes);
        Architecture { encoder: self.encoder.clone(), classifier: Some(classifier), projection: None }
    }

    pub fn projection_widths(&self) -> Vec<usize> {
        let g = *self.encoder.last().expect("encoder widths are validated");
        let mut p = vec![g];
        p.extend(&self.projection_hidden);
        p.push(self.embedding_dim);
        p
    }

    pub fn open_arch(&self) -> Architecture {
        Architecture { encoder: self.encoder.clone(), classifier: None, projection: Some(self.projection_widths()) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributionConfig {
    pub anchors: usize,
    pub grid: Vec<f64>,
    /// Fixed percentile; when absent the grid is searched on validation data.
    pub percentile: Option<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExplainConfig {
    pub resolution: usize,
    pub members: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub preset: String,
    pub scenario: ScenarioConfig,
    pub model: ModelConfig,
    pub closed: TrainConfig,
    pub open: TrainConfig,
    pub attribution: AttributionConfig,
    pub explain: ExplainConfig,
}

fn desk_augment() -> TwinAugment {
    TwinAugment { translation_range: 0.05, jitter_sigma: 0.005, rotation_axes: [false, false, true], max_angle: 0.2 }
}

impl PipelineConfig {
    /// Small models and 64-point clouds; the whole pipeline runs in minutes
    /// on one core.
    pub fn desk() -> Self {
        let closed = TrainConfig {
            epochs: 100,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            temperature: 0.07,
            seed: 1,
            early_stop_patience: Some(20),
            early_stop_min_delta: 1e-4,
            clip_grad_norm: None,
            augment: TwinAugment::NONE,
        };
        let open = TrainConfig {
            epochs: 150,
            learning_rate: 0.05,
            temperature: 0.1,
            seed: 2,
            early_stop_patience: None,
            augment: desk_augment(),
            ..closed.clone()
        };
        Self {
            preset: "desk".into(),
            scenario: ScenarioConfig::desk(),
            model: ModelConfig {
                encoder: vec![3, 32, 64, 128],
                classifier_hidden: vec![512, 256],
                projection_hidden: vec![512],
                embedding_dim: 32,
            },
            closed,
            open,
            attribution: AttributionConfig { anchors: DEFAULT_ANCHORS, grid: DEFAULT_GRID.to_vec(), percentile: None, seed: 3 },
            explain: ExplainConfig { resolution: DEFAULT_RESOLUTION, members: DEFAULT_MEMBERS, seed: 4 },
        }
    }

    /// Full-size network, 2048-point clouds and larger optimizer
    /// settings.
    pub fn full() -> Self {
        let mut c = Self::desk();
        c.preset = "full".into();
        c.scenario.points = 2048;
        c.model = ModelConfig {
            encoder: vec![3, 64, 128, 1024],
            classifier_hidden: vec![512, 256],
            projection_hidden: vec![512],
            embedding_dim: 128,
        };
        c.closed.epochs = 200;
        c.closed.batch_size = 32;
        c.closed.learning_rate = 0.1;
        c.open.epochs = 300;
        c.open.batch_size = 20;
        c.open.learning_rate = 0.1;
        c.open.temperature = 0.07;
        c.open.early_stop_patience = Some(20);
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            other => Err(Error::Config(format!("unknown preset '{other}'"))),
        }
    }

    /// Sets every component seed from one master seed.
    pub fn reseed(&mut self, seed: u64) {
        use crate::rng::derive_seed;
        self.scenario.seed = derive_seed(seed, 1);
        self.closed.seed = derive_seed(seed, 2);
        self.open.seed = derive_seed(seed, 3);
        self.attribution.seed = derive_seed(seed, 4);
        self.explain.seed = derive_seed(seed, 5);
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.closed.validate()?;
        self.open.validate()?;
        if self.open.batch_size < 2 {
            return Err(Error::Config("open.batch_size must be at least 2".into()));
        }
        self.model.closed_arch(self.scenario.known.len()).validate()?;
        self.model.open_arch().validate()?;
        if self.attribution.anchors == 0 {
            return Err(Error::Config("attribution.anchors must be positive".into()));
        }
        for &p in self.attribution.grid.iter().chain(&self.attribution.percentile) {
            if !(p > 0.0 && p <= 100.0) {
                return Err(Error::Config(format!("percentile {p} outside (0, 100]")));
            }
        }
        if self.attribution.grid.is_empty() {
            return Err(Error::Config("attribution.grid is empty".into()));
        }
        if self.explain.resolution < 2 || self.explain.members == 0 {
            return Err(Error::Config("explain.resolution must be >= 2 and explain.members > 0".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let entries = parse_entries(text)?;
        let preset = entries.iter().find(|e| e.key == "preset").map_or("desk", |e| e.value.as_str());
        let mut cfg = Self::preset(preset)?;
        for e in &entries {
            cfg.set(&e.key, &e.value).map_err(|err| match err {
                Error::Config(m) => Error::Config(format!("line {}: {m}", e.line)),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `section.key` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (section, name) = key.split_once('.').unwrap_or(("", key));
        match section {
            "" => match name {
                "preset" => {
                    if value != self.preset {
                        let mut fresh = Self::preset(value)?;
                        fresh.scenario.sources = std::mem::take(&mut self.scenario.sources);
                        *self = Self { preset: value.into(), ..fresh };
                    }
                }
                "seed" => self.reseed(num(key, value)?),
                _ => return Err(unknown(key)),
            },
            "scenario" => set_scenario(&mut self.scenario, key, name, value)?,
            "model" => {
                let m = &mut self.model;
                match name {
                    "encoder" => m.encoder = list(key, value)?,
                    "classifier_hidden" => m.classifier_hidden = list(key, value)?,
                    "projection_hidden" => m.projection_hidden = list(key, value)?,
                    "embedding_dim" => m.embedding_dim = num(key, value)?,
                    _ => return Err(unknown(key)),
                }
            }
            "closed" => set_train(&mut self.closed, key, name, value)?,
            "open" => set_train(&mut self.open, key, name, value)?,
            "attribution" => {
                let a = &mut self.attribution;
                match name {
                    "anchors" => a.anchors = num(key, value)?,
                    "grid" => a.grid = list(key, value)?,
                    "percentile" => a.percentile = optional(key, value)?,
                    "seed" => a.seed = num(key, value)?,
                    _ => return Err(unknown(key)),
                }
            }
            "explain" => {
                let x = &mut self.explain;
                match name {
                    "resolution" => x.resolution = num(key, value)?,
                    "members" => x.members = num(key, value)?,
                    "seed" => x.seed = num(key, value)?,
                    _ => return Err(unknown(key)),
                }
            }
            _ => return Err(unknown(key)),
        }
        Ok(())
    }

    /// Renders every resolved value; parsing the result gives back `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let _ = writeln!(out, "preset = {}", self.preset);
        let s = &self.scenario;
        out.push_str("\n[scenario]\n");
        for src in &s.sources {
            let _ = writeln!(out, "source.{} = {}", src.name, signature_text(&src.signature));
        }
        let names = |v: &[String]| v.join(",");
        let shapes = |v: &[Shape]| v.iter().map(|s| s.name()).collect::<Vec<_>>().join(",");
        let _ = writeln!(out, "known = {}", names(&s.known));
        let _ = writeln!(out, "unknown = {}", names(&s.unknown));
        let _ = writeln!(out, "seen_shapes = {}", shapes(&s.seen_shapes));
        let _ = writeln!(out, "unseen_shapes = {}", shapes(&s.unseen_shapes));
        let _ = writeln!(out, "clouds_per_cell = {}", s.clouds_per_cell);
        let _ = writeln!(out, "points = {}", s.points);
        let _ = writeln!(out, "train_ratio = {}", s.train_ratio);
        let _ = writeln!(out, "validation_size = {}", s.validation_size);
        let _ = writeln!(out, "seed = {}", s.seed);
        let m = &self.model;
        out.push_str("\n[model]\n");
        let _ = writeln!(out, "encoder = {}", join(&m.encoder));
        let _ = writeln!(out, "classifier_hidden = {}", join(&m.classifier_hidden));
        let _ = writeln!(out, "projection_hidden = {}", join(&m.projection_hidden));
        let _ = writeln!(out, "embedding_dim = {}", m.embedding_dim);
        for (name, t) in [("closed", &self.closed), ("open", &self.open)] {
            let _ = writeln!(out, "\n[{name}]");
            let _ = writeln!(out, "epochs = {}", t.epochs);
            let _ = writeln!(out, "batch_size = {}", t.batch_size);
            let _ = writeln!(out, "learning_rate = {}", t.learning_rate);
            let _ = writeln!(out, "momentum = {}", t.momentum);
            let _ = writeln!(out, "temperature = {}", t.temperature);
            let _ = writeln!(out, "seed = {}", t.seed);
            let _ = writeln!(out, "early_stop_patience = {}", opt_text(t.early_stop_patience));
            let _ = writeln!(out, "early_stop_min_delta = {}", t.early_stop_min_delta);
            let _ = writeln!(out, "clip_grad_norm = {}", opt_text(t.clip_grad_norm));
            let a = &t.augment;
            let _ = writeln!(out, "augment.translation = {}", a.translation_range);
            let _ = writeln!(out, "augment.jitter = {}", a.jitter_sigma);
            let axes: String = a.rotation_axes.iter().zip(['x', 'y', 'z']).filter(|(on, _)| **on).map(|(_, c)| c).collect();
            let _ = writeln!(out, "augment.rotation_axes = {}", if axes.is_empty() { "none".into() } else { axes });
            let _ = writeln!(out, "augment.max_angle = {}", a.max_angle);
        }
        let a = &self.attribution;
        out.push_str("\n[attribution]\n");
        let _ = writeln!(out, "anchors = {}", a.anchors);
        let grid: Vec<String> = a.grid.iter().map(f64::to_string).collect();
        let _ = writeln!(out, "grid = {}", grid.join(","));
        let _ = writeln!(out, "percentile = {}", opt_text(a.percentile));
        let _ = writeln!(out, "seed = {}", a.seed);
        let x = &self.explain;
        out.push_str("\n[explain]\n");
        let _ = writeln!(out, "resolution = {}", x.resolution);
        let _ = writeln!(out, "members = {}", x.members);
        let _ = writeln!(out, "seed = {}", x.seed);
        out
    }
}

fn set_scenario(s: &mut ScenarioConfig, key: &str, name: &str, value: &str) -> Result<()> {
    if let Some(src) = name.strip_prefix("source.") {
        let signature = parse_signature(key, value)?;
        match s.sources.iter_mut().find(|x| x.name == src) {
            Some(existing) => existing.signature = signature,
            None => {
                let id = s.sources.iter().map(|x| x.id + 1).max().unwrap_or(0);
                s.sources.push(SimSourceSpec::new(id, src, signature));
            }
        }
        return Ok(());
    }
    let names = |v: &str| -> Vec<String> { v.split(',').map(str::trim).filter(|x| !x.is_empty()).map(String::from).collect() };
    match name {
        "known" => s.known = names(value),
        "unknown" => s.unknown = names(value),
        "seen_shapes" => s.seen_shapes = list(key, value)?,
        "unseen_shapes" => s.unseen_shapes = list(key, value)?,
        "clouds_per_cell" => s.clouds_per_cell = num(key, value)?,
        "points" => s.points = num(key, value)?,
        "train_ratio" => s.train_ratio = num(key, value)?,
        "validation_size" => s.validation_size = num(key, value)?,
        "seed" => s.seed = num(key, value)?,
        _ => return Err(unknown(key)),
    }
    Ok(())
}

fn set_train(t: &mut TrainConfig, key: &str, name: &str, value: &str) -> Result<()> {
    match name {
        "epochs" => t.epochs = num(key, value)?,
        "batch_size" => t.batch_size = num(key, value)?,
        "learning_rate" => t.learning_rate = num(key, value)?,
        "momentum" => t.momentum = num(key, value)?,
        "temperature" => t.temperature = num(key, value)?,
        "seed" => t.seed = num(key, value)?,
        "early_stop_patience" => t.early_stop_patience = optional(key, value)?,
        "early_stop_min_delta" => t.early_stop_min_delta = num(key, value)?,
        "clip_grad_norm" => t.clip_grad_norm = optional(key, value)?,
        "augment.translation" => t.augment.translation_range = num(key, value)?,
        "augment.jitter" => t.augment.jitter_sigma = num(key, value)?,
        "augment.max_angle" => t.augment.max_angle = num(key, value)?,
        "augment.rotation_axes" => {
            let mut axes = [false; 3];
            if value != "none" {
                for c in value.chars() {
                    let i = "xyz".find(c).ok_or_else(|| Error::Config(format!("{key}: bad axis '{c}'")))?;
                    axes[i] = true;
                }
            }
            t.augment.rotation_axes = axes;
        }
        _ => return Err(unknown(key)),
    }
    Ok(())
}

fn signature_text(s: &Signature) -> String {
    match *s {
        Signature::Clean => "clean".into(),
        Signature::GridQuantization { step } => format!("grid-quantization step={step}"),
        Signature::SurfaceNoise { sigma, correlation } => format!("surface-noise sigma={sigma} correlation={correlation}"),
        Signature::DensityBias { axis, exponent } => format!("density-bias axis={axis} exponent={exponent}"),
        Signature::DropoutPatches { count, radius } => format!("dropout-patches count={count} radius={radius}"),
        Signature::Smoothing { iterations } => format!("smoothing iterations={iterations}"),
    }
}

fn parse_signature(key: &str, value: &str) -> Result<Signature> {
    let mut parts = value.split_whitespace();
    let kind = parts.next().ok_or_else(|| Error::Config(format!("{key}: empty signature")))?;
    let mut params = BTreeMap::new();
    for p in parts {
        let (k, v) = p.split_once('=').ok_or_else(|| Error::Config(format!("{key}: expected name=value, got '{p}'")))?;
        params.insert(k, v);
    }
    let mut take = |name: &str| -> Result<&str> {
        params.remove(name).ok_or_else(|| Error::Config(format!("{key}: {kind} needs '{name}'")))
    };
    let sig = match kind {
        "clean" => Signature::Clean,
        "grid-quantization" => Signature::GridQuantization { step: num(key, take("step")?)? },
        "surface-noise" => Signature::SurfaceNoise { sigma: num(key, take("sigma")?)?, correlation: num(key, take("correlation")?)? },
        "density-bias" => Signature::DensityBias { axis: num(key, take("axis")?)?, exponent: num(key, take("exponent")?)? },
        "dropout-patches" => Signature::DropoutPatches { count: num(key, take("count")?)?, radius: num(key, take("radius")?)? },
        "smoothing" => Signature::Smoothing { iterations: num(key, take("iterations")?)? },
        other => return Err(Error::Config(format!("{key}: unknown signature '{other}'"))),
    };
    if let Some(extra) = params.keys().next() {
        return Err(Error::Config(format!("{key}: unexpected parameter '{extra}'")));
    }
    sig.validate()?;
    Ok(sig)
}

fn unknown(key: &str) -> Error {
    Error::Config(format!("unknown config key '{key}'"))
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(str::trim).filter(|v| !v.is_empty()).map(|v| num(key, v)).collect()
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    match value.trim() {
        "none" | "off" => Ok(None),
        v => num(key, v).map(Some),
    }
}

fn opt_text<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "none".into(), |x| x.to_string())
}

struct Entry {
    line: usize,
    key: String,
    value: String,
}

fn parse_entries(text: &str) -> Result<Vec<Entry>> {
    let mut section = String::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::Config(format!("line {}: unterminated section header", i + 1)))?;
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        let key = if section.is_empty() { k.trim().to_string() } else { format!("{section}.{}", k.trim()) };
        out.push(Entry { line: i + 1, key, value: v.trim().to_string() });
    }
    Ok(out)
}
