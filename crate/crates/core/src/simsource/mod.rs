//! Procedural point cloud sources.
//!
//! A source samples an analytic shape and then applies its artifact
//! signature, a systematic distortion that plays the role of a generative
//! model's bias. Scenarios combine sources and shapes into train,
//! validation and test splits.

mod dataset;
mod shapes;

pub use dataset::{read_dataset, write_dataset, MANIFEST_FILE};

pub use shapes::Shape;

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::pcd::{KdTree, Point3, PointCloud, SourceLabel};
use crate::rng::{derive_seed, SeededRng};

#[derive(Clone, Debug, PartialEq)]
pub enum Signature {
    /// No artifact: stands in for real-world scans.
    Clean,
    /// Coordinates snapped to multiples of `step`.
    GridQuantization { step: f64 },
    /// Gaussian offsets with std `sigma`. `correlation` in [0, 1] is the
    /// share carried by a smooth displacement field fixed per source.
    SurfaceNoise { sigma: f64, correlation: f64 },
    /// Points thinned toward the low end of `axis`; higher exponent, stronger bias.
    DensityBias { axis: usize, exponent: f64 },
    /// `count` random spherical holes of `radius`.
    DropoutPatches { count: usize, radius: f64 },
    /// Laplacian smoothing toward the mean of a fixed-radius neighbourhood.
    Smoothing { iterations: usize },
}

impl Signature {
    pub fn kind(&self) -> &'static str {
        match self {
            Signature::Clean => "clean",
            Signature::GridQuantization { .. } => "grid-quantization",
            Signature::SurfaceNoise { .. } => "surface-noise",
            Signature::DensityBias { .. } => "density-bias",
            Signature::DropoutPatches { .. } => "dropout-patches",
            Signature::Smoothing { .. } => "smoothing",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("{} {what}", self.kind())));
        match *self {
            Signature::Clean => Ok(()),
            Signature::GridQuantization { step } if !(step > 0.0 && step <= 1.0) => bad("step must be in (0, 1]"),
            Signature::SurfaceNoise { sigma, correlation }
                if !((0.0..=0.5).contains(&sigma) && (0.0..=1.0).contains(&correlation)) =>
            {
                bad("needs sigma in [0, 0.5] and correlation in [0, 1]")
            }
            Signature::DensityBias { axis, exponent } if axis > 2 || !(0.0..=8.0).contains(&exponent) => {
                bad("needs axis 0..2 and exponent in [0, 8]")
            }
            Signature::DropoutPatches { count, radius } if !(1..=16).contains(&count) || !(radius > 0.0 && radius <= 1.0) => {
                bad("needs count in 1..16 and radius in (0, 1]")
            }
            Signature::Smoothing { iterations } if !(1..=20).contains(&iterations) => bad("iterations must be in 1..20"),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimSourceSpec {
    pub id: u64,
    pub name: String,
    pub signature: Signature,
}

impl SimSourceSpec {
    pub fn new(id: u64, name: impl Into<String>, signature: Signature) -> Self {
        Self { id, name: name.into(), signature }
    }
}

/// One clean source and five artifact-bearing ones. The last two are the
/// default held-out unknowns.
pub fn default_sources() -> Vec<SimSourceSpec> {
    vec![
        SimSourceSpec::new(0, "real", Signature::Clean),
        SimSourceSpec::new(1, "noisy", Signature::SurfaceNoise { sigma: 0.05, correlation: 0.8 }),
        SimSourceSpec::new(2, "smooth", Signature::Smoothing { iterations: 4 }),
        SimSourceSpec::new(3, "biased", Signature::DensityBias { axis: 0, exponent: 3.0 }),
        SimSourceSpec::new(4, "quantized", Signature::GridQuantization { step: 0.25 }),
        SimSourceSpec::new(5, "patchy", Signature::DropoutPatches { count: 3, radius: 0.35 }),
    ]
}

/// Neighbourhood radius of the smoothing artifact, in unit-sphere units.
const SMOOTHING_RADIUS: f64 = 0.2;

const INSTANCE_STREAM: u64 = 0;
const SURFACE_STREAM: u64 = 1;
const ARTIFACT_STREAM: u64 = 2;

/// `n` points of a random `shape` instance carrying the source's artifacts.
/// The shape instance depends only on `seed`, so two sources given the same
/// seed distort the same object.
pub fn sample_cloud(spec: &SimSourceSpec, shape: Shape, n: usize, seed: u64) -> Result<PointCloud> {
    if n < 8 {
        return Err(Error::Argument(format!("need at least 8 points per cloud, got {n}")));
    }
    sample_with(spec, shape, n, seed, seed)
}

/// `sample_cloud` with the object instance and the surface/artifact draws
/// seeded separately.
fn sample_with(spec: &SimSourceSpec, shape: Shape, n: usize, instance_seed: u64, draw_seed: u64) -> Result<PointCloud> {
    spec.signature.validate()?;
    let instance_rng = SeededRng::with_stream(instance_seed, INSTANCE_STREAM);
    let mut surface_rng = SeededRng::with_stream(draw_seed, SURFACE_STREAM);
    let mut artifact_rng = SeededRng::with_stream(derive_seed(draw_seed, spec.id), ARTIFACT_STREAM);
    let surface = |m: usize, surface_rng: &mut SeededRng| {
        shapes::sample_surface(shape, m, &mut instance_rng.clone(), surface_rng)
    };

    let points = match spec.signature {
        Signature::Clean => surface(n, &mut surface_rng),
        Signature::GridQuantization { step } => surface(n, &mut surface_rng)
            .into_iter()
            .map(|p| Point3::new(snap(p.x, step), snap(p.y, step), snap(p.z, step)))
            .collect(),
        Signature::SurfaceNoise { sigma, correlation } => {
            let field = SmoothField::new(derive_seed(spec.id, 0x5EED));
            let white = (1.0 - correlation * correlation).sqrt();
            surface(n, &mut surface_rng)
                .into_iter()
                .map(|p| {
                    let f = field.at(&p);
                    let w = Point3::new(artifact_rng.normal(), artifact_rng.normal(), artifact_rng.normal());
                    p + (w * white + f * correlation) * sigma
                })
                .collect()
        }
        Signature::DensityBias { axis, exponent } => {
            let cand = surface(8 * n, &mut surface_rng);
            let lo = cand.iter().map(|p| p.coord(axis)).fold(f64::INFINITY, f64::min);
            let hi = cand.iter().map(|p| p.coord(axis)).fold(f64::NEG_INFINITY, f64::max);
            let span = (hi - lo).max(1e-12);
            // Efraimidis-Spirakis weighted sampling without replacement
            let mut keyed: Vec<(f64, usize)> = cand
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let w = ((p.coord(axis) - lo) / span + 0.05).powf(exponent);
                    (artifact_rng.uniform().max(f64::MIN_POSITIVE).ln() / w, i)
                })
                .collect();
            keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut idx: Vec<usize> = keyed[..n].iter().map(|k| k.1).collect();
            idx.sort_unstable();
            idx.into_iter().map(|i| cand[i]).collect()
        }
        Signature::DropoutPatches { count, radius } => {
            // Holes sit at the extreme point along directions fixed per source,
            // so every cloud of a source loses comparable regions.
            let cand = surface(4 * n, &mut surface_rng);
            let mut dir_rng = SeededRng::new(derive_seed(spec.id, 0xD1));
            let centers: Vec<Point3> = (0..count)
                .map(|_| {
                    let d = Point3::new(dir_rng.normal(), dir_rng.normal(), dir_rng.normal());
                    *cand
                        .iter()
                        .max_by(|a, b| a.dot(&d).total_cmp(&b.dot(&d)))
                        .expect("candidate set is nonempty")
                })
                .collect();
            let mut r = radius;
            loop {
                let kept: Vec<Point3> = cand
                    .iter()
                    .copied()
                    .filter(|p| centers.iter().all(|c| p.dist_sq(c) > r * r))
                    .collect();
                if kept.len() >= n {
                    let mut pick = artifact_rng.sample_indices(kept.len(), n);
                    pick.sort_unstable();
                    break pick.into_iter().map(|i| kept[i]).collect();
                }
                r *= 0.8;
            }
        }
        Signature::Smoothing { iterations } => {
            let mut pts = surface(n, &mut surface_rng);
            for _ in 0..iterations {
                pts = laplacian_step(&pts, SMOOTHING_RADIUS);
            }
            pts
        }
    };
    Ok(PointCloud::new(points)?.with_shape(shape.name()))
}

fn snap(v: f64, step: f64) -> f64 {
    (v / step).round() * step
}

/// Random smooth vector field: a sum of a few sinusoids per component with
/// roughly unit variance.
struct SmoothField {
    waves: Vec<([f64; 3], f64, usize, f64)>,
}

impl SmoothField {
    fn new(seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        let waves = (0..9)
            .map(|i| {
                let dir = [rng.normal(), rng.normal(), rng.normal()];
                let phase = rng.range(0.0, std::f64::consts::TAU);
                (dir.map(|d| 2.5 * d), phase, i % 3, (2.0f64 / 3.0).sqrt())
            })
            .collect();
        Self { waves }
    }

    fn at(&self, p: &Point3) -> Point3 {
        let mut out = [0.0; 3];
        for (w, phase, comp, amp) in &self.waves {
            let arg = w[0] * p.x + w[1] * p.y + w[2] * p.z + phase;
            out[*comp] += amp * arg.sin();
        }
        Point3::from(out)
    }
}

fn laplacian_step(pts: &[Point3], radius: f64) -> Vec<Point3> {
    let r2 = radius * radius;
    pts.iter()
        .map(|p| {
            let (sum, count) = pts
                .iter()
                .filter(|q| p.dist_sq(q) <= r2)
                .fold((Point3::ORIGIN, 0usize), |(s, c), q| (s + *q, c + 1));
            *p * 0.5 + sum * (0.5 / count as f64)
        })
        .collect()
}

/// Nearest-neighbour distance from each point of `a` to `b`; used by tests
/// and diagnostics.
pub fn nn_distances(a: &[Point3], b: &[Point3]) -> Vec<f64> {
    let tree = KdTree::build(b);
    a.iter().map(|p| tree.nearest(p).1.sqrt()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Argument(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `<source>/<shape>_<index>`, unique within a scenario.
    pub id: String,
    pub source: String,
    pub shape: Shape,
    pub index: usize,
    pub split: Split,
    /// Dense known label, or `Unknown` for held-out sources.
    pub label: SourceLabel,
    pub cloud: PointCloud,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub sources: Vec<SimSourceSpec>,
    pub known: Vec<String>,
    pub unknown: Vec<String>,
    pub seen_shapes: Vec<Shape>,
    pub unseen_shapes: Vec<Shape>,
    pub clouds_per_cell: usize,
    pub points: usize,
    pub train_ratio: f64,
    pub validation_size: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    /// Desk-scale open-world scenario: four known sources, two unknown,
    /// one shape, 200 clouds of 64 points per source.
    pub fn desk() -> Self {
        Self {
            sources: default_sources(),
            known: ["real", "noisy", "smooth", "biased"].map(String::from).to_vec(),
            unknown: ["quantized", "patchy"].map(String::from).to_vec(),
            seen_shapes: vec![Shape::Airplane],
            unseen_shapes: vec![],
            clouds_per_cell: 200,
            points: 64,
            train_ratio: 0.6,
            validation_size: 100,
            seed: 7,
        }
    }

    pub fn source(&self, name: &str) -> Result<&SimSourceSpec> {
        self.sources
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Argument(format!("unknown source '{name}'")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.known.is_empty() {
            return Err(Error::Config("scenario needs at least one known source".into()));
        }
        let known: BTreeSet<&String> = self.known.iter().collect();
        let unknown: BTreeSet<&String> = self.unknown.iter().collect();
        if known.len() != self.known.len() || unknown.len() != self.unknown.len() {
            return Err(Error::Config("source listed twice".into()));
        }
        if let Some(s) = known.intersection(&unknown).next() {
            return Err(Error::Config(format!("source '{s}' is both known and unknown")));
        }
        let seen: BTreeSet<&Shape> = self.seen_shapes.iter().collect();
        if let Some(s) = self.unseen_shapes.iter().find(|s| seen.contains(s)) {
            return Err(Error::Config(format!("shape '{s}' is both seen and unseen")));
        }
        if self.seen_shapes.is_empty() {
            return Err(Error::Config("scenario needs at least one seen shape".into()));
        }
        for name in self.known.iter().chain(&self.unknown) {
            self.source(name)?.signature.validate()?;
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(Error::Config("train_ratio must be in (0, 1)".into()));
        }
        let n_train = self.train_count();
        if n_train < 1 || self.clouds_per_cell - n_train < 1 {
            return Err(Error::Config(format!(
                "{} clouds per cell cannot be split at ratio {}",
                self.clouds_per_cell, self.train_ratio
            )));
        }
        if self.points < 8 {
            return Err(Error::Config("points per cloud must be at least 8".into()));
        }
        Ok(())
    }

    fn train_count(&self) -> usize {
        (self.clouds_per_cell as f64 * self.train_ratio).round() as usize
    }

    fn label_for(&self, source: &str) -> SourceLabel {
        match self.known.iter().position(|k| k == source) {
            Some(i) => SourceLabel::known(i, source),
            None => SourceLabel::Unknown,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Datasets {
    pub known_sources: Vec<String>,
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Datasets {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &Sample> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }
}

/// Seed of cloud `index` of (`source`, `shape`) in a scenario.
pub fn cloud_seed(scenario_seed: u64, shape: Shape, index: usize) -> u64 {
    derive_seed(derive_seed(scenario_seed, shape as u64 + 1), index as u64)
}

/// Generates every cell and splits it.
///
/// Each (source, shape) cell is split `train_ratio` / rest into train and
/// test. Unknown sources and unseen shapes keep only their test part. A
/// validation set of `validation_size` samples (at most a quarter of the
/// pool) is carved out of the seen-shape test samples, allocated to cells in
/// proportion to their size.
pub fn build_scenario(cfg: &ScenarioConfig) -> Result<Datasets> {
    cfg.validate()?;
    let n_train = cfg.train_count();
    let mut train = Vec::new();
    let mut test_cells: Vec<Vec<Sample>> = Vec::new();
    let mut unseen_test = Vec::new();

    let shapes: Vec<(Shape, bool)> = cfg
        .seen_shapes
        .iter()
        .map(|&s| (s, true))
        .chain(cfg.unseen_shapes.iter().map(|&s| (s, false)))
        .collect();
    for name in cfg.known.iter().chain(&cfg.unknown) {
        let spec = cfg.source(name)?;
        let label = cfg.label_for(name);
        let is_known = !label.is_unknown();
        for &(shape, seen) in &shapes {
            let mut cell = Vec::new();
            let mut order: Vec<usize> = (0..cfg.clouds_per_cell).collect();
            SeededRng::new(derive_seed(cfg.seed, 0xC0FFEE ^ (spec.id << 8) ^ shape as u64)).shuffle(&mut order);
            for (pos, &index) in order.iter().enumerate() {
                let split = if pos < n_train { Split::Train } else { Split::Test };
                if split == Split::Train && !(is_known && seen) {
                    continue;
                }
                let cloud = sample_cloud(spec, shape, cfg.points, cloud_seed(cfg.seed, shape, index))?
                    .with_label(label.clone());
                let sample = Sample {
                    id: format!("{name}/{shape}_{index:04}"),
                    source: name.clone(),
                    shape,
                    index,
                    split,
                    label: label.clone(),
                    cloud,
                };
                match (split, seen) {
                    (Split::Train, _) => train.push(sample),
                    (_, true) => cell.push(sample),
                    (_, false) => unseen_test.push(sample),
                }
            }
            if seen {
                test_cells.push(cell);
            }
        }
    }

    let pool: usize = test_cells.iter().map(Vec::len).sum();
    let v_total = cfg.validation_size.min(pool / 4);
    let quotas = largest_remainder(&test_cells.iter().map(Vec::len).collect::<Vec<_>>(), v_total);
    let mut validation = Vec::new();
    let mut test = Vec::new();
    let mut rng = SeededRng::new(derive_seed(cfg.seed, 0x7A11));
    for (cell, quota) in test_cells.into_iter().zip(quotas) {
        let picks: BTreeSet<usize> = rng.sample_indices(cell.len(), quota).into_iter().collect();
        for (i, mut s) in cell.into_iter().enumerate() {
            if picks.contains(&i) {
                s.split = Split::Validation;
                validation.push(s);
            } else {
                test.push(s);
            }
        }
    }
    test.extend(unseen_test);
    for set in [&mut train, &mut validation, &mut test] {
        set.sort_by(|a, b| a.id.cmp(&b.id));
    }
    Ok(Datasets { known_sources: cfg.known.clone(), train, validation, test })
}

fn largest_remainder(sizes: &[usize], total: usize) -> Vec<usize> {
    let pool: usize = sizes.iter().sum();
    if pool == 0 {
        return vec![0; sizes.len()];
    }
    let mut quotas: Vec<usize> = sizes.iter().map(|s| s * total / pool).collect();
    let mut rema: Vec<(usize, usize)> = sizes.iter().enumerate().map(|(i, s)| (s * total % pool, i)).collect();
    rema.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let missing = total - quotas.iter().sum::<usize>();
    for &(_, i) in rema.iter().take(missing) {
        quotas[i] += 1;
    }
    quotas
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pcd::chamfer_distance;

    #[test]
    fn quantized_coordinates_are_grid_multiples() {
        let spec = SimSourceSpec::new(9, "q", Signature::GridQuantization { step: 0.05 });
        let c = sample_cloud(&spec, Shape::Car, 200, 3).unwrap();
        for p in c.points() {
            for v in p.to_array() {
                let k = (v / 0.05).round();
                assert!((v - k * 0.05).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        for spec in default_sources() {
            let a = sample_cloud(&spec, Shape::Chair, 64, 11).unwrap();
            assert_eq!(a, sample_cloud(&spec, Shape::Chair, 64, 11).unwrap());
            assert_eq!(a.len(), 64);
            assert_ne!(a, sample_cloud(&spec, Shape::Chair, 64, 12).unwrap());
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let spec = &default_sources()[0];
        assert!(sample_cloud(spec, Shape::Car, 4, 0).is_err());
        let bad = SimSourceSpec::new(1, "b", Signature::Smoothing { iterations: 0 });
        assert!(sample_cloud(&bad, Shape::Car, 64, 0).is_err());
        assert!("boat".parse::<Shape>().is_err());
    }

    #[test]
    fn sources_are_separable_by_chamfer() {
        // Same object under two sources vs. resampling the same source.
        let sources = default_sources();
        let n = 1024;
        for seed in [1u64, 2, 3] {
            let resample_spread: Vec<f64> = sources
                .iter()
                .map(|s| {
                    let cds: Vec<f64> = (0..6)
                        .map(|k| {
                            let a = sample_cloud(s, Shape::Airplane, n, seed).unwrap();
                            let b = resample(s, Shape::Airplane, n, seed, k + 1);
                            chamfer_distance(&a, &b).unwrap()
                        })
                        .collect();
                    std_dev(&cds)
                })
                .collect();
            for i in 0..sources.len() {
                for j in i + 1..sources.len() {
                    let a = sample_cloud(&sources[i], Shape::Airplane, n, seed).unwrap();
                    let b = sample_cloud(&sources[j], Shape::Airplane, n, seed).unwrap();
                    let cd = chamfer_distance(&a, &b).unwrap();
                    let spread = resample_spread[i].max(resample_spread[j]);
                    assert!(cd > 10.0 * spread, "{} vs {}: cd {cd} spread {spread}", sources[i].name, sources[j].name);
                }
            }
        }
    }

    /// Same instance and source, different surface and artifact draws.
    fn resample(spec: &SimSourceSpec, shape: Shape, n: usize, seed: u64, k: u64) -> PointCloud {
        sample_with(spec, shape, n, seed, derive_seed(seed, 0xAB00 + k)).unwrap()
    }

    fn std_dev(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    }

    #[test]
    fn scenario_splits() {
        let mut cfg = ScenarioConfig::desk();
        cfg.clouds_per_cell = 200;
        cfg.points = 16;
        cfg.unseen_shapes = vec![Shape::Bench];
        let d = build_scenario(&cfg).unwrap();
        for name in &cfg.known {
            let tr = d.train.iter().filter(|s| &s.source == name && s.shape == Shape::Airplane).count();
            assert_eq!(tr, 120);
            let te = d
                .validation
                .iter()
                .chain(&d.test)
                .filter(|s| &s.source == name && s.shape == Shape::Airplane)
                .count();
            assert_eq!(te, 80);
        }
        assert!(d.train.iter().all(|s| !s.label.is_unknown()));
        assert!(d.train.iter().all(|s| s.shape != Shape::Bench));
        assert!(d.test.iter().any(|s| s.shape == Shape::Bench));
        assert!(d.validation.iter().all(|s| s.shape != Shape::Bench));
        assert_eq!(d.validation.len(), 100);
        assert!(d.validation.iter().any(|s| s.label.is_unknown()));
        assert!(d.validation.iter().any(|s| !s.label.is_unknown()));
        let ids: BTreeSet<&String> = d.all().map(|s| &s.id).collect();
        assert_eq!(ids.len(), d.train.len() + d.validation.len() + d.test.len());
        assert_eq!(d, build_scenario(&cfg).unwrap());
    }

    #[test]
    fn scenario_rejects_bad_configs() {
        let mut cfg = ScenarioConfig::desk();
        cfg.unknown.push("real".into());
        assert!(matches!(build_scenario(&cfg), Err(Error::Config(_))));
        let mut cfg = ScenarioConfig::desk();
        cfg.clouds_per_cell = 1;
        assert!(matches!(build_scenario(&cfg), Err(Error::Config(_))));
        let mut cfg = ScenarioConfig::desk();
        cfg.unseen_shapes = vec![Shape::Airplane];
        assert!(build_scenario(&cfg).is_err());
    }
}
