//! End-to-end runs over a simulated scenario: training both stages,
//! calibrating the threshold, evaluating and perturbing test data.

use rayon::prelude::*;

use crate::attribution::{
    assign_profile, build_anchor_set, evaluate, mean_source_distance, select_threshold, tune_percentile, verdict_for,
    AnchorSet, AttributionResult, DistanceProfile, Evaluation, LogitBaseline, ThresholdPolicy, TuneOutcome,
};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::nnet::{embed_all, init_model, logits_all, Model};
use crate::pcd::{augment, AugmentSpec, Point3, PointCloud, RotationSpec};
use crate::rng::{derive_seed, SeededRng};
use crate::simsource::{Datasets, Sample};
use crate::train::{train_closed_world, train_open_world, EpochHook, LabeledClouds, TrainOutcome};

pub fn clouds(samples: &[Sample]) -> Vec<&PointCloud> {
    samples.iter().map(|s| &s.cloud).collect()
}

/// Ground truth as source index, `None` for Unknown.
pub fn truth(samples: &[Sample]) -> Vec<Option<usize>> {
    samples.iter().map(|s| s.label.index()).collect()
}

fn train_labels(data: &Datasets) -> Result<Vec<usize>> {
    data.train
        .iter()
        .map(|s| s.label.index().ok_or_else(|| Error::Config(format!("training sample {} has no known source", s.id))))
        .collect()
}

pub fn train_closed(cfg: &PipelineConfig, data: &Datasets, hook: Option<EpochHook<'_>>) -> Result<TrainOutcome> {
    let k = data.known_sources.len();
    let model = init_model(&cfg.model.closed_arch(k), cfg.closed.seed)?;
    let labels = train_labels(data)?;
    let cl = clouds(&data.train);
    train_closed_world(LabeledClouds { clouds: &cl, labels: &labels }, model, &cfg.closed, hook)
}

/// Open-stage training, starting from a closed-stage encoder when `init`
/// is given and from scratch otherwise.
pub fn train_open(
    cfg: &PipelineConfig,
    data: &Datasets,
    init: Option<&Model>,
    hook: Option<EpochHook<'_>>,
) -> Result<TrainOutcome> {
    let model = match init {
        Some(closed) => closed.clone().into_open_stage(&cfg.model.projection_widths(), cfg.open.seed)?,
        None => init_model(&cfg.model.open_arch(), cfg.open.seed)?,
    };
    let labels = train_labels(data)?;
    let cl = clouds(&data.train);
    train_open_world(LabeledClouds { clouds: &cl, labels: &labels }, model, &cfg.open, hook)
}

/// Argmax class of each cloud under a closed-stage model.
pub fn closed_predictions(model: &Model, cl: &[&PointCloud]) -> Result<Vec<Option<usize>>> {
    Ok(logits_all(model, cl)?.iter().map(|l| Some(crate::train::argmax(l))).collect())
}

#[derive(Clone, Debug)]
pub struct Calibration {
    pub anchors: AnchorSet,
    pub policy: ThresholdPolicy,
    /// Present when the percentile was tuned on the validation split.
    pub tune: Option<TuneOutcome>,
}

pub fn anchors_for(cfg: &PipelineConfig, model: &Model, data: &Datasets) -> Result<AnchorSet> {
    let emb = embed_all(model, &clouds(&data.train))?;
    build_anchor_set(&emb, &train_labels(data)?, &data.known_sources, cfg.attribution.anchors, cfg.attribution.seed)
}

pub fn profiles(model: &Model, anchors: &AnchorSet, cl: &[&PointCloud]) -> Result<Vec<DistanceProfile>> {
    embed_all(model, cl)?.iter().map(|z| mean_source_distance(z, anchors)).collect()
}

/// Builds anchors from the training split and resolves the threshold: the
/// configured fixed percentile, or the grid percentile tuned on validation.
pub fn calibrate(cfg: &PipelineConfig, model: &Model, data: &Datasets) -> Result<Calibration> {
    let anchors = anchors_for(cfg, model, data)?;
    match cfg.attribution.percentile {
        Some(p) => Ok(Calibration { policy: select_threshold(&anchors, p)?, anchors, tune: None }),
        None => {
            let prof = profiles(model, &anchors, &clouds(&data.validation))?;
            let tune = tune_percentile(&prof, &truth(&data.validation), &anchors, &cfg.attribution.grid)?;
            let policy = ThresholdPolicy { percentile: tune.percentile, threshold: tune.threshold };
            Ok(Calibration { anchors, policy, tune: Some(tune) })
        }
    }
}

pub fn attribute(model: &Model, cal: &Calibration, cl: &[&PointCloud]) -> Result<Vec<AttributionResult>> {
    Ok(profiles(model, &cal.anchors, cl)?
        .into_iter()
        .map(|p| assign_profile(p, &cal.anchors, cal.policy.threshold))
        .collect())
}

pub fn evaluate_open(model: &Model, cal: &Calibration, samples: &[Sample]) -> Result<Evaluation> {
    let pred: Vec<Option<usize>> = profiles(model, &cal.anchors, &clouds(samples))?
        .iter()
        .map(|p| verdict_for(p, cal.policy.threshold))
        .collect();
    evaluate(&pred, &truth(samples), cal.anchors.num_sources())
}

/// Logit-threshold baseline fitted on the training split and evaluated on
/// `samples`.
pub fn evaluate_baseline(closed: &Model, data: &Datasets, samples: &[Sample]) -> Result<(LogitBaseline, Evaluation)> {
    let baseline = LogitBaseline::fit(&logits_all(closed, &clouds(&data.train))?, &train_labels(data)?)?;
    let pred: Vec<Option<usize>> = logits_all(closed, &clouds(samples))?.iter().map(|l| baseline.predict(l)).collect();
    Ok((baseline, evaluate(&pred, &truth(samples), data.known_sources.len())?))
}

/// Test-time perturbations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Perturbation {
    /// Shift by `factor` times the cloud radius along a random unit direction.
    Translate { factor: f64 },
    Jitter { sigma: f64 },
    /// Random angle in `[0, max_angle]` about the z axis.
    Rotate { max_angle: f64 },
    /// A small translation, jitter and rotation together.
    Combined { translation: f64, sigma: f64, max_angle: f64 },
}

impl Perturbation {
    pub fn name(&self) -> &'static str {
        match self {
            Perturbation::Translate { .. } => "translate",
            Perturbation::Jitter { .. } => "jitter",
            Perturbation::Rotate { .. } => "rotate",
            Perturbation::Combined { .. } => "combined",
        }
    }

    /// Translate is ten cloud radii; the others stay within the ranges used
    /// to build training twins.
    pub fn standard_set() -> [Perturbation; 4] {
        [
            Perturbation::Translate { factor: 10.0 },
            Perturbation::Jitter { sigma: 0.005 },
            Perturbation::Rotate { max_angle: 0.2 },
            Perturbation::Combined { translation: 0.05, sigma: 0.005, max_angle: 0.2 },
        ]
    }

    pub fn apply(&self, cloud: &PointCloud, seed: u64) -> Result<PointCloud> {
        let mut rng = SeededRng::new(seed);
        let mut direction = || {
            let d = Point3::new(rng.normal(), rng.normal(), rng.normal());
            d * (1.0 / d.norm())
        };
        let z_only = [false, false, true];
        let spec = match *self {
            Perturbation::Translate { factor } => {
                let t = direction() * (factor * cloud.radius());
                AugmentSpec { translation: t, ..AugmentSpec::identity(seed) }
            }
            Perturbation::Jitter { sigma } => AugmentSpec { jitter_sigma: sigma, ..AugmentSpec::identity(seed) },
            Perturbation::Rotate { max_angle } => {
                AugmentSpec { rotation: RotationSpec::uniform(z_only, max_angle), ..AugmentSpec::identity(seed) }
            }
            Perturbation::Combined { translation, sigma, max_angle } => AugmentSpec {
                translation: direction() * translation,
                jitter_sigma: sigma,
                rotation: RotationSpec::uniform(z_only, max_angle),
                seed,
            },
        };
        augment(cloud, &spec)
    }
}

/// Copies of `samples` with every cloud perturbed; cloud `i` uses a seed
/// derived from `seed` and `i`.
pub fn perturb_samples(samples: &[Sample], p: Perturbation, seed: u64) -> Result<Vec<Sample>> {
    samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let cloud = p.apply(&s.cloud, derive_seed(seed, i as u64))?;
            Ok(Sample { cloud, ..s.clone() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simsource::build_scenario;

    fn tiny() -> (PipelineConfig, Datasets) {
        let mut cfg = PipelineConfig::desk();
        cfg.scenario.clouds_per_cell = 40;
        cfg.scenario.points = 24;
        cfg.model.encoder = vec![3, 8, 16];
        cfg.model.classifier_hidden = vec![16];
        cfg.model.projection_hidden = vec![16];
        cfg.model.embedding_dim = 8;
        cfg.closed.epochs = 2;
        cfg.open.epochs = 2;
        cfg.attribution.anchors = 10;
        let data = build_scenario(&cfg.scenario).unwrap();
        (cfg, data)
    }

    #[test]
    fn pipeline_runs_end_to_end() {
        let (cfg, data) = tiny();
        let closed = train_closed(&cfg, &data, None).unwrap();
        let open = train_open(&cfg, &data, Some(&closed.model), None).unwrap();
        let cal = calibrate(&cfg, &open.model, &data).unwrap();
        assert!(cal.tune.is_some());
        let e = evaluate_open(&open.model, &cal, &data.test).unwrap();
        assert!(e.known_accuracy.is_some() && e.unknown_accuracy.is_some());
        let (_, b) = evaluate_baseline(&closed.model, &data, &data.test).unwrap();
        assert!(b.accuracy.is_some());
        let results = attribute(&open.model, &cal, &clouds(&data.test[..3])).unwrap();
        assert_eq!(results.len(), 3);
        let again = train_open(&cfg, &data, Some(&closed.model), None).unwrap();
        assert_eq!(again.model.tensors(), open.model.tensors());
    }

    #[test]
    fn perturbations_behave() {
        let (_, data) = tiny();
        let c = &data.test[0].cloud;
        let moved = Perturbation::Translate { factor: 10.0 }.apply(c, 1).unwrap();
        let shift = (moved.centroid() - c.centroid()).norm();
        assert!((shift - 10.0 * c.radius()).abs() < 1e-9);
        let rotated = Perturbation::Rotate { max_angle: 0.2 }.apply(c, 1).unwrap();
        for (p, q) in c.points().iter().zip(rotated.points()) {
            assert!((p.z - q.z).abs() < 1e-12);
            assert!(((p.x * p.x + p.y * p.y) - (q.x * q.x + q.y * q.y)).abs() < 1e-12);
        }
        let a = perturb_samples(&data.test[..4], Perturbation::Jitter { sigma: 0.01 }, 3).unwrap();
        let b = perturb_samples(&data.test[..4], Perturbation::Jitter { sigma: 0.01 }, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].cloud, data.test[0].cloud);
    }
}
