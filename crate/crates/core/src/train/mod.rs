//! Close-world (cross-entropy) and open-world (supervised contrastive)
//! training.

mod loss;
mod optim;

pub use loss::{cross_entropy_loss, supcon_loss};
pub use optim::Sgd;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nnet::{backward, encode, Gradients, Model, Upstream};
use crate::pcd::{augment, AugmentSpec, Point3, PointCloud, RotationSpec};
use crate::rng::{derive_seed, SeededRng};

/// Random augmentation applied to build the twin of each training cloud.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwinAugment {
    /// Offsets are uniform in `[-r, r]` per axis.
    pub translation_range: f64,
    pub jitter_sigma: f64,
    pub rotation_axes: [bool; 3],
    /// Angles are uniform in `[0, max_angle]`.
    pub max_angle: f64,
}

impl TwinAugment {
    pub const NONE: TwinAugment = TwinAugment {
        translation_range: 0.0,
        jitter_sigma: 0.0,
        rotation_axes: [false; 3],
        max_angle: 0.0,
    };

    pub fn spec(&self, seed: u64) -> AugmentSpec {
        let mut rng = SeededRng::new(seed);
        let r = self.translation_range;
        let translation = if r > 0.0 {
            Point3::new(rng.range(-r, r), rng.range(-r, r), rng.range(-r, r))
        } else {
            Point3::ORIGIN
        };
        AugmentSpec {
            translation,
            jitter_sigma: self.jitter_sigma,
            rotation: RotationSpec::uniform(self.rotation_axes, self.max_angle),
            seed: rng.next_u64(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub temperature: f64,
    pub seed: u64,
    /// Stop after this many epochs without a `min_delta` improvement of the
    /// mean epoch loss.
    pub early_stop_patience: Option<usize>,
    pub early_stop_min_delta: f64,
    /// Rescale the batch gradient to at most this L2 norm.
    pub clip_grad_norm: Option<f64>,
    pub augment: TwinAugment,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub metrics: Vec<EpochMetrics>,
    /// Epoch (1-based) at which early stopping fired, if it did.
    pub stopped_early_at: Option<usize>,
}

/// Clouds with dense class labels `0..K`.
#[derive(Clone, Copy, Debug)]
pub struct LabeledClouds<'a> {
    pub clouds: &'a [&'a PointCloud],
    pub labels: &'a [usize],
}

impl LabeledClouds<'_> {
    fn check(&self) -> Result<usize> {
        if self.clouds.is_empty() {
            return Err(Error::Argument("training set is empty".into()));
        }
        if self.clouds.len() != self.labels.len() {
            return Err(Error::Argument("clouds and labels differ in length".into()));
        }
        Ok(self.labels.iter().max().unwrap() + 1)
    }
}

/// Called after every epoch with the epoch metrics and current parameters.
pub type EpochHook<'a> = &'a mut dyn FnMut(&EpochMetrics, &Model) -> Result<()>;

struct EarlyStop {
    best: f64,
    waited: usize,
}

impl EarlyStop {
    fn should_stop(&mut self, loss: f64, cfg: &TrainConfig) -> bool {
        let Some(patience) = cfg.early_stop_patience else {
            return false;
        };
        if loss < self.best - cfg.early_stop_min_delta {
            self.best = loss;
            self.waited = 0;
        } else {
            self.waited += 1;
        }
        self.waited >= patience
    }
}

/// Mini-batch SGD with momentum on mean cross-entropy.
pub fn train_closed_world(
    data: LabeledClouds<'_>,
    mut model: Model,
    cfg: &TrainConfig,
    on_epoch: Option<EpochHook<'_>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let k = data.check()?;
    match model.num_classes() {
        Some(out) if out >= k => {}
        other => {
            return Err(Error::Argument(format!(
                "model classifier has {other:?} outputs but data has {k} classes"
            )))
        }
    }
    let mut hook = on_epoch;
    let mut opt = Sgd::new(&model, cfg.learning_rate, cfg.momentum);
    let mut rng = SeededRng::with_stream(cfg.seed, 11);
    let mut order: Vec<usize> = (0..data.clouds.len()).collect();
    let mut metrics = Vec::new();
    let mut stopper = EarlyStop { best: f64::INFINITY, waited: 0 };
    let mut stopped = None;

    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<Result<(f64, bool, Gradients)>> = batch
                .par_iter()
                .map(|&i| {
                    let trace = encode(&model, data.clouds[i])?;
                    let logits = trace.logits().unwrap();
                    let (l, g) = cross_entropy_loss(logits, data.labels[i])?;
                    let hit = argmax(logits) == data.labels[i];
                    let grads = backward(&model, &trace, Upstream { logits: Some(&g), embedding: None })?;
                    Ok((l, hit, grads))
                })
                .collect();
            let mut total: Option<Gradients> = None;
            for r in results {
                let (l, hit, g) = r?;
                loss_sum += l;
                correct += hit as usize;
                match total.as_mut() {
                    Some(t) => t.accumulate(&g),
                    None => total = Some(g),
                }
            }
            let mut total = total.unwrap();
            total.scale(1.0 / batch.len() as f64);
            apply(&mut opt, &mut model, &mut total, cfg, epoch)?;
        }
        let m = EpochMetrics {
            epoch,
            loss: loss_sum / order.len() as f64,
            accuracy: correct as f64 / order.len() as f64,
        };
        if !m.loss.is_finite() {
            return Err(Error::Numeric(format!("training diverged at epoch {epoch}")));
        }
        metrics.push(m);
        if let Some(h) = hook.as_mut() {
            h(&m, &model)?;
        }
        if stopper.should_stop(m.loss, cfg) {
            stopped = Some(epoch);
            break;
        }
    }
    Ok(TrainOutcome { model, metrics, stopped_early_at: stopped })
}

/// Supervised contrastive training of the encoder and projection head.
///
/// Each step pairs every batch cloud with an augmented twin. Twins are
/// embedded by a frozen copy of the network (the parameters at the start
/// of the step) and receive no gradient; originals go through the trainable
/// copy. The loss is the contrastive objective over all `2B` embeddings,
/// divided by `2B`.
pub fn train_open_world(
    data: LabeledClouds<'_>,
    mut model: Model,
    cfg: &TrainConfig,
    on_epoch: Option<EpochHook<'_>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.check()?;
    if cfg.batch_size < 2 {
        return Err(Error::Config("contrastive training needs batch_size >= 2".into()));
    }
    if model.projection.is_none() {
        return Err(Error::Argument("open-world training needs a projection head".into()));
    }
    let mut hook = on_epoch;
    let mut opt = Sgd::new(&model, cfg.learning_rate, cfg.momentum);
    let mut rng = SeededRng::with_stream(cfg.seed, 12);
    let mut metrics = Vec::new();
    let mut stopper = EarlyStop { best: f64::INFINITY, waited: 0 };
    let mut stopped = None;

    for epoch in 1..=cfg.epochs {
        let batches = stratified_batches(data.labels, cfg.batch_size, &mut rng);
        let (mut loss_sum, mut hits, mut seen) = (0.0, 0usize, 0usize);
        for (step, batch) in batches.iter().enumerate() {
            let step_seed = derive_seed(cfg.seed, ((epoch as u64) << 32) | step as u64);
            let frozen = &model;
            let twins: Vec<Result<Vec<f64>>> = batch
                .par_iter()
                .enumerate()
                .map(|(slot, &i)| {
                    let spec = cfg.augment.spec(derive_seed(step_seed, slot as u64));
                    let twin = augment(data.clouds[i], &spec)?;
                    Ok(encode(frozen, &twin)?.embedding.unwrap())
                })
                .collect();
            let traces: Vec<Result<_>> = batch
                .par_iter()
                .map(|&i| encode(&model, data.clouds[i]))
                .collect();

            let b = batch.len();
            let mut embeddings = Vec::with_capacity(2 * b);
            let mut trace_list = Vec::with_capacity(b);
            for t in traces {
                let t = t?;
                embeddings.push(t.embedding.clone().unwrap());
                trace_list.push(t);
            }
            for t in twins {
                embeddings.push(t?);
            }
            let labels: Vec<usize> = batch.iter().chain(batch.iter()).map(|&i| data.labels[i]).collect();
            let (loss, d_emb) = supcon_loss(&embeddings, &labels, cfg.temperature)?;
            let norm = 1.0 / (2 * b) as f64;
            loss_sum += loss * norm * b as f64;
            seen += b;
            hits += retrieval_hits(&embeddings[..b], &embeddings, &labels);

            let grads: Vec<Result<Gradients>> = trace_list
                .par_iter()
                .zip(d_emb[..b].par_iter())
                .map(|(t, d)| {
                    let scaled: Vec<f64> = d.iter().map(|v| v * norm).collect();
                    backward(&model, t, Upstream { logits: None, embedding: Some(&scaled) })
                })
                .collect();
            let mut total: Option<Gradients> = None;
            for g in grads {
                let g = g?;
                match total.as_mut() {
                    Some(t) => t.accumulate(&g),
                    None => total = Some(g),
                }
            }
            apply(&mut opt, &mut model, total.as_mut().unwrap(), cfg, epoch)?;
        }
        let m = EpochMetrics {
            epoch,
            loss: loss_sum / seen as f64,
            accuracy: hits as f64 / seen as f64,
        };
        if !m.loss.is_finite() {
            return Err(Error::Numeric(format!("training diverged at epoch {epoch}")));
        }
        metrics.push(m);
        if let Some(h) = hook.as_mut() {
            h(&m, &model)?;
        }
        if stopper.should_stop(m.loss, cfg) {
            stopped = Some(epoch);
            break;
        }
    }
    Ok(TrainOutcome { model, metrics, stopped_early_at: stopped })
}

fn apply(opt: &mut Sgd, model: &mut Model, grads: &mut Gradients, cfg: &TrainConfig, epoch: usize) -> Result<()> {
    if let Some(max) = cfg.clip_grad_norm {
        let n = grads.norm();
        if n > max {
            grads.scale(max / n);
        }
    }
    opt.step(model, grads);
    if !model.all_finite() {
        return Err(Error::Numeric(format!("parameters became non-finite at epoch {epoch}")));
    }
    Ok(())
}

/// Count of `queries` whose most similar other embedding shares their label.
fn retrieval_hits(queries: &[Vec<f64>], all: &[Vec<f64>], labels: &[usize]) -> usize {
    queries
        .iter()
        .enumerate()
        .filter(|(qi, q)| {
            let best = (0..all.len())
                .filter(|&j| j != *qi)
                .max_by(|&a, &b| {
                    let sa: f64 = q.iter().zip(&all[a]).map(|(x, y)| x * y).sum();
                    let sb: f64 = q.iter().zip(&all[b]).map(|(x, y)| x * y).sum();
                    sa.total_cmp(&sb).then(b.cmp(&a))
                })
                .unwrap();
            labels[best] == labels[*qi]
        })
        .count()
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Splits one epoch into batches that each draw from every class.
///
/// Each class is shuffled, the classes are interleaved round-robin, and the
/// sequence is cut into batches. A trailing batch smaller than 2 is folded
/// into the previous one.
pub fn stratified_batches(labels: &[usize], batch_size: usize, rng: &mut SeededRng) -> Vec<Vec<usize>> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        per_class[l].push(i);
    }
    for c in &mut per_class {
        rng.shuffle(c);
    }
    let mut seq = Vec::with_capacity(labels.len());
    let longest = per_class.iter().map(Vec::len).max().unwrap_or(0);
    for r in 0..longest {
        for c in &per_class {
            if let Some(&i) = c.get(r) {
                seq.push(i);
            }
        }
    }
    let mut batches: Vec<Vec<usize>> = seq.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().unwrap().len() < 2 {
        let tail = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(tail);
    }
    batches
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{init_model, Architecture};

    fn cfg() -> TrainConfig {
        TrainConfig {
            epochs: 1,
            batch_size: 1,
            learning_rate: 0.1,
            momentum: 0.0,
            temperature: 0.07,
            seed: 0,
            early_stop_patience: None,
            early_stop_min_delta: 1e-4,
            clip_grad_norm: None,
            augment: TwinAugment::NONE,
        }
    }

    #[test]
    fn single_step_matches_hand_computation() {
        // One encoder layer 3->2 (identity), one classifier layer 2->2.
        let arch = Architecture { encoder: vec![3, 2], classifier: Some(vec![2, 2]), projection: None };
        let model = init_model(&arch, 5).unwrap();
        let p = [0.5, -1.0, 2.0];
        let cloud = PointCloud::new(vec![Point3::from(p)]).unwrap();
        let label = 1;

        let w1 = &model.encoder.layers[0].weight; // 3x2
        let w2 = &model.classifier.as_ref().unwrap().layers[0].weight; // 2x2
        let h: Vec<f64> = (0..2).map(|j| (0..3).map(|k| p[k] * w1[k * 2 + j]).sum()).collect();
        let logits: Vec<f64> = (0..2).map(|j| (0..2).map(|k| h[k] * w2[k * 2 + j]).sum()).collect();
        let m = logits[0].max(logits[1]);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s = e[0] + e[1];
        let dlog = [e[0] / s, e[1] / s - 1.0];
        let dh: Vec<f64> = (0..2).map(|k| (0..2).map(|j| w2[k * 2 + j] * dlog[j]).sum()).collect();

        let mut want = model.clone();
        for k in 0..3 {
            for j in 0..2 {
                want.encoder.layers[0].weight[k * 2 + j] -= 0.1 * p[k] * dh[j];
            }
        }
        for j in 0..2 {
            want.encoder.layers[0].bias[j] -= 0.1 * dh[j];
        }
        let cls = want.classifier.as_mut().unwrap();
        for k in 0..2 {
            for j in 0..2 {
                cls.layers[0].weight[k * 2 + j] -= 0.1 * h[k] * dlog[j];
            }
        }
        for j in 0..2 {
            cls.layers[0].bias[j] -= 0.1 * dlog[j];
        }

        let clouds = [&cloud];
        let out = train_closed_world(LabeledClouds { clouds: &clouds, labels: &[label] }, model, &cfg(), None).unwrap();
        for (a, b) in out.model.tensors().iter().zip(want.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-14, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn stratified_batches_cover_every_class() {
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let mut rng = SeededRng::new(3);
        let batches = stratified_batches(&labels, 8, &mut rng);
        assert_eq!(batches.len(), 5);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
        for b in &batches {
            for c in 0..4 {
                assert!(b.iter().any(|&i| labels[i] == c));
            }
        }
        let odd = stratified_batches(&[0, 0, 1, 1, 0], 2, &mut rng);
        assert!(odd.iter().all(|b| b.len() >= 2));
    }

    #[test]
    fn identity_twins_give_finite_loss() {
        let arch = Architecture::desk(2).without_classifier();
        let model = init_model(&arch, 1).unwrap();
        let mut rng = SeededRng::new(2);
        let clouds: Vec<PointCloud> = (0..4)
            .map(|_| PointCloud::new((0..16).map(|_| Point3::new(rng.normal(), rng.normal(), rng.normal())).collect()).unwrap())
            .collect();
        let refs: Vec<&PointCloud> = clouds.iter().collect();
        let mut c = cfg();
        c.batch_size = 4;
        let out = train_open_world(LabeledClouds { clouds: &refs, labels: &[0, 1, 0, 1] }, model, &c, None).unwrap();
        assert!(out.metrics[0].loss.is_finite());
    }

    #[test]
    fn rejects_bad_configs() {
        let model = init_model(&Architecture::desk(2).without_classifier(), 1).unwrap();
        let cloud = PointCloud::new(vec![Point3::ORIGIN]).unwrap();
        let clouds = [&cloud, &cloud];
        let data = LabeledClouds { clouds: &clouds, labels: &[0, 0] };
        let mut c = cfg();
        c.batch_size = 1;
        assert!(matches!(train_open_world(data, model.clone(), &c, None), Err(Error::Config(_))));
        let empty: [&PointCloud; 0] = [];
        let data = LabeledClouds { clouds: &empty, labels: &[] };
        assert!(matches!(train_closed_world(data, model, &cfg(), None), Err(Error::Argument(_))));
    }
}
