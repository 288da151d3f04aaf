//! Threshold-based source attribution in embedding space.
//!
//! Each known source is represented by a cluster of anchor embeddings. A
//! query is scored by its mean Euclidean distance to every cluster and is
//! assigned to the closest source, or to Unknown when even the closest
//! cluster is farther than a threshold derived from the clusters' own
//! spread.

mod gmm;
mod metrics;

pub use gmm::{split_unknowns, GmmFit, RIDGE};
pub use metrics::{evaluate, Evaluation};

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::container::{Container, SectionTag};
use crate::error::{Error, Result};
use crate::pcd::SourceLabel;
use crate::rng::{derive_seed, SeededRng};

/// Default number of anchors per known source.
pub const DEFAULT_ANCHORS: usize = 100;

/// Candidate percentiles searched when tuning on a validation split.
pub const DEFAULT_GRID: [f64; 7] = [70.0, 75.0, 80.0, 85.0, 90.0, 95.0, 100.0];

#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet {
    pub sources: Vec<String>,
    /// `anchors[j]` holds the N embeddings of source `j`.
    pub anchors: Vec<Vec<Vec<f64>>>,
    pub centroids: Vec<Vec<f64>>,
    /// Distance of each anchor to its source centroid, in anchor order.
    pub intra: Vec<Vec<f64>>,
    pub seed: u64,
}

impl AnchorSet {
    /// Builds the set from explicit anchors; every source must have the same
    /// nonzero count and all embeddings the same dimension.
    pub fn from_anchors(sources: Vec<String>, anchors: Vec<Vec<Vec<f64>>>, seed: u64) -> Result<Self> {
        if sources.is_empty() || sources.len() != anchors.len() {
            return Err(Error::Argument(format!(
                "{} source names for {} anchor clusters",
                sources.len(),
                anchors.len()
            )));
        }
        let n = anchors[0].len();
        let dim = anchors[0].first().map_or(0, Vec::len);
        if n == 0 || dim == 0 {
            return Err(Error::Argument("anchor clusters must be nonempty".into()));
        }
        for (name, cluster) in sources.iter().zip(&anchors) {
            if cluster.len() != n || cluster.iter().any(|z| z.len() != dim) {
                return Err(Error::Argument(format!("anchor cluster of '{name}' has inconsistent shape")));
            }
        }
        let centroids: Vec<Vec<f64>> = anchors
            .iter()
            .map(|cluster| {
                let mut c = vec![0.0; dim];
                for z in cluster {
                    for (a, v) in c.iter_mut().zip(z) {
                        *a += v;
                    }
                }
                c.iter_mut().for_each(|a| *a /= n as f64);
                c
            })
            .collect();
        let intra = anchors
            .iter()
            .zip(&centroids)
            .map(|(cluster, c)| cluster.iter().map(|z| euclidean(z, c)).collect())
            .collect();
        Ok(Self { sources, anchors, centroids, intra, seed })
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn per_source(&self) -> usize {
        self.anchors[0].len()
    }

    pub fn dim(&self) -> usize {
        self.centroids[0].len()
    }

    pub fn to_container(&self) -> Container {
        Container {
            tag: SectionTag::Anchors,
            dims: vec![self.num_sources() as u32, self.per_source() as u32, self.dim() as u32],
            seed: self.seed,
            values: self.anchors.iter().flatten().flatten().copied().collect(),
        }
    }

    /// Source names are not stored in the container; the caller supplies them
    /// in label order.
    pub fn from_container(c: &Container, sources: Vec<String>) -> Result<Self> {
        if c.tag != SectionTag::Anchors {
            return Err(Error::Load("file holds a model, not an anchor set".into()));
        }
        let [k, n, d] = match c.dims[..] {
            [k, n, d] => [k as usize, n as usize, d as usize],
            _ => return Err(Error::Load(format!("anchor set needs 3 dims, found {}", c.dims.len()))),
        };
        if k * n * d != c.values.len() {
            return Err(Error::Load(format!(
                "anchor shape {k}x{n}x{d} needs {} values but file holds {}",
                k * n * d,
                c.values.len()
            )));
        }
        if sources.len() != k {
            return Err(Error::Load(format!("anchor set has {k} sources but {} names were given", sources.len())));
        }
        let anchors = c
            .values
            .chunks_exact(n * d)
            .map(|cluster| cluster.chunks_exact(d).map(<[f64]>::to_vec).collect())
            .collect();
        Self::from_anchors(sources, anchors, c.seed).map_err(|e| Error::Load(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_container().encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, sources: Vec<String>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_container(&Container::decode(&bytes)?, sources)
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Picks `n` anchors per source uniformly at random from the embedded
/// training data. `labels[i]` is the dense source index of `embeddings[i]`.
pub fn build_anchor_set(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    sources: &[String],
    n: usize,
    seed: u64,
) -> Result<AnchorSet> {
    if embeddings.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} embeddings but {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    if n == 0 {
        return Err(Error::Argument("anchor count must be positive".into()));
    }
    let mut anchors = Vec::with_capacity(sources.len());
    for (j, name) in sources.iter().enumerate() {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == j).collect();
        if members.len() < n {
            return Err(Error::Argument(format!(
                "source '{name}' has {} embedded samples, {n} anchors requested",
                members.len()
            )));
        }
        let mut rng = SeededRng::new(derive_seed(seed, j as u64));
        let picks = rng.sample_indices(members.len(), n);
        anchors.push(picks.into_iter().map(|p| embeddings[members[p]].clone()).collect());
    }
    AnchorSet::from_anchors(sources.to_vec(), anchors, seed)
}

/// Mean distance from a query to each source's anchors.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceProfile {
    pub distances: Vec<f64>,
}

impl DistanceProfile {
    /// Closest source and its distance; ties go to the lowest index.
    pub fn closest(&self) -> (usize, f64) {
        let mut best = (0, self.distances[0]);
        for (j, &d) in self.distances.iter().enumerate().skip(1) {
            if d < best.1 {
                best = (j, d);
            }
        }
        best
    }
}

pub fn mean_source_distance(query: &[f64], anchors: &AnchorSet) -> Result<DistanceProfile> {
    if query.len() != anchors.dim() {
        return Err(Error::Argument(format!(
            "query has dimension {} but anchors have {}",
            query.len(),
            anchors.dim()
        )));
    }
    let distances = anchors
        .anchors
        .iter()
        .map(|cluster| cluster.iter().map(|z| euclidean(query, z)).sum::<f64>() / cluster.len() as f64)
        .collect();
    Ok(DistanceProfile { distances })
}

/// Nearest-rank percentile: the element at 1-based rank `ceil(p/100 * n)`
/// of the ascending sort.
pub fn percentile(seq: &[f64], p: f64) -> Result<f64> {
    if seq.is_empty() {
        return Err(Error::Argument("percentile of an empty sequence".into()));
    }
    check_percentile(p)?;
    let mut sorted = seq.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

fn check_percentile(p: f64) -> Result<()> {
    if p > 0.0 && p <= 100.0 {
        Ok(())
    } else {
        Err(Error::Argument(format!("percentile must be in (0, 100], got {p}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdPolicy {
    pub percentile: f64,
    pub threshold: f64,
}

impl ThresholdPolicy {
    pub const METHOD: &'static str = "unified";
}

/// Unified threshold: the smallest per-source percentile of the
/// anchor-to-centroid distances.
pub fn select_threshold(anchors: &AnchorSet, p: f64) -> Result<ThresholdPolicy> {
    let mut t = f64::INFINITY;
    for seq in &anchors.intra {
        t = t.min(percentile(seq, p)?);
    }
    Ok(ThresholdPolicy { percentile: p, threshold: t })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributionResult {
    pub profile: DistanceProfile,
    pub threshold: f64,
    pub verdict: SourceLabel,
    /// Closest distance minus the threshold; positive means Unknown.
    pub margin: f64,
}

/// Unknown iff every distance exceeds `threshold`, else the closest source.
pub fn verdict_for(profile: &DistanceProfile, threshold: f64) -> Option<usize> {
    let (j, d) = profile.closest();
    (d <= threshold).then_some(j)
}

pub fn assign(query: &[f64], anchors: &AnchorSet, policy: &ThresholdPolicy) -> Result<AttributionResult> {
    let profile = mean_source_distance(query, anchors)?;
    Ok(assign_profile(profile, anchors, policy.threshold))
}

pub fn assign_profile(profile: DistanceProfile, anchors: &AnchorSet, threshold: f64) -> AttributionResult {
    let (_, closest) = profile.closest();
    let verdict = match verdict_for(&profile, threshold) {
        Some(j) => SourceLabel::known(j, anchors.sources[j].clone()),
        None => SourceLabel::Unknown,
    };
    AttributionResult { profile, threshold, verdict, margin: closest - threshold }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneOutcome {
    pub percentile: f64,
    pub threshold: f64,
    /// `(P, threshold, known accuracy, unknown accuracy)` for every grid entry.
    pub table: Vec<(f64, f64, f64, f64)>,
}

/// Chooses the grid percentile maximizing the mean of known and unknown
/// accuracy on labelled validation profiles; ties go to the smaller P.
/// `truth[i]` is the source index of sample `i`, or `None` for Unknown.
pub fn tune_percentile(
    profiles: &[DistanceProfile],
    truth: &[Option<usize>],
    anchors: &AnchorSet,
    grid: &[f64],
) -> Result<TuneOutcome> {
    if profiles.len() != truth.len() {
        return Err(Error::Argument(format!("{} profiles but {} labels", profiles.len(), truth.len())));
    }
    if !truth.iter().any(Option::is_some) || !truth.iter().any(Option::is_none) {
        return Err(Error::Config("validation split needs both known and unknown samples".into()));
    }
    if grid.is_empty() {
        return Err(Error::Config("percentile grid is empty".into()));
    }
    let mut sorted_grid = grid.to_vec();
    sorted_grid.sort_by(f64::total_cmp);
    let mut table = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64, f64)> = None;
    for &p in &sorted_grid {
        let policy = select_threshold(anchors, p)?;
        let pred: Vec<Option<usize>> = profiles.iter().map(|pr| verdict_for(pr, policy.threshold)).collect();
        let eval = evaluate(&pred, truth, anchors.num_sources())?;
        let (ka, ua) = (eval.known_accuracy.unwrap_or(0.0), eval.unknown_accuracy.unwrap_or(0.0));
        table.push((p, policy.threshold, ka, ua));
        let score = 0.5 * (ka + ua);
        if best.is_none_or(|(s, _, _)| score > s) {
            best = Some((score, p, policy.threshold));
        }
    }
    let (_, percentile, threshold) = best.expect("grid is nonempty");
    Ok(TuneOutcome { percentile, threshold, table })
}

/// Closed-world baseline: a query is Unknown when the softmax probability of
/// its predicted class falls below the lowest true-class probability seen
/// on the training data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogitBaseline {
    pub threshold: f64,
}

impl LogitBaseline {
    pub fn fit(train_logits: &[Vec<f64>], labels: &[usize]) -> Result<Self> {
        if train_logits.is_empty() || train_logits.len() != labels.len() {
            return Err(Error::Argument(format!(
                "{} logit rows but {} labels",
                train_logits.len(),
                labels.len()
            )));
        }
        let mut threshold = f64::INFINITY;
        for (logits, &y) in train_logits.iter().zip(labels) {
            let p = softmax(logits);
            let py = *p
                .get(y)
                .ok_or_else(|| Error::Argument(format!("label {y} outside {} classes", p.len())))?;
            threshold = threshold.min(py);
        }
        Ok(Self { threshold })
    }

    pub fn predict(&self, logits: &[f64]) -> Option<usize> {
        let p = softmax(logits);
        let mut best = 0;
        for (j, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = j;
            }
        }
        (p[best] >= self.threshold).then_some(best)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// CSV rows: `id, d_<source>..., threshold, verdict, margin`.
pub fn report_csv(ids: &[String], results: &[AttributionResult], sources: &[String]) -> String {
    let mut out = String::from("id");
    for s in sources {
        out.push_str(",d_");
        out.push_str(s);
    }
    out.push_str(",threshold,verdict,margin\n");
    for (id, r) in ids.iter().zip(results) {
        out.push_str(id);
        for d in &r.profile.distances {
            let _ = write!(out, ",{d:.9}");
        }
        let _ = writeln!(out, ",{:.9},{},{:.9}", r.threshold, r.verdict, r.margin);
    }
    out
}
