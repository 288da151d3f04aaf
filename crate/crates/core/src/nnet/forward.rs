use super::{Architecture, Model};
use crate::error::{Error, Result};
use crate::pcd::{Point3, PointCloud};

use rayon::prelude::*;

/// Everything the backward pass needs from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub(crate) arch: Architecture,
    pub n_points: usize,
    /// Per-point activations of each encoder layer, `n x width`, row-major.
    /// Index 0 holds the input coordinates; the last entry is the pre-pool
    /// feature map.
    pub encoder_acts: Vec<Vec<f64>>,
    /// Point index attaining the max of each channel (lowest index on ties).
    pub argmax: Vec<usize>,
    pub global: Vec<f64>,
    /// Classifier activations; index 0 is the global feature, last the logits.
    pub classifier_acts: Option<Vec<Vec<f64>>>,
    /// Projection activations before normalization.
    pub projection_acts: Option<Vec<Vec<f64>>>,
    /// L2-normalized projection output.
    pub embedding: Option<Vec<f64>>,
}

impl ForwardTrace {
    pub fn feature_map(&self) -> &[f64] {
        self.encoder_acts.last().unwrap()
    }

    pub fn global_dim(&self) -> usize {
        self.global.len()
    }

    pub fn logits(&self) -> Option<&[f64]> {
        self.classifier_acts
            .as_ref()
            .map(|a| a.last().unwrap().as_slice())
    }

    pub fn embedding(&self) -> Option<&[f64]> {
        self.embedding.as_deref()
    }
}

pub fn encode(model: &Model, cloud: &PointCloud) -> Result<ForwardTrace> {
    encode_points(model, cloud.points())
}

/// Unit-norm embeddings of many clouds, computed in parallel.
pub fn embed_all(model: &Model, clouds: &[&PointCloud]) -> Result<Vec<Vec<f64>>> {
    if model.projection.is_none() {
        return Err(Error::Argument("model has no projection head".into()));
    }
    clouds
        .par_iter()
        .map(|c| encode(model, c).map(|t| t.embedding.expect("projection head present")))
        .collect()
}

/// Classifier logits of many clouds, computed in parallel.
pub fn logits_all(model: &Model, clouds: &[&PointCloud]) -> Result<Vec<Vec<f64>>> {
    if model.classifier.is_none() {
        return Err(Error::Argument("model has no classifier head".into()));
    }
    clouds
        .par_iter()
        .map(|c| encode(model, c).map(|t| t.logits().expect("classifier head present").to_vec()))
        .collect()
}

pub fn encode_points(model: &Model, points: &[Point3]) -> Result<ForwardTrace> {
    if points.is_empty() {
        return Err(Error::Argument("cannot encode an empty cloud".into()));
    }
    let n = points.len();
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(model.encoder.layers.len() + 1);
    acts.push(points.iter().flat_map(|p| p.to_array()).collect());
    for (li, layer) in model.encoder.layers.iter().enumerate() {
        let (w_in, w_out) = (layer.spec.in_dim, layer.spec.out_dim);
        let input = acts.last().unwrap();
        let mut out = vec![0.0; n * w_out];
        for (x, o) in input.chunks_exact(w_in).zip(out.chunks_exact_mut(w_out)) {
            layer.forward_row(x, o);
        }
        check_finite(&out, || format!("encoder layer {li}"))?;
        acts.push(out);
    }

    let fmap = acts.last().unwrap();
    let g = model.arch.global_dim();
    let mut global = fmap[..g].to_vec();
    let mut argmax = vec![0usize; g];
    for (i, row) in fmap.chunks_exact(g).enumerate().skip(1) {
        for c in 0..g {
            // strict comparison keeps the lowest index on ties
            if row[c] > global[c] {
                global[c] = row[c];
                argmax[c] = i;
            }
        }
    }

    let classifier_acts = match &model.classifier {
        Some(head) => {
            let a = head.forward_all(&global);
            check_finite(a.last().unwrap(), || "classifier output".into())?;
            Some(a)
        }
        None => None,
    };
    let (projection_acts, embedding) = match &model.projection {
        Some(head) => {
            let a = head.forward_all(&global);
            let u = a.last().unwrap();
            check_finite(u, || "projection output".into())?;
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::Numeric(format!(
                    "projection output has norm {norm}; cannot normalize"
                )));
            }
            let z = u.iter().map(|v| v / norm).collect();
            (Some(a), Some(z))
        }
        None => (None, None),
    };

    Ok(ForwardTrace {
        arch: model.arch.clone(),
        n_points: n,
        encoder_acts: acts,
        argmax,
        global,
        classifier_acts,
        projection_acts,
        embedding,
    })
}

fn check_finite(values: &[f64], layer: impl FnOnce() -> String) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite activation in {}", layer())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{init_model, Architecture};
    use crate::rng::SeededRng;

    fn random_points(n: usize, rng: &mut SeededRng) -> Vec<Point3> {
        (0..n)
            .map(|_| Point3::new(rng.normal(), rng.normal(), rng.normal()))
            .collect()
    }

    fn toy_arch() -> Architecture {
        Architecture {
            encoder: vec![3, 16, 24, 32],
            classifier: Some(vec![32, 16, 4]),
            projection: Some(vec![32, 16, 8]),
        }
    }

    #[test]
    fn global_is_channel_max_of_feature_map() {
        let mut rng = SeededRng::new(1);
        let model = init_model(&toy_arch(), 3).unwrap();
        let pts = random_points(64, &mut rng);
        let t = encode_points(&model, &pts).unwrap();
        let g = t.global_dim();
        for c in 0..g {
            let col: Vec<f64> = (0..64).map(|i| t.feature_map()[i * g + c]).collect();
            let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(t.global[c], max);
            let first = col.iter().position(|&v| v == max).unwrap();
            assert_eq!(t.argmax[c], first);
            assert_eq!(t.feature_map()[t.argmax[c] * g + c], t.global[c]);
        }
    }

    #[test]
    fn permutation_invariant() {
        let mut rng = SeededRng::new(2);
        let model = init_model(&toy_arch(), 4).unwrap();
        let pts = random_points(50, &mut rng);
        let mut perm = pts.clone();
        rng.shuffle(&mut perm);
        let a = encode_points(&model, &pts).unwrap();
        let b = encode_points(&model, &perm).unwrap();
        assert_eq!(a.global, b.global);
        assert_eq!(a.logits(), b.logits());
        assert_eq!(a.embedding(), b.embedding());
    }

    #[test]
    fn single_point_global_equals_point_feature() {
        let model = init_model(&toy_arch(), 4).unwrap();
        let t = encode_points(&model, &[Point3::new(0.1, 0.2, 0.3)]).unwrap();
        assert_eq!(t.global, t.feature_map());
        assert!(t.argmax.iter().all(|&i| i == 0));
    }

    #[test]
    fn embedding_has_unit_norm() {
        let mut rng = SeededRng::new(3);
        let model = init_model(&toy_arch(), 5).unwrap();
        for _ in 0..20 {
            let t = encode_points(&model, &random_points(10, &mut rng)).unwrap();
            let n: f64 = t.embedding().unwrap().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn non_finite_activation_is_reported() {
        let mut model = init_model(&toy_arch(), 5).unwrap();
        model.encoder.layers[1].bias[0] = f64::INFINITY;
        match encode_points(&model, &[Point3::ORIGIN]) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("encoder layer 1")),
            other => panic!("{other:?}"),
        }
    }
}
