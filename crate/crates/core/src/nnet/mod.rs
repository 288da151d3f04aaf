//! Permutation-invariant point encoder with classifier and projection heads.
//!
//! The encoder applies the same affine + ReLU stack to every point and
//! max-pools each channel over the points. The classifier head maps the
//! pooled feature to `K` logits; the projection head maps it to a unit-norm
//! embedding. All parameters are `f64`.

mod backward;
mod checkpoint;
mod forward;

pub use backward::{backward, DenseGrad, Gradients, Upstream};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use forward::{embed_all, encode, encode_points, logits_all, ForwardTrace};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

/// Affine layer. `weight` is `in_dim x out_dim`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub spec: LayerSpec,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn init(spec: LayerSpec, rng: &mut SeededRng) -> Self {
        let bound = (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt();
        let weight = (0..spec.in_dim * spec.out_dim)
            .map(|_| rng.range(-bound, bound))
            .collect();
        Self {
            spec,
            weight,
            bias: vec![0.0; spec.out_dim],
        }
    }

    /// `out = act(x W + b)` for one row.
    #[inline]
    pub(crate) fn forward_row(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        let width = self.spec.out_dim;
        for (k, &xk) in x.iter().enumerate() {
            if xk == 0.0 {
                continue;
            }
            let row = &self.weight[k * width..(k + 1) * width];
            for (o, w) in out.iter_mut().zip(row) {
                *o += xk * w;
            }
        }
        if self.spec.activation == Activation::Relu {
            for o in out.iter_mut() {
                if *o < 0.0 {
                    *o = 0.0;
                }
            }
        }
    }
}

/// A chain of dense layers with ReLU between them and `last` after the final one.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    fn init(widths: &[usize], last: Activation, rng: &mut SeededRng) -> Self {
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let spec = LayerSpec {
                    in_dim: widths[i],
                    out_dim: widths[i + 1],
                    activation: if i + 1 == n { last } else { Activation::Relu },
                };
                Dense::init(spec, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.spec.out_dim).unwrap_or(0)
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.in_dim()];
        w.extend(self.layers.iter().map(|l| l.spec.out_dim));
        w
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Runs a single vector through the stack, returning every activation
    /// (index 0 is the input).
    pub(crate) fn forward_all(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        for layer in &self.layers {
            let mut out = vec![0.0; layer.spec.out_dim];
            layer.forward_row(acts.last().unwrap(), &mut out);
            acts.push(out);
        }
        acts
    }
}

/// Layer widths of the three networks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    /// Per-point widths, starting at 3 and ending at the global feature size.
    pub encoder: Vec<usize>,
    /// `[g, hidden.., K]`, or `None` when the model has no classifier.
    pub classifier: Option<Vec<usize>>,
    /// `[g, hidden.., d]`, or `None` when the model has no projection head.
    pub projection: Option<Vec<usize>>,
}

impl Architecture {
    /// Full-size network: 3-64-128-1024 encoder, (512, 256, K) classifier,
    /// (512, 128) projection.
    pub fn full(num_classes: usize) -> Self {
        Self {
            encoder: vec![3, 64, 128, 1024],
            classifier: Some(vec![1024, 512, 256, num_classes]),
            projection: Some(vec![1024, 512, 128]),
        }
    }

    /// Reduced encoder for desk-scale runs: 3-32-64-128, embedding size 32.
    pub fn desk(num_classes: usize) -> Self {
        Self {
            encoder: vec![3, 32, 64, 128],
            classifier: Some(vec![128, 512, 256, num_classes]),
            projection: Some(vec![128, 512, 32]),
        }
    }

    pub fn global_dim(&self) -> usize {
        *self.encoder.last().unwrap_or(&0)
    }

    pub fn with_embedding_dim(mut self, d: usize) -> Self {
        if let Some(p) = self.projection.as_mut() {
            *p.last_mut().unwrap() = d;
        }
        self
    }

    pub fn without_projection(mut self) -> Self {
        self.projection = None;
        self
    }

    pub fn without_classifier(mut self) -> Self {
        self.classifier = None;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let enc = &self.encoder;
        if enc.len() < 2 || enc[0] != 3 {
            return Err(Error::Argument(format!(
                "encoder widths must start at 3 and have at least one layer, got {enc:?}"
            )));
        }
        let g = self.global_dim();
        for (name, widths) in [("classifier", &self.classifier), ("projection", &self.projection)] {
            if let Some(w) = widths {
                if w.len() < 2 || w[0] != g {
                    return Err(Error::Argument(format!(
                        "{name} widths {w:?} do not chain from global feature size {g}"
                    )));
                }
            }
        }
        let all = enc
            .iter()
            .chain(self.classifier.iter().flatten())
            .chain(self.projection.iter().flatten());
        if all.clone().any(|&w| w == 0) {
            return Err(Error::Argument("layer widths must be at least 1".into()));
        }
        if let Some(p) = &self.projection {
            if *p.last().unwrap() < 2 {
                return Err(Error::Argument("embedding dimension must be at least 2".into()));
            }
        }
        Ok(())
    }

    /// Flat u32 layout used in checkpoint headers: each network as a length
    /// followed by its widths (length 0 for an absent head).
    pub fn to_dims(&self) -> Vec<u32> {
        let mut out = Vec::new();
        for w in [Some(&self.encoder), self.classifier.as_ref(), self.projection.as_ref()] {
            match w {
                Some(w) => {
                    out.push(w.len() as u32);
                    out.extend(w.iter().map(|&x| x as u32));
                }
                None => out.push(0),
            }
        }
        out
    }

    pub fn from_dims(dims: &[u32]) -> Result<Self> {
        let mut it = dims.iter().map(|&d| d as usize);
        let mut take = || -> Result<Option<Vec<usize>>> {
            let len = it
                .next()
                .ok_or_else(|| Error::Load("architecture header truncated".into()))?;
            if len == 0 {
                return Ok(None);
            }
            let w: Vec<usize> = it.by_ref().take(len).collect();
            if w.len() != len {
                return Err(Error::Load("architecture header truncated".into()));
            }
            Ok(Some(w))
        };
        let encoder = take()?.ok_or_else(|| Error::Load("checkpoint has no encoder".into()))?;
        let classifier = take()?;
        let projection = take()?;
        let arch = Architecture {
            encoder,
            classifier,
            projection,
        };
        arch.validate().map_err(|e| Error::Load(e.to_string()))?;
        Ok(arch)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Closed,
    Open,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Closed => "closed",
            Stage::Open => "open",
        })
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closed" => Ok(Stage::Closed),
            "open" => Ok(Stage::Open),
            other => Err(Error::Argument(format!("unknown stage '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub arch: Architecture,
    pub encoder: Mlp,
    pub classifier: Option<Mlp>,
    pub projection: Option<Mlp>,
    pub stage: Stage,
    /// Seed the parameters were initialized from.
    pub seed: u64,
}

const ENCODER_STREAM: u64 = 0;
const CLASSIFIER_STREAM: u64 = 1;
const PROJECTION_STREAM: u64 = 2;

/// Scaled-uniform weights (bound `sqrt(6 / (in + out))`), zero biases.
/// Each network draws from its own stream, so re-initializing one head never
/// disturbs the others.
pub fn init_model(arch: &Architecture, seed: u64) -> Result<Model> {
    arch.validate()?;
    // The last per-point layer has no ReLU so pooled channels can go negative
    // and argmax ties stay rare.
    let encoder = Mlp::init(
        &arch.encoder,
        Activation::Identity,
        &mut SeededRng::with_stream(seed, ENCODER_STREAM),
    );
    let classifier = arch.classifier.as_ref().map(|w| {
        Mlp::init(w, Activation::Identity, &mut SeededRng::with_stream(seed, CLASSIFIER_STREAM))
    });
    let projection = arch.projection.as_ref().map(|w| {
        Mlp::init(w, Activation::Identity, &mut SeededRng::with_stream(seed, PROJECTION_STREAM))
    });
    Ok(Model {
        arch: arch.clone(),
        encoder,
        classifier,
        projection,
        stage: Stage::Closed,
        seed,
    })
}

impl Model {
    pub fn num_classes(&self) -> Option<usize> {
        self.classifier.as_ref().map(Mlp::out_dim)
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.projection.as_ref().map(Mlp::out_dim)
    }

    /// Open-stage model seeded from a closed-stage one: the encoder is kept,
    /// the classifier dropped, and a fresh projection head initialized.
    pub fn into_open_stage(self, projection_widths: &[usize], seed: u64) -> Result<Model> {
        let arch = Architecture {
            encoder: self.arch.encoder.clone(),
            classifier: None,
            projection: Some(projection_widths.to_vec()),
        };
        arch.validate()?;
        let projection = Mlp::init(
            projection_widths,
            Activation::Identity,
            &mut SeededRng::with_stream(seed, PROJECTION_STREAM),
        );
        Ok(Model {
            arch,
            encoder: self.encoder,
            classifier: None,
            projection: Some(projection),
            stage: Stage::Open,
            seed,
        })
    }

    fn networks(&self) -> impl Iterator<Item = &Mlp> {
        std::iter::once(&self.encoder)
            .chain(self.classifier.iter())
            .chain(self.projection.iter())
    }

    fn networks_mut(&mut self) -> impl Iterator<Item = &mut Mlp> {
        std::iter::once(&mut self.encoder)
            .chain(self.classifier.iter_mut())
            .chain(self.projection.iter_mut())
    }

    /// Parameter tensors in declaration order: encoder, classifier,
    /// projection; weight before bias within each layer.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.networks()
            .flat_map(|m| m.layers.iter())
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.networks_mut()
            .flat_map(|m| m.layers.iter_mut())
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.networks().map(Mlp::param_count).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let arch = Architecture::desk(4);
        let a = init_model(&arch, 5).unwrap();
        assert_eq!(a, init_model(&arch, 5).unwrap());
        assert_ne!(a, init_model(&arch, 6).unwrap());
        for net in a.networks() {
            for l in &net.layers {
                assert!(l.bias.iter().all(|&b| b == 0.0));
                let bound = (6.0 / (l.spec.in_dim + l.spec.out_dim) as f64).sqrt();
                assert!(l.weight.iter().all(|w| w.abs() <= bound));
            }
        }
    }

    #[test]
    fn rejects_non_chaining_dims() {
        let mut arch = Architecture::desk(4);
        arch.classifier = Some(vec![64, 10, 4]);
        assert!(matches!(init_model(&arch, 0), Err(Error::Argument(_))));
        let mut arch = Architecture::desk(4);
        arch.encoder[0] = 2;
        assert!(init_model(&arch, 0).is_err());
        let arch = Architecture::desk(4).with_embedding_dim(1);
        assert!(init_model(&arch, 0).is_err());
    }

    #[test]
    fn dims_round_trip() {
        for arch in [Architecture::full(6), Architecture::desk(4).without_classifier()] {
            assert_eq!(Architecture::from_dims(&arch.to_dims()).unwrap(), arch);
        }
    }

    #[test]
    fn open_stage_keeps_encoder() {
        let closed = init_model(&Architecture::desk(4), 1).unwrap();
        let encoder = closed.encoder.clone();
        let open = closed.into_open_stage(&[128, 512, 16], 9).unwrap();
        assert_eq!(open.encoder, encoder);
        assert!(open.classifier.is_none());
        assert_eq!(open.embedding_dim(), Some(16));
        assert_eq!(open.stage, Stage::Open);
    }
}
