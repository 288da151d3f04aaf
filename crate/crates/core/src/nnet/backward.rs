use super::{Activation, ForwardTrace, Mlp, Model};
use crate::error::{Error, Result};

/// Loss gradients with respect to the head outputs of one forward pass.
/// `embedding` is the gradient with respect to the normalized embedding.
#[derive(Clone, Copy, Debug, Default)]
pub struct Upstream<'a> {
    pub logits: Option<&'a [f64]>,
    pub embedding: Option<&'a [f64]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter gradients shaped like a [`Model`], plus the gradient with
/// respect to each input point.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub encoder: Vec<DenseGrad>,
    pub classifier: Option<Vec<DenseGrad>>,
    pub projection: Option<Vec<DenseGrad>>,
    pub input: Vec<[f64; 3]>,
}

fn zeros_like(net: &Mlp) -> Vec<DenseGrad> {
    net.layers
        .iter()
        .map(|l| DenseGrad {
            weight: vec![0.0; l.weight.len()],
            bias: vec![0.0; l.bias.len()],
        })
        .collect()
}

impl Gradients {
    pub fn zeros(model: &Model, n_points: usize) -> Self {
        Self {
            encoder: zeros_like(&model.encoder),
            classifier: model.classifier.as_ref().map(zeros_like),
            projection: model.projection.as_ref().map(zeros_like),
            input: vec![[0.0; 3]; n_points],
        }
    }

    /// Same order as [`Model::tensors`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.encoder
            .iter()
            .chain(self.classifier.iter().flatten())
            .chain(self.projection.iter().flatten())
            .flat_map(|g| [g.weight.as_slice(), g.bias.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.encoder
            .iter_mut()
            .chain(self.classifier.iter_mut().flatten())
            .chain(self.projection.iter_mut().flatten())
            .flat_map(|g| [g.weight.as_mut_slice(), g.bias.as_mut_slice()])
            .collect()
    }

    /// Adds parameter gradients of `other`; input gradients are not summed
    /// since they belong to different clouds.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            for x in t {
                *x *= s;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Reverse-mode gradients for one forward pass.
///
/// The max-pool sends each channel's gradient to its argmax point only, so
/// the encoder backward pass touches just the critical points. ReLU passes
/// gradient where its output is strictly positive (subgradient 0 at 0).
pub fn backward(model: &Model, trace: &ForwardTrace, upstream: Upstream<'_>) -> Result<Gradients> {
    if trace.arch != model.arch || trace.encoder_acts.len() != model.encoder.layers.len() + 1 {
        return Err(Error::Argument(
            "forward trace was produced by a model with a different architecture".into(),
        ));
    }
    let g = trace.global_dim();
    let mut grads = Gradients::zeros(model, trace.n_points);
    let mut d_global = vec![0.0; g];

    if let Some(d_logits) = upstream.logits {
        let (head, acts) = match (&model.classifier, &trace.classifier_acts) {
            (Some(h), Some(a)) => (h, a),
            _ => return Err(Error::Argument("logit gradient given but model has no classifier".into())),
        };
        check_len(d_logits.len(), head.out_dim(), "logit gradient")?;
        let dg = backprop_mlp(head, acts, d_logits, grads.classifier.as_mut().unwrap());
        add_into(&mut d_global, &dg);
    }

    if let Some(d_z) = upstream.embedding {
        let (head, acts, z) = match (&model.projection, &trace.projection_acts, &trace.embedding) {
            (Some(h), Some(a), Some(z)) => (h, a, z),
            _ => return Err(Error::Argument("embedding gradient given but model has no projection".into())),
        };
        check_len(d_z.len(), head.out_dim(), "embedding gradient")?;
        // z = u / |u|  =>  du = (dz - z (z . dz)) / |u|
        let u = acts.last().unwrap();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        let zdz: f64 = z.iter().zip(d_z).map(|(a, b)| a * b).sum();
        let d_u: Vec<f64> = d_z
            .iter()
            .zip(z)
            .map(|(dz, zi)| (dz - zi * zdz) / norm)
            .collect();
        let dg = backprop_mlp(head, acts, &d_u, grads.projection.as_mut().unwrap());
        add_into(&mut d_global, &dg);
    }

    // Route the pooled gradient to the argmax point of each channel.
    let mut critical: Vec<usize> = trace.argmax.clone();
    critical.sort_unstable();
    critical.dedup();
    for &point in &critical {
        let mut delta: Vec<f64> = (0..g)
            .map(|c| if trace.argmax[c] == point { d_global[c] } else { 0.0 })
            .collect();
        if delta.iter().all(|&v| v == 0.0) {
            continue;
        }
        for (li, layer) in model.encoder.layers.iter().enumerate().rev() {
            let (w_in, w_out) = (layer.spec.in_dim, layer.spec.out_dim);
            let out = &trace.encoder_acts[li + 1][point * w_out..(point + 1) * w_out];
            let input = &trace.encoder_acts[li][point * w_in..(point + 1) * w_in];
            if layer.spec.activation == Activation::Relu {
                for (d, &o) in delta.iter_mut().zip(out) {
                    if o <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let lg = &mut grads.encoder[li];
            let mut prev = vec![0.0; w_in];
            for k in 0..w_in {
                let row = &layer.weight[k * w_out..(k + 1) * w_out];
                let grow = &mut lg.weight[k * w_out..(k + 1) * w_out];
                let xk = input[k];
                let mut acc = 0.0;
                for j in 0..w_out {
                    grow[j] += xk * delta[j];
                    acc += row[j] * delta[j];
                }
                prev[k] = acc;
            }
            add_into(&mut lg.bias, &delta);
            delta = prev;
        }
        grads.input[point] = [delta[0], delta[1], delta[2]];
    }
    Ok(grads)
}

/// Backpropagates `d_out` through a head and returns the gradient with
/// respect to its input.
fn backprop_mlp(net: &Mlp, acts: &[Vec<f64>], d_out: &[f64], grads: &mut [DenseGrad]) -> Vec<f64> {
    let mut delta = d_out.to_vec();
    for (li, layer) in net.layers.iter().enumerate().rev() {
        let w_out = layer.spec.out_dim;
        if layer.spec.activation == Activation::Relu {
            for (d, &o) in delta.iter_mut().zip(&acts[li + 1]) {
                if o <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let input = &acts[li];
        let lg = &mut grads[li];
        let mut prev = vec![0.0; layer.spec.in_dim];
        for (k, &xk) in input.iter().enumerate() {
            let row = &layer.weight[k * w_out..(k + 1) * w_out];
            let grow = &mut lg.weight[k * w_out..(k + 1) * w_out];
            let mut acc = 0.0;
            for j in 0..w_out {
                grow[j] += xk * delta[j];
                acc += row[j] * delta[j];
            }
            prev[k] = acc;
        }
        add_into(&mut lg.bias, &delta);
        delta = prev;
    }
    delta
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

fn check_len(got: usize, want: usize, what: &str) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::Argument(format!("{what} has length {got}, expected {want}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{encode_points, init_model, Architecture};
    use crate::pcd::Point3;
    use crate::rng::SeededRng;

    fn toy() -> (Model, Vec<Point3>) {
        let arch = Architecture {
            encoder: vec![3, 6, 5, 7],
            classifier: Some(vec![7, 6, 3]),
            projection: Some(vec![7, 6, 4]),
        };
        let mut model = init_model(&arch, 21).unwrap();
        // nonzero biases exercise the bias gradients
        let mut rng = SeededRng::new(99);
        for t in model.tensors_mut() {
            for v in t.iter_mut() {
                *v += 0.05 * rng.normal();
            }
        }
        let pts = (0..8)
            .map(|_| Point3::new(rng.normal(), rng.normal(), rng.normal()))
            .collect();
        (model, pts)
    }

    /// Linear probe on both heads: L = a . logits + b . z.
    fn probe_loss(model: &Model, pts: &[Point3], a: &[f64], b: &[f64]) -> f64 {
        let t = encode_points(model, pts).unwrap();
        let l: f64 = t.logits().unwrap().iter().zip(a).map(|(x, y)| x * y).sum();
        let e: f64 = t.embedding().unwrap().iter().zip(b).map(|(x, y)| x * y).sum();
        l + e
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let (model, pts) = toy();
        let t = encode_points(&model, &pts).unwrap();
        let z = [0.0; 3];
        let g = backward(&model, &t, Upstream { logits: Some(&z[..]), embedding: Some(&[0.0; 4][..]) }).unwrap();
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn matches_finite_differences() {
        let (model, pts) = toy();
        let a = [0.3, -1.2, 0.7];
        let b = [1.0, -0.5, 0.25, 2.0];
        let t = encode_points(&model, &pts).unwrap();
        let g = backward(&model, &t, Upstream { logits: Some(&a[..]), embedding: Some(&b[..]) }).unwrap();
        let h = 1e-5;
        let analytic: Vec<f64> = g.tensors().iter().flat_map(|t| t.iter().copied()).collect();
        let mut idx = 0;
        let n_tensors = model.tensors().len();
        for ti in 0..n_tensors {
            let len = model.tensors()[ti].len();
            for k in 0..len {
                let mut plus = model.clone();
                plus.tensors_mut()[ti][k] += h;
                let mut minus = model.clone();
                minus.tensors_mut()[ti][k] -= h;
                let num = (probe_loss(&plus, &pts, &a, &b) - probe_loss(&minus, &pts, &a, &b)) / (2.0 * h);
                let an = analytic[idx];
                let rel = (an - num).abs() / an.abs().max(num.abs()).max(1e-8);
                assert!(rel < 1e-4, "tensor {ti} entry {k}: analytic {an} numeric {num}");
                idx += 1;
            }
        }
    }

    #[test]
    fn non_critical_points_get_zero_gradient() {
        let (model, pts) = toy();
        let t = encode_points(&model, &pts).unwrap();
        let g = backward(&model, &t, Upstream { logits: Some(&[1.0, 2.0, 3.0][..]), embedding: None }).unwrap();
        for (i, gi) in g.input.iter().enumerate() {
            if !t.argmax.contains(&i) {
                assert_eq!(*gi, [0.0; 3]);
            }
        }
    }

    #[test]
    fn mismatched_trace_is_rejected() {
        let (model, pts) = toy();
        let other = init_model(&Architecture::desk(3), 0).unwrap();
        let t = encode_points(&other, &pts).unwrap();
        assert!(matches!(
            backward(&model, &t, Upstream::default()),
            Err(Error::Argument(_))
        ));
    }
}
