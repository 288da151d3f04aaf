use crate::nnet::{Gradients, Model};

/// SGD with heavy-ball momentum: `v = m v + g; w -= lr v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(model: &Model, learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: model.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn step(&mut self, model: &mut Model, grads: &Gradients) {
        let (lr, mu) = (self.learning_rate, self.momentum);
        for ((param, grad), vel) in model
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.velocity.iter_mut())
        {
            for ((w, g), v) in param.iter_mut().zip(grad).zip(vel.iter_mut()) {
                *v = mu * *v + g;
                *w -= lr * *v;
            }
        }
    }
}
