use crate::error::{Error, Result};

/// `-log softmax(logits)[label]` and its gradient `softmax - onehot`.
pub fn cross_entropy_loss(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::Argument(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (logits[label] - max);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Supervised contrastive loss over a batch of embeddings.
///
/// For each anchor `i`, with `A(i)` every other sample and `P(i)` the others
/// sharing its label:
///
/// `L = sum_i -1/|P(i)| sum_{p in P(i)} log( exp(z_i.z_p/t) / sum_{a in A(i)} exp(z_i.z_a/t) )`
///
/// Returns the summed loss and its gradient with respect to each embedding.
pub fn supcon_loss(embeddings: &[Vec<f64>], labels: &[usize], temperature: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = embeddings.len();
    if labels.len() != n {
        return Err(Error::Argument(format!(
            "{n} embeddings but {} labels",
            labels.len()
        )));
    }
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be > 0, got {temperature}")));
    }
    if n < 2 {
        return Err(Error::Config("contrastive batch needs at least 2 samples".into()));
    }
    let dim = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != dim) {
        return Err(Error::Argument("embeddings have different dimensions".into()));
    }
    let positives: Vec<usize> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && labels[j] == labels[i]).count())
        .collect();
    if let Some(i) = positives.iter().position(|&p| p == 0) {
        return Err(Error::Config(format!(
            "sample {i} (label {}) has no positive in the batch",
            labels[i]
        )));
    }

    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s = dot(&embeddings[i], &embeddings[j]) / temperature;
            sim[i * n + j] = s;
            sim[j * n + i] = s;
        }
    }

    // Terms are summed in sorted order so the loss is exactly invariant
    // under a joint permutation of embeddings and labels.
    let mut anchor_losses = Vec::with_capacity(n);
    let mut grads = vec![vec![0.0; dim]; n];
    for i in 0..n {
        let row = &sim[i * n..(i + 1) * n];
        let max = (0..n)
            .filter(|&a| a != i)
            .map(|a| row[a])
            .fold(f64::NEG_INFINITY, f64::max);
        let denom = sorted_sum((0..n).filter(|&a| a != i).map(|a| (row[a] - max).exp()).collect());
        let lse = max + denom.ln();
        let inv_p = 1.0 / positives[i] as f64;
        let pos_sum = sorted_sum(
            (0..n)
                .filter(|&j| j != i && labels[j] == labels[i])
                .map(|j| row[j])
                .collect(),
        );
        for j in (0..n).filter(|&j| j != i) {
            let is_pos = labels[j] == labels[i];
            // dL_i / dS_ij
            let coeff = (row[j] - lse).exp() - if is_pos { inv_p } else { 0.0 };
            let c = coeff / temperature;
            for k in 0..dim {
                grads[i][k] += c * embeddings[j][k];
                grads[j][k] += c * embeddings[i][k];
            }
        }
        anchor_losses.push(lse - inv_p * pos_sum);
    }
    let loss = sorted_sum(anchor_losses);
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("contrastive loss is {loss}")));
    }
    Ok((loss, grads))
}

fn sorted_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
