//! Two-component diagonal Gaussian mixture fitted by EM, used to split the
//! embeddings rejected as Unknown into two candidate sources.

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Variance floor added to any component variance that collapses below it.
pub const RIDGE: f64 = 1e-6;

const COMPONENTS: usize = 2;
const MAX_ITERS: usize = 500;
const TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct GmmFit {
    pub labels: Vec<usize>,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    /// Mean log-likelihood per sample after each E step.
    pub log_likelihood: Vec<f64>,
    /// Whether any variance had to be floored.
    pub regularized: bool,
}

pub fn split_unknowns(embeddings: &[Vec<f64>], seed: u64) -> Result<GmmFit> {
    let n = embeddings.len();
    let d = embeddings.first().map_or(0, Vec::len);
    if d == 0 || embeddings.iter().any(|e| e.len() != d) {
        return Err(Error::Argument("embeddings must share a nonzero dimension".into()));
    }
    if n < 2 * d {
        return Err(Error::Argument(format!("need at least {} embeddings of dimension {d}, got {n}", 2 * d)));
    }
    let mut rng = SeededRng::new(seed);
    let mut means = seed_means(embeddings, &mut rng);
    let global_var = {
        let mean: Vec<f64> = (0..d).map(|k| embeddings.iter().map(|e| e[k]).sum::<f64>() / n as f64).collect();
        (0..d)
            .map(|k| embeddings.iter().map(|e| (e[k] - mean[k]).powi(2)).sum::<f64>() / n as f64)
            .collect::<Vec<f64>>()
    };
    let mut regularized = false;
    let mut variances: Vec<Vec<f64>> = (0..COMPONENTS)
        .map(|_| global_var.iter().map(|&v| floor_var(v, &mut regularized)).collect())
        .collect();
    let mut weights = vec![1.0 / COMPONENTS as f64; COMPONENTS];
    let mut resp = vec![[0.0; COMPONENTS]; n];
    let mut history = Vec::new();

    for _ in 0..MAX_ITERS {
        let ll = e_step(embeddings, &weights, &means, &variances, &mut resp);
        let converged = history.last().is_some_and(|&prev: &f64| (ll - prev).abs() <= TOL * prev.abs().max(1.0));
        history.push(ll);
        if converged {
            break;
        }
        for c in 0..COMPONENTS {
            let nk: f64 = resp.iter().map(|r| r[c]).sum();
            weights[c] = nk / n as f64;
            if nk <= f64::MIN_POSITIVE {
                // empty component: keep its parameters, it carries no weight
                continue;
            }
            for k in 0..d {
                let mu = resp.iter().zip(embeddings).map(|(r, e)| r[c] * e[k]).sum::<f64>() / nk;
                let var = resp.iter().zip(embeddings).map(|(r, e)| r[c] * (e[k] - mu).powi(2)).sum::<f64>() / nk;
                means[c][k] = mu;
                variances[c][k] = floor_var(var, &mut regularized);
            }
        }
    }
    if regularized {
        log::warn!("mixture variance collapsed; added ridge {RIDGE}");
    }
    let labels = resp.iter().map(|r| usize::from(r[1] > r[0])).collect();
    Ok(GmmFit { labels, weights, means, variances, log_likelihood: history, regularized })
}

fn floor_var(v: f64, regularized: &mut bool) -> f64 {
    if v < RIDGE {
        *regularized = true;
        v + RIDGE
    } else {
        v
    }
}

/// k-means++: a uniform first centre, the second drawn proportional to the
/// squared distance from the first.
fn seed_means(x: &[Vec<f64>], rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let first = x[rng.below(x.len())].clone();
    let d2: Vec<f64> = x.iter().map(|e| e.iter().zip(&first).map(|(a, b)| (a - b).powi(2)).sum()).collect();
    let total: f64 = d2.iter().sum();
    let second = if total > 0.0 {
        let mut target = rng.uniform() * total;
        let mut pick = x.len() - 1;
        for (i, w) in d2.iter().enumerate() {
            if target < *w {
                pick = i;
                break;
            }
            target -= w;
        }
        x[pick].clone()
    } else {
        first.clone()
    };
    vec![first, second]
}

fn e_step(
    x: &[Vec<f64>],
    weights: &[f64],
    means: &[Vec<f64>],
    variances: &[Vec<f64>],
    resp: &mut [[f64; COMPONENTS]],
) -> f64 {
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let mut total = 0.0;
    for (e, r) in x.iter().zip(resp.iter_mut()) {
        let mut lp = [f64::NEG_INFINITY; COMPONENTS];
        for c in 0..COMPONENTS {
            if weights[c] <= 0.0 {
                continue;
            }
            let mut s = weights[c].ln();
            for ((v, m), var) in e.iter().zip(&means[c]).zip(&variances[c]) {
                s -= 0.5 * (ln_2pi + var.ln() + (v - m).powi(2) / var);
            }
            lp[c] = s;
        }
        let m = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + lp.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        for c in 0..COMPONENTS {
            r[c] = (lp[c] - lse).exp();
        }
        total += lse;
    }
    total / x.len() as f64
}
