use crate::error::{Error, Result};

/// Accuracy and F1 for open-world verdicts. Class `K` of the confusion
/// matrix is Unknown. Accuracies over an empty split are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub known_accuracy: Option<f64>,
    pub unknown_accuracy: Option<f64>,
    pub accuracy: Option<f64>,
    /// Mean F1 over the classes that occur in the truth or the predictions.
    pub macro_f1: Option<f64>,
    /// `confusion[truth][pred]`, `(K + 1) x (K + 1)`.
    pub confusion: Vec<Vec<usize>>,
}

pub fn evaluate(pred: &[Option<usize>], truth: &[Option<usize>], num_known: usize) -> Result<Evaluation> {
    if pred.len() != truth.len() {
        return Err(Error::Argument(format!("{} verdicts but {} labels", pred.len(), truth.len())));
    }
    let k = num_known;
    let slot = |v: &Option<usize>| -> Result<usize> {
        match *v {
            Some(j) if j < k => Ok(j),
            Some(j) => Err(Error::Argument(format!("class {j} outside {k} known sources"))),
            None => Ok(k),
        }
    };
    let mut confusion = vec![vec![0usize; k + 1]; k + 1];
    for (p, t) in pred.iter().zip(truth) {
        confusion[slot(t)?][slot(p)?] += 1;
    }
    let ratio = |hit: usize, total: usize| (total > 0).then(|| hit as f64 / total as f64);
    let known_total: usize = confusion[..k].iter().flatten().sum();
    let known_hit: usize = (0..k).map(|j| confusion[j][j]).sum();
    let unknown_total: usize = confusion[k].iter().sum();

    let mut f1s = Vec::new();
    for c in 0..=k {
        let tp = confusion[c][c];
        let actual: usize = confusion[c].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        if actual + predicted == 0 {
            continue;
        }
        f1s.push(2.0 * tp as f64 / (actual + predicted) as f64);
    }
    Ok(Evaluation {
        known_accuracy: ratio(known_hit, known_total),
        unknown_accuracy: ratio(confusion[k][k], unknown_total),
        accuracy: ratio(known_hit + confusion[k][k], pred.len()),
        macro_f1: (!f1s.is_empty()).then(|| f1s.iter().sum::<f64>() / f1s.len() as f64),
        confusion,
    })
}
