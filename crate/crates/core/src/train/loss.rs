use crate::autograd::PROB_FLOOR;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

fn check_labels<T: Element>(probs: &Tensor<T>, labels: &[usize]) -> Result<usize> {
    let k = probs.last_dim();
    if probs.len() / k != labels.len() {
        return Err(Error::dim(
            "cross_entropy",
            format!("{} labels for probabilities of shape {:?}", labels.len(), probs.shape()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Data(format!("label {bad} out of range for {k} classes")));
    }
    Ok(k)
}

/// Mean over rows of `-ln(max(p[label], 1e-12))`, accumulated in `f64`.
pub fn cross_entropy<T: Element>(probs: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let k = check_labels(probs, labels)?;
    let mut total = 0.0f64;
    for (row, &l) in probs.data().chunks(k).zip(labels) {
        total -= row[l].as_f64().max(PROB_FLOOR).ln();
    }
    Ok(total / labels.len() as f64)
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax<T: Element>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub loss: f64,
    pub accuracy: f64,
    pub perplexity: f64,
}

pub fn metrics<T: Element>(probs: &Tensor<T>, labels: &[usize]) -> Result<Metrics> {
    let loss = cross_entropy(probs, labels)?;
    let k = probs.last_dim();
    let hits = probs
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count();
    Ok(Metrics { loss, accuracy: hits as f64 / labels.len() as f64, perplexity: loss.exp() })
}
