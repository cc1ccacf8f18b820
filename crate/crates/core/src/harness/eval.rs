//! Top-1 accuracy of single peers and peer ensembles.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::augment::ImageBatch;
use crate::error::{Error, Result};
use crate::models::PeerStudent;

/// How per-peer outputs are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleRule {
    /// Argmax of the mean of per-peer softmax probabilities.
    #[default]
    MeanSoftmax,
    /// Argmax of the mean logits.
    MeanLogits,
}

/// Samples whose argmax (lowest index on ties) equals the label.
pub fn top1_correct(logits: ArrayView2<'_, f32>, labels: &[usize]) -> Result<usize> {
    if logits.nrows() != labels.len() {
        return Err(Error::Validation(format!(
            "{} logit rows for {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    Ok(logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| crate::argmax(row.iter().copied()) == y)
        .count())
}

/// Combines per-peer logits of one batch into scores whose argmax is the
/// ensemble prediction.
pub fn ensemble_scores(per_peer: &[ArrayView2<'_, f32>], rule: EnsembleRule) -> Result<Array2<f64>> {
    let Some(first) = per_peer.first() else {
        return Err(Error::Parameter("ensemble needs at least one peer".into()));
    };
    if per_peer.iter().any(|l| l.dim() != first.dim()) {
        return Err(Error::Validation("peers disagree on logit shape".into()));
    }
    let mut acc = Array2::<f64>::zeros(first.dim());
    for logits in per_peer {
        for (mut out, row) in acc.axis_iter_mut(Axis(0)).zip(logits.rows()) {
            match rule {
                EnsembleRule::MeanLogits => out.zip_mut_with(&row, |a, &z| *a += f64::from(z)),
                EnsembleRule::MeanSoftmax => {
                    let top = row.iter().fold(f32::NEG_INFINITY, |m, &z| m.max(z));
                    let e: Vec<f64> = row.iter().map(|&z| f64::from(z - top).exp()).collect();
                    let sum: f64 = e.iter().sum();
                    out.iter_mut().zip(&e).for_each(|(a, v)| *a += v / sum);
                }
            }
        }
    }
    acc /= per_peer.len() as f64;
    Ok(acc)
}

fn check_stream(test: &[ImageBatch]) -> Result<usize> {
    let total: usize = test.iter().map(ImageBatch::len).sum();
    if total == 0 {
        Err(Error::Parameter("evaluation stream is empty".into()))
    } else {
        Ok(total)
    }
}

/// Top-1 accuracy of one peer in evaluation mode.
pub fn evaluate(peer: &PeerStudent, test: &[ImageBatch]) -> Result<f64> {
    let total = check_stream(test)?;
    let mut correct = 0;
    for batch in test {
        let out = peer.forward(batch.pixels())?;
        correct += top1_correct(out.logits.view(), batch.labels())?;
    }
    Ok(correct as f64 / total as f64)
}

/// Top-1 accuracy of the combined prediction of `peers`.
pub fn evaluate_ensemble(peers: &[PeerStudent], test: &[ImageBatch], rule: EnsembleRule) -> Result<f64> {
    if peers.is_empty() {
        return Err(Error::Parameter("ensemble needs at least one peer".into()));
    }
    let total = check_stream(test)?;
    let mut correct = 0;
    for batch in test {
        let logits = peers
            .iter()
            .map(|p| p.forward(batch.pixels()).map(|o| o.logits))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = logits.iter().map(|l| l.view()).collect();
        let scores = ensemble_scores(&views, rule)?;
        correct += scores
            .rows()
            .into_iter()
            .zip(batch.labels())
            .filter(|(row, &y)| crate::argmax(row.iter().copied()) == y)
            .count();
    }
    Ok(correct as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn oracle_and_constant_logits() {
        let labels = [0, 1, 2, 0, 1, 2];
        let perfect = Array2::from_shape_fn((6, 3), |(i, c)| f32::from(u8::from(labels[i] == c)));
        assert_eq!(top1_correct(perfect.view(), &labels).unwrap(), 6);
        // constant logits tie everywhere; class 0 wins, so accuracy is 1/K
        let flat = Array2::<f32>::zeros((6, 3));
        assert_eq!(top1_correct(flat.view(), &labels).unwrap(), 2);
    }

    #[test]
    fn complementary_peers_beat_either_alone() {
        // each peer is right on one half and mildly wrong on the other
        let labels = [0, 1, 0, 1];
        let a = array![[5.0f32, 0.0], [0.0, 5.0], [0.0, 0.5], [0.5, 0.0]];
        let b = array![[0.0f32, 0.5], [0.5, 0.0], [5.0, 0.0], [0.0, 5.0]];
        let acc = |l: &Array2<f32>| top1_correct(l.view(), &labels).unwrap();
        assert_eq!((acc(&a), acc(&b)), (2, 2));
        for rule in [EnsembleRule::MeanSoftmax, EnsembleRule::MeanLogits] {
            let s = ensemble_scores(&[a.view(), b.view()], rule).unwrap();
            let hits = s
                .rows()
                .into_iter()
                .zip(labels)
                .filter(|(r, y)| crate::argmax(r.iter().copied()) == *y)
                .count();
            assert_eq!(hits, 4);
        }
    }

    #[test]
    fn identical_peers_change_nothing() {
        let l = array![[0.3f32, 0.2, 0.9], [1.0, 1.0, -1.0]];
        let one = ensemble_scores(&[l.view()], EnsembleRule::MeanSoftmax).unwrap();
        let two = ensemble_scores(&[l.view(), l.view()], EnsembleRule::MeanSoftmax).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn empty_stream_is_rejected() {
        assert!(matches!(check_stream(&[]), Err(Error::Parameter(_))));
        assert!(ensemble_scores(&[], EnsembleRule::MeanLogits).is_err());
    }
}
