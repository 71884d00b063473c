//! Segmentation loss over label-grid batches.

use crate::error::Result;
use crate::events::{LabelGrid, IGNORE_LABEL};
use crate::tensor::{cross_entropy_logits, Tensor};

/// Average per-pixel cross-entropy of `[B,C,H,W]` scores against one label
/// grid per batch item; ignore-labeled pixels are excluded from the
/// average. Errors when nothing is labeled.
pub fn cross_entropy_loss(scores: &Tensor, labels: &[&LabelGrid]) -> Result<Tensor> {
    let mut flat = Vec::with_capacity(labels.iter().map(|l| l.data.len()).sum());
    for l in labels {
        flat.extend_from_slice(&l.data);
    }
    cross_entropy_logits(scores, &flat, IGNORE_LABEL)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_scores_give_ln_c() {
        let scores = Tensor::zeros(&[2, 4, 2, 2]);
        let l1 = LabelGrid::new(2, 2, vec![0, 1, 2, 3]).unwrap();
        let l2 = LabelGrid::new(2, 2, vec![3, 2, 1, 0]).unwrap();
        let loss = cross_entropy_loss(&scores, &[&l1, &l2]).unwrap();
        assert!((loss.item() - (4.0 as crate::tensor::Elem).ln()).abs() < 1e-12);
    }

    #[test]
    fn fully_ignored_batch_errors() {
        let scores = Tensor::zeros(&[1, 3, 1, 2]);
        let l = LabelGrid::new(2, 1, vec![IGNORE_LABEL, IGNORE_LABEL]).unwrap();
        assert!(cross_entropy_loss(&scores, &[&l]).is_err());
    }
}
