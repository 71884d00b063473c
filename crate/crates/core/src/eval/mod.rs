//! Evaluation and profiling: MIoU, streaming inference, operation
//! counting, and the energy model.

mod firing;
mod ops_count;
mod stream;

pub use firing::{firing_rate_report, FiringReport, LayerFiring};
pub use ops_count::{audit_mfi, count_ops, EnergyModel, LedgerRow, OpLedger};
pub use stream::StreamSession;

use crate::error::{Error, Result};
use crate::events::{LabelGrid, IGNORE_LABEL};
use crate::tensor::{Elem, Tensor};

/// Ignore-aware C x C matrix of (truth, prediction) pixel counts.
#[derive(Debug, Clone)]
pub struct ConfusionAccumulator {
    pub classes: usize,
    counts: Vec<u64>,
}

impl ConfusionAccumulator {
    pub fn new(classes: usize) -> Self {
        ConfusionAccumulator { classes, counts: vec![0; classes * classes] }
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one (truth, prediction) grid pair, skipping ignore pixels.
    pub fn update(&mut self, truth: &LabelGrid, pred: &LabelGrid) -> Result<()> {
        if truth.width != pred.width || truth.height != pred.height {
            return Err(Error::Shape(format!(
                "confusion update: truth {}x{} vs prediction {}x{}",
                truth.width, truth.height, pred.width, pred.height
            )));
        }
        for (t, p) in truth.data.iter().zip(&pred.data) {
            if *t == IGNORE_LABEL {
                continue;
            }
            if (*t as usize) >= self.classes || (*p as usize) >= self.classes {
                return Err(Error::Data(format!(
                    "confusion update: label {t}/{p} out of range for {} classes",
                    self.classes
                )));
            }
            self.counts[*t as usize * self.classes + *p as usize] += 1;
        }
        Ok(())
    }

    /// Associative merge for parallel evaluation.
    pub fn merge(&mut self, other: &ConfusionAccumulator) {
        assert_eq!(self.classes, other.classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

/// Per-class IoU `TP / max(1, TP + FP + FN)` and their mean. Classes absent
/// from both truth and prediction contribute zero through the guard.
pub fn miou(acc: &ConfusionAccumulator) -> Result<(Elem, Vec<Elem>)> {
    if acc.total() == 0 {
        return Err(Error::Data("miou: empty accumulator".into()));
    }
    let c = acc.classes;
    let mut per_class = Vec::with_capacity(c);
    for k in 0..c {
        let tp = acc.count(k, k);
        let fp: u64 = (0..c).filter(|t| *t != k).map(|t| acc.count(t, k)).sum();
        let fn_: u64 = (0..c).filter(|p| *p != k).map(|p| acc.count(k, p)).sum();
        let denom = (tp + fp + fn_).max(1);
        per_class.push(tp as Elem / denom as Elem);
    }
    let mean = per_class.iter().sum::<Elem>() / c as Elem;
    Ok((mean, per_class))
}

/// Argmax class decisions of a `[B, C, H, W]` score map (ties go to the
/// lowest class index), one label grid per batch item.
pub fn argmax_predictions(scores: &Tensor) -> Vec<LabelGrid> {
    let s = scores.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let plane = h * w;
    let mut out = Vec::with_capacity(b);
    for bi in 0..b {
        let mut data = vec![0u8; plane];
        for i in 0..plane {
            let mut best = 0usize;
            let mut best_v = scores.data()[(bi * c) * plane + i];
            for k in 1..c {
                let v = scores.data()[(bi * c + k) * plane + i];
                if v > best_v {
                    best_v = v;
                    best = k;
                }
            }
            data[i] = best as u8;
        }
        out.push(LabelGrid { width: w, height: h, data });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_prediction_gives_one() {
        let truth = LabelGrid::new(2, 2, vec![0, 1, 2, 1]).unwrap();
        let mut acc = ConfusionAccumulator::new(3);
        acc.update(&truth, &truth).unwrap();
        let (m, per) = miou(&acc).unwrap();
        assert_eq!(m, 1.0);
        assert!(per.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn hand_counted_two_class_grid() {
        // truth [A,A,B,B], pred [A,B,B,B] -> IoU_A = 1/2, IoU_B = 2/3
        let truth = LabelGrid::new(2, 2, vec![0, 0, 1, 1]).unwrap();
        let pred = LabelGrid::new(2, 2, vec![0, 1, 1, 1]).unwrap();
        let mut acc = ConfusionAccumulator::new(2);
        acc.update(&truth, &pred).unwrap();
        let (m, per) = miou(&acc).unwrap();
        assert!((per[0] - 0.5).abs() < 1e-12);
        assert!((per[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((m - 7.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn random_grids_match_set_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(33);
        for _ in 0..20 {
            let classes = rng.gen_range(2..6usize);
            let n = 40usize;
            let truth_data: Vec<u8> = (0..n)
                .map(|_| {
                    if rng.gen_bool(0.1) {
                        IGNORE_LABEL
                    } else {
                        rng.gen_range(0..classes) as u8
                    }
                })
                .collect();
            let pred_data: Vec<u8> = (0..n).map(|_| rng.gen_range(0..classes) as u8).collect();
            let truth = LabelGrid::new(8, 5, truth_data.clone()).unwrap();
            let pred = LabelGrid::new(8, 5, pred_data.clone()).unwrap();
            let mut acc = ConfusionAccumulator::new(classes);
            acc.update(&truth, &pred).unwrap();
            let (m, per) = miou(&acc).unwrap();

            // brute-force per-pixel set oracle
            let mut oracle = Vec::new();
            for k in 0..classes {
                let mut inter = 0u64;
                let mut union = 0u64;
                for i in 0..n {
                    if truth_data[i] == IGNORE_LABEL {
                        continue;
                    }
                    let in_t = truth_data[i] as usize == k;
                    let in_p = pred_data[i] as usize == k;
                    if in_t && in_p {
                        inter += 1;
                    }
                    if in_t || in_p {
                        union += 1;
                    }
                }
                oracle.push(inter as Elem / union.max(1) as Elem);
            }
            for (a, b) in per.iter().zip(&oracle) {
                assert_eq!(a, b);
            }
            assert_eq!(m, oracle.iter().sum::<Elem>() / classes as Elem);
        }
    }

    #[test]
    fn empty_accumulator_errors() {
        let acc = ConfusionAccumulator::new(3);
        assert!(miou(&acc).is_err());
    }

    #[test]
    fn merge_is_additive() {
        let truth = LabelGrid::new(2, 1, vec![0, 1]).unwrap();
        let pred = LabelGrid::new(2, 1, vec![0, 0]).unwrap();
        let mut a = ConfusionAccumulator::new(2);
        a.update(&truth, &pred).unwrap();
        let mut b = ConfusionAccumulator::new(2);
        b.update(&truth, &truth).unwrap();
        let mut ab = ConfusionAccumulator::new(2);
        ab.update(&truth, &pred).unwrap();
        ab.update(&truth, &truth).unwrap();
        a.merge(&b);
        for t in 0..2 {
            for p in 0..2 {
                assert_eq!(a.count(t, p), ab.count(t, p));
            }
        }
    }

    #[test]
    fn argmax_tie_goes_to_lowest_index() {
        let scores = Tensor::from_vec(&[1, 3, 1, 1], vec![0.5, 0.5, 0.2]).unwrap();
        let pred = argmax_predictions(&scores);
        assert_eq!(pred[0].data, vec![0]);
    }
}
