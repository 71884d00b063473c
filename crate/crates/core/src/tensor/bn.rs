//! Batch normalization and its fold-into-convolution transform.

use std::cell::{Cell, RefCell};

use super::{Backward, Elem, OpRecord, Param, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

/// Per-channel batch normalization state. Gamma/beta are trainable; running
/// statistics are plain buffers updated with momentum during training.
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    running_mean: RefCell<Vec<Elem>>,
    running_var: RefCell<Vec<Elem>>,
    pub eps: Elem,
    pub momentum: Elem,
    mode: Cell<BnMode>,
}

impl BatchNorm {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm::with_eps(name, channels, 1e-5, 0.1)
    }

    pub fn with_eps(name: &str, channels: usize, eps: Elem, momentum: Elem) -> Self {
        BatchNorm {
            gamma: Param::new(format!("{name}.gamma"), Tensor::full(&[channels], 1.0)),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: RefCell::new(vec![0.0; channels]),
            running_var: RefCell::new(vec![1.0; channels]),
            eps,
            momentum,
            mode: Cell::new(BnMode::Train),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value().len()
    }

    pub fn mode(&self) -> BnMode {
        self.mode.get()
    }

    pub fn set_mode(&self, mode: BnMode) {
        self.mode.set(mode);
    }

    pub fn running_mean(&self) -> Vec<Elem> {
        self.running_mean.borrow().clone()
    }

    pub fn running_var(&self) -> Vec<Elem> {
        self.running_var.borrow().clone()
    }

    pub fn set_running_stats(&self, mean: Vec<Elem>, var: Vec<Elem>) {
        assert_eq!(mean.len(), self.channels());
        assert_eq!(var.len(), self.channels());
        *self.running_mean.borrow_mut() = mean;
        *self.running_var.borrow_mut() = var;
    }
}

struct BnTrainBack {
    x: Tensor,
    gamma: Tensor,
    mean: Vec<Elem>,
    inv_std: Vec<Elem>,
    channels: usize,
    spatial: usize,
}

impl Backward for BnTrainBack {
    fn backward(&self, grad: &[Elem], needs: &[bool]) -> Vec<Option<Vec<Elem>>> {
        let c = self.channels;
        let batch = self.x.len() / (c * self.spatial);
        let n = (batch * self.spatial) as Elem;
        let idx = |b: usize, ch: usize, s: usize| (b * c + ch) * self.spatial + s;

        // per-channel sums of dy and dy*xhat
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for b in 0..batch {
            for ch in 0..c {
                for s in 0..self.spatial {
                    let i = idx(b, ch, s);
                    let xhat = (self.x.data()[i] - self.mean[ch]) * self.inv_std[ch];
                    sum_dy[ch] += grad[i];
                    sum_dy_xhat[ch] += grad[i] * xhat;
                }
            }
        }

        let gx = needs[0].then(|| {
            let mut g = vec![0.0; self.x.len()];
            for b in 0..batch {
                for ch in 0..c {
                    let ga = self.gamma.data()[ch];
                    for s in 0..self.spatial {
                        let i = idx(b, ch, s);
                        let xhat = (self.x.data()[i] - self.mean[ch]) * self.inv_std[ch];
                        g[i] = ga * self.inv_std[ch] / n
                            * (n * grad[i] - sum_dy[ch] - xhat * sum_dy_xhat[ch]);
                    }
                }
            }
            g
        });
        let ggamma = needs[1].then(|| sum_dy_xhat.clone());
        let gbeta = needs[2].then(|| sum_dy.clone());
        vec![gx, ggamma, gbeta]
    }
}

struct BnInferBack {
    scale: Vec<Elem>, // gamma * inv_std per channel
    xhat_mean: Tensor,
    inv_std: Vec<Elem>,
    mean: Vec<Elem>,
    channels: usize,
    spatial: usize,
}

impl Backward for BnInferBack {
    fn backward(&self, grad: &[Elem], needs: &[bool]) -> Vec<Option<Vec<Elem>>> {
        let c = self.channels;
        let batch = self.xhat_mean.len() / (c * self.spatial);
        let idx = |b: usize, ch: usize, s: usize| (b * c + ch) * self.spatial + s;
        let gx = needs[0].then(|| {
            let mut g = vec![0.0; grad.len()];
            for b in 0..batch {
                for ch in 0..c {
                    for s in 0..self.spatial {
                        let i = idx(b, ch, s);
                        g[i] = grad[i] * self.scale[ch];
                    }
                }
            }
            g
        });
        let ggamma = needs[1].then(|| {
            let mut g = vec![0.0; c];
            for b in 0..batch {
                for ch in 0..c {
                    for s in 0..self.spatial {
                        let i = idx(b, ch, s);
                        let xhat =
                            (self.xhat_mean.data()[i] - self.mean[ch]) * self.inv_std[ch];
                        g[ch] += grad[i] * xhat;
                    }
                }
            }
            g
        });
        let gbeta = needs[2].then(|| {
            let mut g = vec![0.0; c];
            for (i, gv) in grad.iter().enumerate() {
                g[(i / self.spatial) % c] += gv;
            }
            g
        });
        vec![gx, ggamma, gbeta]
    }
}

/// Applies batch normalization to a `[B,C,H,W]` tensor. Train mode
/// normalizes with batch statistics and updates the running buffers with
/// momentum; infer mode normalizes with the running buffers only.
pub fn batch_norm(x: &Tensor, bn: &BatchNorm, mode: BnMode) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 || s[1] != bn.channels() {
        return Err(Error::Shape(format!(
            "batch_norm: input {:?} does not match {} channels",
            s,
            bn.channels()
        )));
    }
    bn.set_mode(mode);
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let spatial = h * w;
    let n = b * spatial;
    let gamma = bn.gamma.value();
    let beta = bn.beta.value();
    let idx = |bi: usize, ch: usize, sp: usize| (bi * c + ch) * spatial + sp;

    let (mean, var): (Vec<Elem>, Vec<Elem>) = match mode {
        BnMode::Train => {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for bi in 0..b {
                for ch in 0..c {
                    for sp in 0..spatial {
                        mean[ch] += x.data()[idx(bi, ch, sp)];
                    }
                }
            }
            for m in mean.iter_mut() {
                *m /= n as Elem;
            }
            for bi in 0..b {
                for ch in 0..c {
                    for sp in 0..spatial {
                        let d = x.data()[idx(bi, ch, sp)] - mean[ch];
                        var[ch] += d * d;
                    }
                }
            }
            for v in var.iter_mut() {
                *v /= n as Elem;
            }
            // momentum update; running variance uses the unbiased estimate
            let unbias = if n > 1 { n as Elem / (n - 1) as Elem } else { 1.0 };
            {
                let mut rm = bn.running_mean.borrow_mut();
                let mut rv = bn.running_var.borrow_mut();
                for ch in 0..c {
                    rm[ch] = (1.0 - bn.momentum) * rm[ch] + bn.momentum * mean[ch];
                    rv[ch] = (1.0 - bn.momentum) * rv[ch] + bn.momentum * var[ch] * unbias;
                }
            }
            (mean, var)
        }
        BnMode::Infer => (bn.running_mean.borrow().clone(), bn.running_var.borrow().clone()),
    };

    let inv_std: Vec<Elem> = var.iter().map(|v| 1.0 / (v + bn.eps).sqrt()).collect();
    let mut data = vec![0.0; x.len()];
    for bi in 0..b {
        for ch in 0..c {
            for sp in 0..spatial {
                let i = idx(bi, ch, sp);
                data[i] = gamma.data()[ch] * (x.data()[i] - mean[ch]) * inv_std[ch]
                    + beta.data()[ch];
            }
        }
    }

    let rule: Box<dyn Backward> = match mode {
        BnMode::Train => Box::new(BnTrainBack {
            x: x.clone(),
            gamma: gamma.clone(),
            mean,
            inv_std,
            channels: c,
            spatial,
        }),
        BnMode::Infer => Box::new(BnInferBack {
            scale: gamma.data().iter().zip(&inv_std).map(|(g, i)| g * i).collect(),
            xhat_mean: x.clone(),
            inv_std,
            mean,
            channels: c,
            spatial,
        }),
    };
    Ok(Tensor::from_op(
        s.to_vec(),
        data,
        OpRecord { parents: vec![x.clone(), gamma, beta], rule },
    ))
}

/// Folds finalized batch-norm statistics into convolution parameters:
/// `conv(x, w') + b'` equals `bn(conv(x, w) + b)` in inference mode.
/// Rejected while the layer is still in train mode.
pub fn fold_bn_into_conv(
    weight: &Tensor,
    bias: Option<&Tensor>,
    bn: &BatchNorm,
) -> Result<(Tensor, Tensor)> {
    if bn.mode() == BnMode::Train {
        return Err(Error::State(
            "fold_bn_into_conv: batch norm still in train mode (finalize running stats first)"
                .into(),
        ));
    }
    let ws = weight.shape();
    if ws.len() != 4 || ws[0] != bn.channels() {
        return Err(Error::Shape(format!(
            "fold: weight {:?} does not match {} bn channels",
            ws,
            bn.channels()
        )));
    }
    let c_out = ws[0];
    let per_filter = ws[1] * ws[2] * ws[3];
    let gamma = bn.gamma.value();
    let beta = bn.beta.value();
    let rm = bn.running_mean.borrow();
    let rv = bn.running_var.borrow();
    let mut w2 = weight.data().to_vec();
    let mut b2 = vec![0.0; c_out];
    for co in 0..c_out {
        let scale = gamma.data()[co] / (rv[co] + bn.eps).sqrt();
        for v in w2[co * per_filter..(co + 1) * per_filter].iter_mut() {
            *v *= scale;
        }
        let b0 = bias.map(|b| b.data()[co]).unwrap_or(0.0);
        b2[co] = (b0 - rm[co]) * scale + beta.data()[co];
    }
    Ok((
        Tensor::from_vec(ws, w2).expect("fold weight shape"),
        Tensor::from_vec(&[c_out], b2).expect("fold bias shape"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{channel_bias, conv2d};
    use rand::{Rng, SeedableRng};

    #[test]
    fn constant_input_train_mode_gives_beta() {
        // zero variance; eps guard keeps it finite and output collapses to beta
        let x = Tensor::from_vec(&[2, 2, 2, 2], vec![3.0; 16]).unwrap();
        let bn = BatchNorm::new("t", 2);
        bn.beta.set_data(vec![0.5, -1.0]);
        let y = batch_norm(&x, &bn, BnMode::Train).unwrap();
        for b in 0..2 {
            for c in 0..2 {
                for s in 0..4 {
                    let v = y.data()[(b * 2 + c) * 4 + s];
                    let expect = if c == 0 { 0.5 } else { -1.0 };
                    assert!((v - expect).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn identity_in_infer_mode() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let data: Vec<Elem> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(&[2, 2, 2, 4], data.clone()).unwrap();
        let bn = BatchNorm::new("t", 2); // running stats are mean 0 / var 1
        let y = batch_norm(&x, &bn, BnMode::Infer).unwrap();
        for (a, b) in y.data().iter().zip(&data) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn train_mode_normalizes_per_channel() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (b, c, h, w) = (4, 3, 6, 6);
        let data: Vec<Elem> = (0..b * c * h * w).map(|_| rng.gen_range(-2.0..5.0)).collect();
        let x = Tensor::from_vec(&[b, c, h, w], data).unwrap();
        let bn = BatchNorm::new("t", c);
        bn.gamma.set_data(vec![1.5, 0.5, 2.0]);
        bn.beta.set_data(vec![0.1, -0.2, 0.3]);
        let y = batch_norm(&x, &bn, BnMode::Train).unwrap();
        // recompute statistics independently from the output
        let spatial = h * w;
        for ch in 0..c {
            let mut vals = Vec::new();
            for bi in 0..b {
                for s in 0..spatial {
                    vals.push(y.data()[(bi * c + ch) * spatial + s]);
                }
            }
            let mean: Elem = vals.iter().sum::<Elem>() / vals.len() as Elem;
            let var: Elem =
                vals.iter().map(|v| (v - mean) * (v - mean)).sum::<Elem>() / vals.len() as Elem;
            let expect_beta = bn.beta.value().data()[ch];
            let expect_gamma = bn.gamma.value().data()[ch];
            assert!((mean - expect_beta).abs() < 1e-4, "channel {ch} mean");
            assert!((var.sqrt() - expect_gamma).abs() < 1e-4, "channel {ch} std");
        }
    }

    #[test]
    fn fold_identity_stats() {
        let w = Tensor::from_vec(&[2, 1, 1, 1], vec![1.5, -0.5]).unwrap();
        let bias = Tensor::from_vec(&[2], vec![0.25, 0.75]).unwrap();
        let bn = BatchNorm::new("t", 2);
        bn.set_mode(BnMode::Infer);
        let (w2, b2) = fold_bn_into_conv(&w, Some(&bias), &bn).unwrap();
        for (a, b) in w2.data().iter().zip(w.data()) {
            assert!((a - b).abs() < 1e-5);
        }
        for (a, b) in b2.data().iter().zip(bias.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn fold_analytic_scale() {
        // var = 4, gamma = 2, eps ~ 0 => scale = 2/sqrt(4) = 1.0
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![0.7]).unwrap();
        let bn = BatchNorm::with_eps("t", 1, 1e-12, 0.1);
        bn.gamma.set_data(vec![2.0]);
        bn.set_running_stats(vec![0.0], vec![4.0]);
        bn.set_mode(BnMode::Infer);
        let (w2, _) = fold_bn_into_conv(&w, None, &bn).unwrap();
        assert!((w2.data()[0] - 0.7).abs() < 1e-9);
    }

    #[test]
    fn fold_rejected_in_train_mode() {
        let w = Tensor::zeros(&[2, 1, 1, 1]);
        let bn = BatchNorm::new("t", 2);
        bn.set_mode(BnMode::Train);
        assert!(matches!(
            fold_bn_into_conv(&w, None, &bn),
            Err(crate::error::Error::State(_))
        ));
    }

    #[test]
    fn folded_equals_unfolded_inference() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let (b, ci, co, h, w, k) = (2, 3, 4, 7, 7, 3);
        let x = Tensor::from_vec(
            &[b, ci, h, w],
            (0..b * ci * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let wt = Tensor::from_vec(
            &[co, ci, k, k],
            (0..co * ci * k * k).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        )
        .unwrap();
        let bn = BatchNorm::new("t", co);
        bn.gamma.set_data((0..co).map(|_| rng.gen_range(0.5..1.5)).collect());
        bn.beta.set_data((0..co).map(|_| rng.gen_range(-0.5..0.5)).collect());
        bn.set_running_stats(
            (0..co).map(|_| rng.gen_range(-0.3..0.3)).collect(),
            (0..co).map(|_| rng.gen_range(0.5..2.0)).collect(),
        );
        let unfolded = batch_norm(&conv2d(&x, &wt, 1, 1, 1).unwrap(), &bn, BnMode::Infer).unwrap();
        let (w2, b2) = fold_bn_into_conv(&wt, None, &bn).unwrap();
        let folded = channel_bias(&conv2d(&x, &w2, 1, 1, 1).unwrap(), &b2);
        let max_diff = unfolded
            .data()
            .iter()
            .zip(folded.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, Elem::max);
        assert!(max_diff < 1e-5, "max abs diff {max_diff}");
    }
}
