//! Primitive differentiable operations.
//!
//! Forward values follow the direct summation definitions; each op installs
//! a backward rule producing exact gradients of its forward map (the spike
//! op substitutes a surrogate for the Heaviside derivative).

use super::{Backward, Elem, OpRecord, Tensor};
use crate::error::{Error, Result};

fn same_shape(a: &Tensor, b: &Tensor, what: &str) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{what}: shapes {:?} and {:?} differ",
        a.shape(),
        b.shape()
    );
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

struct AddBack;
impl Backward for AddBack {
    fn backward(&self, grad: &[Elem], needs: &[bool]) -> Vec<Option<Vec<Elem>>> {
        let mut out = Vec::with_capacity(2);
        for i in 0..2 {
            out.push(needs[i].then(|| grad.to_vec()));
        }
        out
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Tensor {
    same_shape(a, b, "add");
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        OpRecord { parents: vec![a.clone(), b.clone()], rule: Box::new(AddBack) },
    )
}

struct SubBack;
impl Backward for SubBack {
    fn backward(&self, grad: &[Elem], needs: &[bool]) -> Vec<Option<Vec<Elem>>> {
        vec![
            needs[0].then(|| grad.to_vec()),
            needs[1].then(|| grad.iter().map(|g| -g).collect()),
        ]
    }
}

pub fn sub(a: &Tensor, b: &Tensor) -> Tensor {
    same_shape(a, b, "sub");
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        OpRecord { parents: vec![a.clone(), b.clone()], rule: Box::new(SubBack) },
    )
}

struct MulBack {
    a: Tensor,
    b: Tensor,
}
impl Backward for MulBack {
    fn backward(&self, grad: &[Elem], needs: &[bool]) -> Vec<Option<Vec<Elem>>> {
        vec![
            needs[0].then(|| grad.iter().zip(self.b.data()).map(|(g, y)| g * y).collect()),
            needs[1].then(|| grad.iter().zip(self.a.data()).map(|(g, x)| g * x).collect()),
        ]
    }
}

/// Elementwise product of same-shape tensors.
pub fn mul(a: &Tensor, b: &Tensor) -> Tensor {
    same_shape(a, b, "mul");
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        OpRecord {
            parents: vec![a.clone(), b.clone()],
            rule: Box::new(MulBack { a: a.clone(), b: b.clone() }),
        },
    )
}

struct AffineBack {
    k: Elem,
}
impl Backward for AffineBack {
    fn backward(&self, grad: &[Elem], needs: &[bool]) -> Vec<Option<Vec<Elem>>> {
        vec![needs[0].then(|| grad.iter().map(|g| g * self.k).collect())]
    }
}

/// `k * x + c` with constant scalars.
pub fn affine_const(x: &Tensor, k: Elem, c: Elem) -> Tensor {
    let data = x.data().iter().map(|v| k * v + c).collect();
    Tensor::from_op(
        x.shape().to_vec(),
        data,
        OpRecord { parents: vec![x.clone()], rule: Box::new(AffineBack { k }) },
    )
}

struct ScaleBack {
    x: Tensor,
    s: Elem,
}
impl Backward for ScaleBack {
    fn backward(&self, grad: &[Elem], needs: &[bool]) -> Vec<Option<Vec<Elem>>> {
        vec![
            needs[0].then(|| grad.iter().map(|g| g * self.s).collect()),
            needs[1].then(|| vec![grad.iter().zip(self.x.data()).map(|(g, x)| g * x).sum()]),
        ]
    }
}

/// Broadcast product of a tensor with a one-element tensor (e.g. a trainable
/// decay factor). Gradient into the scalar is the sum over all elements.
pub fn scale(x: &Tensor, s: &Tensor) -> Tensor {
    assert_eq!(s.len(), 1, "scale expects a one-element scaling tensor");
    let sv = s.data()[0];
    let data = x.data().iter().map(|v| v * sv).collect();
    Tensor::from_op(
        x.shape().to_vec(),
        data,
        OpRecord {
            parents: vec![x.clone(), s.clone()],
            rule: Box::new(ScaleBack { x: x.clone(), s: sv }),
        },
    )
}

struct ChannelBiasBack {
    channels: usize,
    spatial: usize,
}
impl Backward for ChannelBiasBack {
    fn backward(&self, grad: &[Elem], needs: &[bool]) -> Vec<Option<Vec<Elem>>> {
        let gx = needs[0].then(|| grad.to_vec());
        let gb = needs[1].then(|| {
            let mut gb = vec![0.0; self.channels];
            for (i, g) in grad.iter().enumerate() {
                let c = (i / self.spatial) % self.channels;
                gb[c] += g;
            }
            gb
        });
        vec![gx, gb]
    }
}

/// Adds a per-channel bias to a `[B, C, H, W]` tensor.
pub fn channel_bias(x: &Tensor, bias: &Tensor) -> Tensor {
    assert_eq!(x.shape().len(), 4, "channel_bias expects [B,C,H,W]");
    let c = x.shape()[1];
    assert_eq!(bias.shape(), &[c], "bias length must match channel count");
    let spatial = x.shape()[2] * x.shape()[3];
    let mut data = x.data().to_vec();
    for (i, v) in data.iter_mut().enumerate() {
        *v += bias.data()[(i / spatial) % c];
    }
    Tensor::from_op(
        x.shape().to_vec(),
        data,
        OpRecord {
            parents: vec![x.clone(), bias.clone()],
            rule: Box::new(ChannelBiasBack { channels: c, spatial }),
        },
    )
}

// ---------------------------------------------------------------------------
// Structure: concat, pooling, upsampling
// ---------------------------------------------------------------------------

struct ConcatBack {
    channel_sizes: Vec<usize>, // per input: C_i
    batch: usize,
    spatial: usize,
}
impl Backward for ConcatBack {
    fn backward(&self, grad: &[Elem], needs: &[bool]) -> Vec<Option<Vec<Elem>>> {
        let total_c: usize = self.channel_sizes.iter().sum();
        let mut outs = Vec::with_capacity(self.channel_sizes.len());
        let mut c_off = 0;
        for (i, &ci) in self.channel_sizes.iter().enumerate() {
            if needs[i] {
                let mut g = vec![0.0; self.batch * ci * self.spatial];
                for b in 0..self.batch {
                    let src = (b * total_c + c_off) * self.spatial;
                    let dst = b * ci * self.spatial;
                    let n = ci * self.spatial;
                    g[dst..dst + n].copy_from_slice(&grad[src..src + n]);
                }
                outs.push(Some(g));
            } else {
                outs.push(None);
            }
            c_off += ci;
        }
        outs
    }
}

/// Concatenates `[B, C_i, H, W]` tensors along the channel axis.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    assert!(!inputs.is_empty());
    let first = inputs[0].shape();
    assert_eq!(first.len(), 4, "concat expects [B,C,H,W] inputs");
    let (b, h, w) = (first[0], first[2], first[3]);
    for t in inputs {
        let s = t.shape();
        if s[0] != b || s[2] != h || s[3] != w {
            return Err(Error::Shape(format!(
                "concat: non-channel extents differ ({:?} vs {:?})",
                first, s
            )));
        }
    }
    let channel_sizes: Vec<usize> = inputs.iter().map(|t| t.shape()[1]).collect();
    let total_c: usize = channel_sizes.iter().sum();
    let spatial = h * w;
    let mut data = vec![0.0; b * total_c * spatial];
    let mut c_off = 0;
    for (t, &ci) in inputs.iter().zip(&channel_sizes) {
        for bi in 0..b {
            let dst = (bi * total_c + c_off) * spatial;
            let src = bi * ci * spatial;
            let n = ci * spatial;
            data[dst..dst + n].copy_from_slice(&t.data()[src..src + n]);
        }
        c_off += ci;
    }
    Ok(Tensor::from_op(
        vec![b, total_c, h, w],
        data,
        OpRecord {
            parents: inputs.iter().map(|t| (*t).clone()).collect(),
            rule: Box::new(ConcatBack { channel_sizes, batch: b, spatial }),
        },
    ))
}

struct GlobalAvgPoolBack {
    spatial: usize,
    out_len: usize,
}
impl Backward for GlobalAvgPoolBack {
    fn backward(&self, grad: &[Elem], needs: &[bool]) -> Vec<Option<Vec<Elem>>> {
        vec![needs[0].then(|| {
            let mut g = vec![0.0; self.out_len * self.spatial];
            for (bc, gv) in grad.iter().enumerate() {
                let share = gv / self.spatial as Elem;
                for s in 0..self.spatial {
                    g[bc * self.spatial + s] = share;
                }
            }
            g
        })]
    }
}

/// Global average pooling: `[B,C,H,W] -> [B,C,1,1]`.
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    assert_eq!(x.shape().len(), 4);
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let spatial = h * w;
    let mut data = vec![0.0; b * c];
    for bc in 0..b * c {
        let s: Elem = x.data()[bc * spatial..(bc + 1) * spatial].iter().sum();
        data[bc] = s / spatial as Elem;
    }
    Tensor::from_op(
        vec![b, c, 1, 1],
        data,
        OpRecord {
            parents: vec![x.clone()],
            rule: Box::new(GlobalAvgPoolBack { spatial, out_len: b * c }),
        },
    )
}

struct UpsampleNearestBack {
    in_h: usize,
    in_w: usize,
    fh: usize,
    fw: usize,
    planes: usize,
}
impl Backward for UpsampleNearestBack {
    fn backward(&self, grad: &[Elem], needs: &[bool]) -> Vec<Option<Vec<Elem>>> {
        vec![needs[0].then(|| {
            let (oh, ow) = (self.in_h * self.fh, self.in_w * self.fw);
            let mut g = vec![0.0; self.planes * self.in_h * self.in_w];
            for p in 0..self.planes {
                for i in 0..oh {
                    for j in 0..ow {
                        g[(p * self.in_h + i / self.fh) * self.in_w + j / self.fw] +=
                            grad[(p * oh + i) * ow + j];
                    }
                }
            }
            g
        })]
    }
}

/// Nearest-neighbour upsampling with independent row/column factors.
/// Replicates values, so binary inputs stay binary.
pub fn upsample_nearest2(x: &Tensor, fh: usize, fw: usize) -> Tensor {
    assert_eq!(x.shape().len(), 4);
    assert!(fh >= 1 && fw >= 1);
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = (h * fh, w * fw);
    let planes = b * c;
    let mut data = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        for i in 0..oh {
            let src_row = (p * h + i / fh) * w;
            let dst_row = (p * oh + i) * ow;
            for j in 0..ow {
                data[dst_row + j] = x.data()[src_row + j / fw];
            }
        }
    }
    Tensor::from_op(
        vec![b, c, oh, ow],
        data,
        OpRecord {
            parents: vec![x.clone()],
            rule: Box::new(UpsampleNearestBack { in_h: h, in_w: w, fh, fw, planes }),
        },
    )
}

/// Nearest-neighbour upsampling by a single integer factor.
pub fn upsample_nearest(x: &Tensor, factor: usize) -> Tensor {
    upsample_nearest2(x, factor, factor)
}

/// Source taps and weights for one output coordinate of the averaging
/// upsampler (half-pixel alignment, edges clamped).
fn average_taps(out_i: usize, factor: usize, in_len: usize) -> [(usize, Elem); 2] {
    let src = (out_i as Elem + 0.5) / factor as Elem - 0.5;
    let lo = src.floor();
    let frac = src - lo;
    let i0 = (lo.max(0.0) as usize).min(in_len - 1);
    let i1 = ((lo + 1.0).max(0.0) as usize).min(in_len - 1);
    [(i0, 1.0 - frac), (i1, frac)]
}

struct UpsampleAverageBack {
    in_h: usize,
    in_w: usize,
    factor: usize,
    planes: usize,
}
impl Backward for UpsampleAverageBack {
    fn backward(&self, grad: &[Elem], needs: &[bool]) -> Vec<Option<Vec<Elem>>> {
        vec![needs[0].then(|| {
            let (oh, ow) = (self.in_h * self.factor, self.in_w * self.factor);
            let mut g = vec![0.0; self.planes * self.in_h * self.in_w];
            for p in 0..self.planes {
                let base = p * self.in_h * self.in_w;
                for i in 0..oh {
                    let rows = average_taps(i, self.factor, self.in_h);
                    for j in 0..ow {
                        let cols = average_taps(j, self.factor, self.in_w);
                        let gv = grad[(p * oh + i) * ow + j];
                        for (r, wr) in rows {
                            for (cc, wc) in cols {
                                g[base + r * self.in_w + cc] += gv * wr * wc;
                            }
                        }
                    }
                }
            }
            g
        })]
    }
}

/// Averaging upsampler: each output value is a distance-weighted average of
/// the four nearest source values, producing smooth real-valued maps. Used
/// by the final prediction layer.
pub fn upsample_average(x: &Tensor, factor: usize) -> Tensor {
    assert_eq!(x.shape().len(), 4);
    assert!(factor >= 2, "upsample factor must be at least 2");
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = (h * factor, w * factor);
    let planes = b * c;
    let mut data = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let base = p * h * w;
        for i in 0..oh {
            let rows = average_taps(i, factor, h);
            for j in 0..ow {
                let cols = average_taps(j, factor, w);
                let mut acc = 0.0;
                for (r, wr) in rows {
                    for (cc, wc) in cols {
                        acc += x.data()[base + r * w + cc] * wr * wc;
                    }
                }
                data[(p * oh + i) * ow + j] = acc;
            }
        }
    }
    Tensor::from_op(
        vec![b, c, oh, ow],
        data,
        OpRecord {
            parents: vec![x.clone()],
            rule: Box::new(UpsampleAverageBack { in_h: h, in_w: w, factor, planes }),
        },
    )
}

// ---------------------------------------------------------------------------
// Softmax and reductions
// ---------------------------------------------------------------------------

struct SoftmaxBack {
    out: Vec<Elem>,
    outer: usize,
    axis_len: usize,
    inner: usize,
}
impl Backward for SoftmaxBack {
    fn backward(&self, grad: &[Elem], needs: &[bool]) -> Vec<Option<Vec<Elem>>> {
        vec![needs[0].then(|| {
            let mut g = vec![0.0; grad.len()];
            for o in 0..self.outer {
                for i in 0..self.inner {
                    let idx = |k: usize| (o * self.axis_len + k) * self.inner + i;
                    let dot: Elem =
                        (0..self.axis_len).map(|k| grad[idx(k)] * self.out[idx(k)]).sum();
                    for k in 0..self.axis_len {
                        g[idx(k)] = self.out[idx(k)] * (grad[idx(k)] - dot);
                    }
                }
            }
            g
        })]
    }
}

/// Numerically stable softmax along `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> Tensor {
    let shape = x.shape();
    assert!(axis < shape.len());
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut data = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * axis_len + k) * inner + i;
            let mut m = Elem::NEG_INFINITY;
            for k in 0..axis_len {
                m = m.max(x.data()[idx(k)]);
            }
            let mut z = 0.0;
            for k in 0..axis_len {
                let e = (x.data()[idx(k)] - m).exp();
                data[idx(k)] = e;
                z += e;
            }
            for k in 0..axis_len {
                data[idx(k)] /= z;
            }
        }
    }
    Tensor::from_op(
        shape.to_vec(),
        data.clone(),
        OpRecord {
            parents: vec![x.clone()],
            rule: Box::new(SoftmaxBack { out: data, outer, axis_len, inner }),
        },
    )
}

struct IndexScalarBack {
    i: usize,
    n: usize,
}
impl Backward for IndexScalarBack {
    fn backward(&self, grad: &[Elem], needs: &[bool]) -> Vec<Option<Vec<Elem>>> {
        vec![needs[0].then(|| {
            let mut g = vec![0.0; self.n];
            g[self.i] = grad[0];
            g
        })]
    }
}

/// Extracts element `i` of a vector as a scalar tensor (used to weight
/// mixture branches by softmaxed architecture parameters).
pub fn index_scalar(x: &Tensor, i: usize) -> Tensor {
    assert!(i < x.len());
    Tensor::from_op(
        vec![1],
        vec![x.data()[i]],
        OpRecord {
            parents: vec![x.clone()],
            rule: Box::new(IndexScalarBack { i, n: x.len() }),
        },
    )
}

struct MeanAllBack {
    n: usize,
}
impl Backward for MeanAllBack {
    fn backward(&self, grad: &[Elem], needs: &[bool]) -> Vec<Option<Vec<Elem>>> {
        vec![needs[0].then(|| vec![grad[0] / self.n as Elem; self.n])]
    }
}

/// Mean over all elements, as a scalar tensor.
pub fn mean_all(x: &Tensor) -> Tensor {
    let n = x.len();
    let m = x.data().iter().sum::<Elem>() / n as Elem;
    Tensor::from_op(
        vec![1],
        vec![m],
        OpRecord { parents: vec![x.clone()], rule: Box::new(MeanAllBack { n }) },
    )
}

struct SumAllBack {
    n: usize,
}
impl Backward for SumAllBack {
    fn backward(&self, grad: &[Elem], needs: &[bool]) -> Vec<Option<Vec<Elem>>> {
        vec![needs[0].then(|| vec![grad[0]; self.n])]
    }
}

/// Sum over all elements, as a scalar tensor.
pub fn sum_all(x: &Tensor) -> Tensor {
    let n = x.len();
    let s = x.data().iter().sum::<Elem>();
    Tensor::from_op(
        vec![1],
        vec![s],
        OpRecord { parents: vec![x.clone()], rule: Box::new(SumAllBack { n }) },
    )
}

/// Mean of a list of scalar tensors.
pub fn mean_of_scalars(xs: &[Tensor]) -> Tensor {
    assert!(!xs.is_empty());
    let mut acc = xs[0].clone();
    for x in &xs[1..] {
        acc = add(&acc, x);
    }
    affine_const(&acc, 1.0 / xs.len() as Elem, 0.0)
}

// ---------------------------------------------------------------------------
// Spiking activation with surrogate gradient
// ---------------------------------------------------------------------------

/// Triangular surrogate derivative of unit mass with width `temp`.
pub fn hat(x: Elem, temp: Elem) -> Elem {
    let t = (1.0 - (x / temp).abs()).max(0.0);
    t / temp
}

/// Antiderivative of [`hat`]: a C1 ramp from 0 to 1 over `[-temp, temp]`.
/// Used as the relaxed forward activation in gradient-check mode, so the
/// analytic backward (the hat itself) matches finite differences exactly.
pub fn hat_cdf(x: Elem, temp: Elem) -> Elem {
    if x <= -temp {
        0.0
    } else if x < 0.0 {
        let d = x + temp;
        d * d / (2.0 * temp * temp)
    } else if x < temp {
        let d = temp - x;
        1.0 - d * d / (2.0 * temp * temp)
    } else {
        1.0
    }
}

struct SpikeBack {
    x: Tensor,
    temp: Elem,
}
impl Backward for SpikeBack {
    fn backward(&self, grad: &[Elem], needs: &[bool]) -> Vec<Option<Vec<Elem>>> {
        vec![needs[0].then(|| {
            grad.iter().zip(self.x.data()).map(|(g, x)| g * hat(*x, self.temp)).collect()
        })]
    }
}

/// Heaviside firing on `x = u - A`. Forward output is exactly binary when
/// `relaxed` is false; the backward rule substitutes the triangular
/// surrogate in both modes. With `relaxed` the forward is the surrogate's
/// antiderivative, making the whole network finite-difference checkable.
pub fn spike(x: &Tensor, temp: Elem, relaxed: bool) -> Tensor {
    let data: Vec<Elem> = if relaxed {
        x.data().iter().map(|v| hat_cdf(*v, temp)).collect()
    } else {
        x.data().iter().map(|v| if *v >= 0.0 { 1.0 } else { 0.0 }).collect()
    };
    Tensor::from_op(
        x.shape().to_vec(),
        data,
        OpRecord { parents: vec![x.clone()], rule: Box::new(SpikeBack { x: x.clone(), temp }) },
    )
}

// ---------------------------------------------------------------------------
// Cross-entropy over logit maps
// ---------------------------------------------------------------------------

struct CrossEntropyBack {
    probs: Vec<Elem>,
    labels: Vec<u8>,
    ignore: u8,
    classes: usize,
    spatial: usize,
    n_labeled: usize,
}
impl Backward for CrossEntropyBack {
    fn backward(&self, grad: &[Elem], needs: &[bool]) -> Vec<Option<Vec<Elem>>> {
        vec![needs[0].then(|| {
            let g0 = grad[0] / self.n_labeled as Elem;
            let mut g = vec![0.0; self.probs.len()];
            let batch = self.labels.len() / self.spatial;
            for b in 0..batch {
                for i in 0..self.spatial {
                    let y = self.labels[b * self.spatial + i];
                    if y == self.ignore {
                        continue;
                    }
                    for c in 0..self.classes {
                        let idx = (b * self.classes + c) * self.spatial + i;
                        let t = if c == y as usize { 1.0 } else { 0.0 };
                        g[idx] = g0 * (self.probs[idx] - t);
                    }
                }
            }
            g
        })]
    }
}

/// Average per-pixel cross-entropy of `scores` `[B,C,H,W]` against integer
/// labels (row-major `B*H*W`), skipping `ignore` pixels. Stabilized via
/// log-sum-exp; errors when every pixel is ignored.
pub fn cross_entropy_logits(scores: &Tensor, labels: &[u8], ignore: u8) -> Result<Tensor> {
    let s = scores.shape();
    assert_eq!(s.len(), 4, "cross_entropy expects [B,C,H,W] scores");
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let spatial = h * w;
    if labels.len() != b * spatial {
        return Err(Error::Shape(format!(
            "label count {} does not match {}x{}x{} score map",
            labels.len(),
            b,
            h,
            w
        )));
    }
    let mut probs = vec![0.0; scores.len()];
    let mut loss = 0.0;
    let mut n_labeled = 0usize;
    for bi in 0..b {
        for i in 0..spatial {
            let idx = |k: usize| (bi * c + k) * spatial + i;
            let mut m = Elem::NEG_INFINITY;
            for k in 0..c {
                m = m.max(scores.data()[idx(k)]);
            }
            let mut z = 0.0;
            for k in 0..c {
                let e = (scores.data()[idx(k)] - m).exp();
                probs[idx(k)] = e;
                z += e;
            }
            for k in 0..c {
                probs[idx(k)] /= z;
            }
            let y = labels[bi * spatial + i];
            if y == ignore {
                continue;
            }
            if (y as usize) >= c {
                return Err(Error::Data(format!("label {} out of range for {} classes", y, c)));
            }
            n_labeled += 1;
            loss -= scores.data()[idx(y as usize)] - m - z.ln();
        }
    }
    if n_labeled == 0 {
        return Err(Error::Data("cross_entropy: every pixel is ignore-labeled".into()));
    }
    loss /= n_labeled as Elem;
    Ok(Tensor::from_op(
        vec![1],
        vec![loss],
        OpRecord {
            parents: vec![scores.clone()],
            rule: Box::new(CrossEntropyBack {
                probs,
                labels: labels.to_vec(),
                ignore,
                classes: c,
                spatial,
                n_labeled,
            }),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::backward;

    #[test]
    fn concat_shape_arithmetic() {
        let a = Tensor::zeros(&[1, 64, 4, 4]);
        let b = Tensor::zeros(&[1, 64, 4, 4]);
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[1, 128, 4, 4]);
        // mismatched non-channel extent is rejected
        let d = Tensor::zeros(&[1, 64, 5, 4]);
        assert!(concat_channels(&[&a, &d]).is_err());
    }

    #[test]
    fn softmax_symmetry() {
        let x = Tensor::from_vec(&[3], vec![0.7, 0.7, 0.7]).unwrap();
        let p = softmax(&x, 0);
        for v in p.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn nearest_upsample_replicates() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = upsample_nearest(&x, 2);
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        #[rustfmt::skip]
        let expect = vec![
            1.0, 1.0, 0.0, 0.0,
            1.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 1.0,
            0.0, 0.0, 1.0, 1.0,
        ];
        assert_eq!(y.data(), &expect[..]);
        // closure: binary in, binary out
        assert!(y.data().iter().all(|v| *v == 0.0 || *v == 1.0));
    }

    #[test]
    fn average_upsample_matches_reference() {
        // Delta image through the averaging upsampler vs a directly coded
        // per-pixel interpolation reference.
        let mut img = vec![0.0; 16];
        img[5] = 1.0; // (1,1) in a 4x4 grid
        let x = Tensor::from_vec(&[1, 1, 4, 4], img.clone()).unwrap();
        let y = upsample_average(&x, 2);
        let f = 2usize;
        for i in 0..8 {
            for j in 0..8 {
                // reference: independent bilinear gather with clamping
                let sy = (i as Elem + 0.5) / f as Elem - 0.5;
                let sx = (j as Elem + 0.5) / f as Elem - 0.5;
                let y0 = sy.floor();
                let x0 = sx.floor();
                let (fy, fx) = (sy - y0, sx - x0);
                let gy = |r: Elem| (r.max(0.0) as usize).min(3);
                let mut expect = 0.0;
                for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                    for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                        expect += img[gy(y0 + dy) * 4 + gy(x0 + dx)] * wy * wx;
                    }
                }
                let got = y.data()[i * 8 + j];
                assert!((got - expect).abs() < 1e-6, "({i},{j}): {got} vs {expect}");
            }
        }
    }

    #[test]
    fn spike_is_binary_and_surrogate_flows() {
        let x = Tensor::from_vec(&[4], vec![-0.6, -0.1, 0.0, 0.4]).unwrap().requires_grad();
        let y = spike(&x, 1.0, false);
        assert_eq!(y.data(), &[0.0, 0.0, 1.0, 1.0]);
        let loss = sum_all(&y);
        backward(&loss);
        let g = x.grad().unwrap();
        assert!((g[0] - hat(-0.6, 1.0)).abs() < 1e-12);
        assert!((g[2] - 1.0).abs() < 1e-12); // hat(0) = 1/temp
    }

    #[test]
    fn hat_cdf_is_antiderivative() {
        // numeric derivative of hat_cdf equals hat away from nothing (C1)
        for temp in [0.5, 1.0, 2.0] {
            for i in -30..30 {
                let x = i as Elem * 0.1;
                let h = 1e-6;
                let num = (hat_cdf(x + h, temp) - hat_cdf(x - h, temp)) / (2.0 * h);
                assert!((num - hat(x, temp)).abs() < 1e-5, "x={x} temp={temp}");
            }
        }
    }

    #[test]
    fn cross_entropy_uniform_is_ln_c() {
        let scores = Tensor::zeros(&[1, 5, 2, 2]);
        let labels = vec![0u8, 1, 2, 3];
        let l = cross_entropy_logits(&scores, &labels, 255).unwrap();
        assert!((l.item() - (5.0 as Elem).ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_perfect_prediction_approaches_zero() {
        let mut s = vec![0.0; 3 * 4];
        for i in 0..4 {
            s[i] = 50.0; // class 0 logit huge
        }
        let scores = Tensor::from_vec(&[1, 3, 2, 2], s).unwrap();
        let l = cross_entropy_logits(&scores, &[0, 0, 0, 0], 255).unwrap();
        assert!(l.item() < 1e-9);
    }

    #[test]
    fn cross_entropy_all_ignored_errors() {
        let scores = Tensor::zeros(&[1, 3, 2, 2]);
        assert!(cross_entropy_logits(&scores, &[255, 255, 255, 255], 255).is_err());
    }

    #[test]
    fn cross_entropy_matches_per_pixel_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (b, c, h, w) = (2, 4, 3, 3);
        let data: Vec<Elem> = (0..b * c * h * w).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let labels: Vec<u8> =
            (0..b * h * w).map(|_| if rng.gen_bool(0.2) { 255 } else { rng.gen_range(0..c) as u8 }).collect();
        let scores = Tensor::from_vec(&[b, c, h, w], data.clone()).unwrap();
        let l = cross_entropy_logits(&scores, &labels, 255).unwrap();
        // brute-force per-pixel summation
        let mut total = 0.0;
        let mut n = 0usize;
        for bi in 0..b {
            for i in 0..h * w {
                let y = labels[bi * h * w + i];
                if y == 255 {
                    continue;
                }
                let mut z = 0.0;
                for k in 0..c {
                    z += (data[(bi * c + k) * h * w + i] as Elem).exp();
                }
                let p = (data[(bi * c + y as usize) * h * w + i] as Elem).exp() / z;
                total -= p.ln();
                n += 1;
            }
        }
        assert!((l.item() - total / n as Elem).abs() < 1e-6);
    }
}
