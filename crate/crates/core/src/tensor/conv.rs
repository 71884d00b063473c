//! 2D convolution with stride and dilation, im2col + GEMM based.

use rayon::prelude::*;

use super::gemm::{gemm, gemm_nt, gemm_tn};
use super::{Backward, Elem, OpRecord, Tensor};
use crate::error::{Error, Result};

/// Output extent of a convolution along one axis.
pub fn conv_out_dim(len: usize, k: usize, stride: usize, dilation: usize, padding: usize) -> usize {
    let span = dilation * (k - 1) + 1;
    (len + 2 * padding).saturating_sub(span) / stride + 1
}

struct ConvGeometry {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    dilation: usize,
    padding: usize,
    h_out: usize,
    w_out: usize,
}

impl ConvGeometry {
    fn col_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.h_out * self.w_out
    }
}

fn im2col(geo: &ConvGeometry, input: &[Elem], col: &mut [Elem]) {
    let (h, w) = (geo.h, geo.w);
    let cols = geo.col_cols();
    for ci in 0..geo.c_in {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for kh in 0..geo.k {
            for kw in 0..geo.k {
                let row = ((ci * geo.k + kh) * geo.k + kw) * cols;
                for ho in 0..geo.h_out {
                    let hi = (ho * geo.stride + kh * geo.dilation) as isize - geo.padding as isize;
                    let out_row = row + ho * geo.w_out;
                    if hi < 0 || hi >= h as isize {
                        col[out_row..out_row + geo.w_out].fill(0.0);
                        continue;
                    }
                    let in_row = hi as usize * w;
                    for wo in 0..geo.w_out {
                        let wi =
                            (wo * geo.stride + kw * geo.dilation) as isize - geo.padding as isize;
                        col[out_row + wo] = if wi < 0 || wi >= w as isize {
                            0.0
                        } else {
                            plane[in_row + wi as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(geo: &ConvGeometry, col: &[Elem], input_grad: &mut [Elem]) {
    let (h, w) = (geo.h, geo.w);
    let cols = geo.col_cols();
    for ci in 0..geo.c_in {
        let plane = &mut input_grad[ci * h * w..(ci + 1) * h * w];
        for kh in 0..geo.k {
            for kw in 0..geo.k {
                let row = ((ci * geo.k + kh) * geo.k + kw) * cols;
                for ho in 0..geo.h_out {
                    let hi = (ho * geo.stride + kh * geo.dilation) as isize - geo.padding as isize;
                    if hi < 0 || hi >= h as isize {
                        continue;
                    }
                    let in_row = hi as usize * w;
                    let out_row = row + ho * geo.w_out;
                    for wo in 0..geo.w_out {
                        let wi =
                            (wo * geo.stride + kw * geo.dilation) as isize - geo.padding as isize;
                        if wi >= 0 && wi < w as isize {
                            plane[in_row + wi as usize] += col[out_row + wo];
                        }
                    }
                }
            }
        }
    }
}

struct ConvBack {
    x: Tensor,
    w: Tensor,
    geo: ConvGeometry,
}

impl Backward for ConvBack {
    fn backward(&self, grad: &[Elem], needs: &[bool]) -> Vec<Option<Vec<Elem>>> {
        let geo = &self.geo;
        let rows = geo.col_rows();
        let cols = geo.col_cols();
        let in_plane = geo.c_in * geo.h * geo.w;
        let out_plane = geo.c_out * cols;

        let x_data = self.x.data();
        let w_data = self.w.data();

        // Per-item column buffers are rebuilt from the saved input; summation
        // over the batch stays in index order for bit-determinism.
        let gw = needs[1].then(|| {
            let partials: Vec<Vec<Elem>> = (0..geo.batch)
                .into_par_iter()
                .map(|b| {
                    let mut col = vec![0.0; rows * cols];
                    im2col(geo, &x_data[b * in_plane..(b + 1) * in_plane], &mut col);
                    let mut dw = vec![0.0; geo.c_out * rows];
                    gemm_nt(
                        geo.c_out,
                        cols,
                        rows,
                        &grad[b * out_plane..(b + 1) * out_plane],
                        &col,
                        &mut dw,
                        0.0,
                    );
                    dw
                })
                .collect();
            let mut dw = vec![0.0; geo.c_out * rows];
            for p in partials {
                for (a, v) in dw.iter_mut().zip(p) {
                    *a += v;
                }
            }
            dw
        });

        let gx = needs[0].then(|| {
            let mut dx = vec![0.0; geo.batch * in_plane];
            dx.par_chunks_mut(in_plane).enumerate().for_each(|(b, dst)| {
                let mut dcol = vec![0.0; rows * cols];
                gemm_tn(
                    rows,
                    geo.c_out,
                    cols,
                    w_data,
                    &grad[b * out_plane..(b + 1) * out_plane],
                    &mut dcol,
                    0.0,
                );
                col2im(geo, &dcol, dst);
            });
            dx
        });

        vec![gx, gw]
    }
}

/// 2D convolution of `input [B,Cin,H,W]` with `weight [Cout,Cin,k,k]`.
/// Forward values equal the direct summation definition; the backward rule
/// produces exact gradients with respect to both input and weight.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    dilation: usize,
    padding: usize,
) -> Result<Tensor> {
    let xs = input.shape();
    let ws = weight.shape();
    if xs.len() != 4 || ws.len() != 4 {
        return Err(Error::Shape(format!(
            "conv2d expects 4-d input and weight, got {:?} and {:?}",
            xs, ws
        )));
    }
    if ws[2] != ws[3] {
        return Err(Error::Shape(format!("conv2d expects square kernels, got {:?}", ws)));
    }
    if xs[1] != ws[1] {
        return Err(Error::Shape(format!(
            "conv2d channel mismatch: input has {} channels, weight expects {}",
            xs[1], ws[1]
        )));
    }
    assert!(stride >= 1 && dilation >= 1);
    let geo = ConvGeometry {
        batch: xs[0],
        c_in: xs[1],
        h: xs[2],
        w: xs[3],
        c_out: ws[0],
        k: ws[2],
        stride,
        dilation,
        padding,
        h_out: conv_out_dim(xs[2], ws[2], stride, dilation, padding),
        w_out: conv_out_dim(xs[3], ws[2], stride, dilation, padding),
    };
    if geo.h_out == 0 || geo.w_out == 0 {
        return Err(Error::Shape(format!(
            "conv2d produces empty output for input {:?} kernel {} stride {} dilation {} padding {}",
            xs, geo.k, stride, dilation, padding
        )));
    }
    let rows = geo.col_rows();
    let cols = geo.col_cols();
    let in_plane = geo.c_in * geo.h * geo.w;
    let out_plane = geo.c_out * cols;
    let mut data = vec![0.0; geo.batch * out_plane];
    let x_data = input.data();
    let w_data = weight.data();
    data.par_chunks_mut(out_plane).enumerate().for_each(|(b, dst)| {
        let mut col = vec![0.0; rows * cols];
        im2col(&geo, &x_data[b * in_plane..(b + 1) * in_plane], &mut col);
        gemm(geo.c_out, rows, cols, w_data, &col, dst, 0.0);
    });
    let shape = vec![geo.batch, geo.c_out, geo.h_out, geo.w_out];
    Ok(Tensor::from_op(
        shape,
        data,
        OpRecord {
            parents: vec![input.clone(), weight.clone()],
            rule: Box::new(ConvBack { x: input.clone(), w: weight.clone(), geo }),
        },
    ))
}

/// Direct-summation reference convolution: seven nested loops over an
/// explicitly zero-padded input. Independent of the im2col path; used as
/// the brute-force oracle.
pub fn conv2d_reference(
    input: &[Elem],
    in_shape: (usize, usize, usize, usize),
    weight: &[Elem],
    w_shape: (usize, usize, usize),
    stride: usize,
    dilation: usize,
    padding: usize,
) -> (Vec<Elem>, (usize, usize)) {
    conv2d_counted(input, in_shape, weight, w_shape, stride, dilation, padding).0
}

/// Reference convolution that also counts every executed accumulate
/// (one increment per multiply-add, padding positions included).
#[allow(clippy::type_complexity)]
pub fn conv2d_counted(
    input: &[Elem],
    in_shape: (usize, usize, usize, usize),
    weight: &[Elem],
    w_shape: (usize, usize, usize),
    stride: usize,
    dilation: usize,
    padding: usize,
) -> ((Vec<Elem>, (usize, usize)), u64) {
    let (batch, c_in, h, w) = in_shape;
    let (c_out, c_in_w, k) = w_shape;
    assert_eq!(c_in, c_in_w);
    // explicit zero-padded copy so every kernel tap executes an accumulate
    let (ph, pw) = (h + 2 * padding, w + 2 * padding);
    let mut padded = vec![0.0; batch * c_in * ph * pw];
    for b in 0..batch {
        for ci in 0..c_in {
            for i in 0..h {
                for j in 0..w {
                    padded[((b * c_in + ci) * ph + i + padding) * pw + j + padding] =
                        input[((b * c_in + ci) * h + i) * w + j];
                }
            }
        }
    }
    let h_out = conv_out_dim(h, k, stride, dilation, padding);
    let w_out = conv_out_dim(w, k, stride, dilation, padding);
    let mut out = vec![0.0; batch * c_out * h_out * w_out];
    let mut count: u64 = 0;
    for b in 0..batch {
        for co in 0..c_out {
            for ho in 0..h_out {
                for wo in 0..w_out {
                    let mut acc = 0.0;
                    for ci in 0..c_in {
                        for kh in 0..k {
                            for kw in 0..k {
                                let hi = ho * stride + kh * dilation;
                                let wi = wo * stride + kw * dilation;
                                acc += padded[((b * c_in + ci) * ph + hi) * pw + wi]
                                    * weight[((co * c_in + ci) * k + kh) * k + kw];
                                count += 1;
                            }
                        }
                    }
                    out[((b * c_out + co) * h_out + ho) * w_out + wo] = acc;
                }
            }
        }
    }
    ((out, (h_out, w_out)), count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_input_gives_zero_output() {
        let x = Tensor::zeros(&[1, 2, 5, 5]);
        let w = Tensor::from_vec(&[3, 2, 3, 3], (0..54).map(|i| i as Elem).collect()).unwrap();
        let y = conv2d(&x, &w, 1, 1, 1).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_size_case() {
        let x = Tensor::from_vec(&[1, 1, 1, 1], vec![2.0]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![3.0]).unwrap();
        let y = conv2d(&x, &w, 1, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[6.0]);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let x = Tensor::zeros(&[1, 3, 5, 5]);
        let w = Tensor::zeros(&[4, 2, 3, 3]);
        assert!(conv2d(&x, &w, 1, 1, 1).is_err());
    }

    #[test]
    fn dilated_conv_matches_loop_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let x_data: Vec<Elem> = (0..1 * 2 * 5 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w_data: Vec<Elem> = (0..3 * 2 * 3 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(&[1, 2, 5, 5], x_data.clone()).unwrap();
        let w = Tensor::from_vec(&[3, 2, 3, 3], w_data.clone()).unwrap();
        let y = conv2d(&x, &w, 1, 2, 2).unwrap();
        let (expect, (h_out, w_out)) =
            conv2d_reference(&x_data, (1, 2, 5, 5), &w_data, (3, 2, 3), 1, 2, 2);
        assert_eq!(y.shape(), &[1, 3, h_out, w_out]);
        for (a, b) in y.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn strided_conv_matches_loop_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for (stride, dil, pad, k) in [(2, 1, 1, 3), (4, 1, 2, 5), (1, 3, 3, 3), (2, 2, 2, 3)] {
            let (b, ci, h, w, co) = (2, 3, 9, 11, 4);
            let x_data: Vec<Elem> = (0..b * ci * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w_data: Vec<Elem> =
                (0..co * ci * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = Tensor::from_vec(&[b, ci, h, w], x_data.clone()).unwrap();
            let wt = Tensor::from_vec(&[co, ci, k, k], w_data.clone()).unwrap();
            let y = conv2d(&x, &wt, stride, dil, pad).unwrap();
            let (expect, _) =
                conv2d_reference(&x_data, (b, ci, h, w), &w_data, (co, ci, k), stride, dil, pad);
            for (a, bb) in y.data().iter().zip(&expect) {
                assert!((a - bb).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn out_dim_formula() {
        // H' = floor((H + 2p - d(k-1) - 1)/s) + 1
        assert_eq!(conv_out_dim(64, 5, 4, 1, 2), 16);
        assert_eq!(conv_out_dim(16, 3, 1, 6, 6), 16);
        assert_eq!(conv_out_dim(5, 3, 1, 2, 2), 5);
    }
}
