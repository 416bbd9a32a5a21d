//! 3x3 stride-1 "same" convolution via im2col + GEMM.

use super::{expect_rank4, LayerCache};
use crate::error::{Error, Result};
use crate::par::*;
use crate::tensor::{gemm_serial, MatRef, Tensor};

pub const KERNEL_SIZE: usize = 3;
const TAPS: usize = KERNEL_SIZE * KERNEL_SIZE;
const PAD: isize = (KERNEL_SIZE / 2) as isize;

/// Weights `[out_ch, in_ch, 3, 3]` and bias `[out_ch]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl ConvParams {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        match (weights.shape(), bias.shape()) {
            (&[o, _, KERNEL_SIZE, KERNEL_SIZE], &[ob]) if o == ob => Ok(ConvParams { weights, bias }),
            (w, b) => Err(Error::Shape(format!(
                "conv params need weights [O,I,3,3] and bias [O], got {w:?} and {b:?}"
            ))),
        }
    }

    pub fn zeros(in_channels: usize, out_channels: usize) -> Result<Self> {
        Self::new(
            Tensor::zeros(&[out_channels, in_channels, KERNEL_SIZE, KERNEL_SIZE])?,
            Tensor::zeros(&[out_channels])?,
        )
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }
}

/// Unfolds one `(C, H, W)` sample into a `[C*9, H*W]` patch matrix.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, col: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..KERNEL_SIZE {
            for kx in 0..KERNEL_SIZE {
                let row = &mut col[(ci * TAPS + ky * KERNEL_SIZE + kx) * hw..][..hw];
                let dx = kx as isize - PAD;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let out = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - PAD;
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    out[..x_lo].fill(0.0);
                    for xo in x_lo..x_hi {
                        out[xo] = src[(xo as isize + dx) as usize];
                    }
                    out[x_hi..].fill(0.0);
                }
            }
        }
    }
}

/// Folds a `[C*9, H*W]` patch-gradient matrix back onto a `(C, H, W)` sample.
fn col2im(col: &[f64], c: usize, h: usize, w: usize, x: &mut [f64]) {
    let hw = h * w;
    x.fill(0.0);
    for ci in 0..c {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..KERNEL_SIZE {
            for kx in 0..KERNEL_SIZE {
                let row = &col[(ci * TAPS + ky * KERNEL_SIZE + kx) * hw..][..hw];
                let dx = kx as isize - PAD;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + ky as isize - PAD;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let g = &row[y * w..(y + 1) * w];
                    for xo in x_lo..x_hi {
                        dst[(xo as isize + dx) as usize] += g[xo];
                    }
                }
            }
        }
    }
}

fn check_input(x: &Tensor, p: &ConvParams) -> Result<(usize, usize, usize, usize)> {
    let (b, c, h, w) = expect_rank4(x, "conv2d")?;
    if c != p.in_channels() {
        return Err(Error::Shape(format!(
            "conv2d input has {c} channels, kernel expects {}",
            p.in_channels()
        )));
    }
    Ok((b, c, h, w))
}

/// Stride-1 zero-padded convolution; output keeps the input's spatial size.
pub fn conv2d_forward(x: &Tensor, p: &ConvParams, cache: &mut LayerCache) -> Result<Tensor> {
    let (b, cin, h, w) = check_input(x, p)?;
    let cout = p.out_channels();
    let hw = h * w;
    let k = cin * TAPS;
    let mut out = vec![0.0; b * cout * hw];
    out.par_chunks_mut(cout * hw)
        .zip(x.data().par_chunks(cin * hw))
        .for_each(|(o, xs)| {
            let mut col = vec![0.0; k * hw];
            im2col(xs, cin, h, w, &mut col);
            gemm_serial(
                cout,
                k,
                hw,
                MatRef::row_major(p.weights.data(), k),
                MatRef::row_major(&col, hw),
                o,
                false,
            );
            for (plane, &bias) in o.chunks_mut(hw).zip(p.bias.data()) {
                plane.iter_mut().for_each(|v| *v += bias);
            }
        });
    cache.input = Some(x.clone());
    cache.input_shape = x.shape().to_vec();
    Tensor::from_vec(&[b, cout, h, w], out)
}

/// Gradients `(grad_x, grad_w, grad_b)` of the forward map recorded in `cache`.
///
/// Per-sample weight gradients are summed in sample order regardless of how
/// many workers computed them.
pub fn conv2d_backward(
    grad_out: &Tensor,
    cache: &LayerCache,
    p: &ConvParams,
) -> Result<(Tensor, Tensor, Tensor)> {
    let x = cache
        .input
        .as_ref()
        .ok_or_else(|| Error::Shape("conv2d backward called without a forward cache".into()))?;
    let (b, cin, h, w) = check_input(x, p)?;
    let cout = p.out_channels();
    if grad_out.shape() != [b, cout, h, w] {
        return Err(Error::Shape(format!(
            "conv2d grad_out {:?} does not match forward output {:?}",
            grad_out.shape(),
            [b, cout, h, w]
        )));
    }
    let hw = h * w;
    let k = cin * TAPS;
    let g = grad_out.data();

    let mut grad_b = vec![0.0; cout];
    for gs in g.chunks(cout * hw) {
        for (acc, plane) in grad_b.iter_mut().zip(gs.chunks(hw)) {
            *acc += plane.iter().sum::<f64>();
        }
    }

    let mut grad_x = vec![0.0; b * cin * hw];
    grad_x
        .par_chunks_mut(cin * hw)
        .zip(g.par_chunks(cout * hw))
        .for_each(|(gx, gs)| {
            let mut gcol = vec![0.0; k * hw];
            gemm_serial(
                k,
                cout,
                hw,
                MatRef::transposed(p.weights.data(), k),
                MatRef::row_major(gs, hw),
                &mut gcol,
                false,
            );
            col2im(&gcol, cin, h, w, gx);
        });

    let mut grad_w = vec![0.0; cout * k];
    let group = current_num_threads().max(1);
    let samples: Vec<usize> = (0..b).collect();
    for chunk in samples.chunks(group) {
        let partials: Vec<Vec<f64>> = chunk
            .par_iter()
            .map(|&s| {
                let mut col = vec![0.0; k * hw];
                im2col(&x.data()[s * cin * hw..(s + 1) * cin * hw], cin, h, w, &mut col);
                let mut dw = vec![0.0; cout * k];
                gemm_serial(
                    cout,
                    hw,
                    k,
                    MatRef::row_major(&g[s * cout * hw..(s + 1) * cout * hw], hw),
                    MatRef::transposed(&col, hw),
                    &mut dw,
                    false,
                );
                dw
            })
            .collect();
        for dw in partials {
            grad_w.iter_mut().zip(&dw).for_each(|(a, d)| *a += d);
        }
    }

    Ok((
        Tensor::from_vec(&[b, cin, h, w], grad_x)?,
        Tensor::from_vec(p.weights.shape(), grad_w)?,
        Tensor::from_vec(&[cout], grad_b)?,
    ))
}

/// Direct six-loop convolution, kept as an independent check on the GEMM path.
pub fn conv2d_reference(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let (b, cin, h, w) = check_input(x, p)?;
    let cout = p.out_channels();
    let mut out = Tensor::zeros(&[b, cout, h, w])?;
    let wd = p.weights.data();
    let xd = x.data();
    let od = out.data_mut();
    for n in 0..b {
        for o in 0..cout {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = p.bias.data()[o];
                    for i in 0..cin {
                        for ky in 0..KERNEL_SIZE {
                            for kx in 0..KERNEL_SIZE {
                                let sy = y as isize + ky as isize - PAD;
                                let sx = xx as isize + kx as isize - PAD;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += wd[((o * cin + i) * KERNEL_SIZE + ky) * KERNEL_SIZE + kx]
                                    * xd[((n * cin + i) * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    od[((n * cout + o) * h + y) * w + xx] = acc;
                }
            }
        }
    }
    Ok(out)
}
