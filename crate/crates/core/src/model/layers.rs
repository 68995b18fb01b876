//! 3x3 convolutions, ReLU and 2x bilinear upsampling on `C x H x W` rasters,
//! with hand-written backward passes.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::raster::Raster;

pub const KERNEL: usize = 3;

/// Output extent of a 3x3 convolution with padding 1.
pub fn conv_out(n: usize, stride: usize) -> usize {
    (n - 1) / stride + 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// `[out][in][ky][kx]`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            stride,
            weight: vec![0.0; out_channels * in_channels * KERNEL * KERNEL],
            bias: vec![0.0; out_channels],
        }
    }

    /// He-normal weights, zero bias.
    pub fn init(in_channels: usize, out_channels: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let mut conv = Self::zeros(in_channels, out_channels, stride);
        let std = (2.0 / (in_channels * KERNEL * KERNEL) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        for w in &mut conv.weight {
            *w = normal.sample(rng);
        }
        conv
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.in_channels, self.out_channels, self.stride)
    }

    #[inline]
    fn widx(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_channels + i) * KERNEL + ky) * KERNEL + kx
    }

    pub fn forward(&self, x: &Raster) -> Raster {
        debug_assert_eq!(x.channels(), self.in_channels);
        let (h, w) = (x.height(), x.width());
        let (oh, ow) = (conv_out(h, self.stride), conv_out(w, self.stride));
        let s = self.stride;
        let mut out = Raster::zeros(self.out_channels, oh, ow);
        let xd = x.data();
        let od = out.data_mut();
        for o in 0..self.out_channels {
            let plane = &mut od[o * oh * ow..(o + 1) * oh * ow];
            plane.fill(self.bias[o]);
            for i in 0..self.in_channels {
                let xin = &xd[i * h * w..(i + 1) * h * w];
                for ky in 0..KERNEL {
                    for kx in 0..KERNEL {
                        let wv = self.weight[self.widx(o, i, ky, kx)];
                        if wv == 0.0 {
                            continue;
                        }
                        let (ox0, ox1) = valid_range(ow, w, s, kx);
                        for oy in 0..oh {
                            let iy = (oy * s + ky) as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &xin[iy as usize * w..(iy as usize + 1) * w];
                            let orow = &mut plane[oy * ow..(oy + 1) * ow];
                            for ox in ox0..ox1 {
                                orow[ox] += wv * row[ox * s + kx - 1];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grad` and returns the input
    /// gradient when `need_input` is set.
    pub fn backward(&self, x: &Raster, dout: &Raster, grad: &mut Conv2d, need_input: bool) -> Option<Raster> {
        let (h, w) = (x.height(), x.width());
        let (oh, ow) = (dout.height(), dout.width());
        let s = self.stride;
        let xd = x.data();
        let dd = dout.data();
        let mut dx = need_input.then(|| Raster::zeros(self.in_channels, h, w));
        for o in 0..self.out_channels {
            let dplane = &dd[o * oh * ow..(o + 1) * oh * ow];
            grad.bias[o] += dplane.iter().sum::<f64>();
            for i in 0..self.in_channels {
                let xin = &xd[i * h * w..(i + 1) * h * w];
                for ky in 0..KERNEL {
                    for kx in 0..KERNEL {
                        let idx = self.widx(o, i, ky, kx);
                        let wv = self.weight[idx];
                        let (ox0, ox1) = valid_range(ow, w, s, kx);
                        let mut acc = 0.0;
                        for oy in 0..oh {
                            let iy = (oy * s + ky) as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let iy = iy as usize;
                            let row = &xin[iy * w..(iy + 1) * w];
                            let drow = &dplane[oy * ow..(oy + 1) * ow];
                            for ox in ox0..ox1 {
                                acc += drow[ox] * row[ox * s + kx - 1];
                            }
                            if let Some(dx) = dx.as_mut() {
                                let dxrow = &mut dx.data_mut()[(i * h + iy) * w..(i * h + iy + 1) * w];
                                for ox in ox0..ox1 {
                                    dxrow[ox * s + kx - 1] += wv * drow[ox];
                                }
                            }
                        }
                        grad.weight[idx] += acc;
                    }
                }
            }
        }
        dx
    }
}

/// Output columns `ox` for which input column `ox * s + kx - 1` is in range.
#[inline]
fn valid_range(ow: usize, w: usize, s: usize, kx: usize) -> (usize, usize) {
    let start = if kx == 0 { 1 } else { 0 };
    // Largest ox with ox * s + kx - 1 <= w - 1.
    let end = (w + 1 - kx).div_ceil(s);
    (start, end.min(ow))
}

pub fn relu_inplace(x: &mut Raster) {
    for v in x.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries where the pre-activation was not positive.
pub fn relu_backward(pre: &Raster, grad: &mut Raster) {
    for (g, &p) in grad.data_mut().iter_mut().zip(pre.data()) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Source taps for one output index of a 2x bilinear upsample with
/// half-pixel centres: `(i0, i1, weight on i1)`.
fn taps(n_in: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n_in)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn upsample2(x: &Raster) -> Raster {
    let (c, h, w) = (x.channels(), x.height(), x.width());
    let (ty, tx) = (taps(h), taps(w));
    let mut out = Raster::zeros(c, 2 * h, 2 * w);
    for ch in 0..c {
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = x.get(ch, y0, x0) * (1.0 - fx) + x.get(ch, y0, x1) * fx;
                let bot = x.get(ch, y1, x0) * (1.0 - fx) + x.get(ch, y1, x1) * fx;
                out.set(ch, oy, ox, top * (1.0 - fy) + bot * fy);
            }
        }
    }
    out
}

pub fn upsample2_backward(dout: &Raster) -> Raster {
    let (c, h, w) = (dout.channels(), dout.height() / 2, dout.width() / 2);
    let (ty, tx) = (taps(h), taps(w));
    let mut dx = Raster::zeros(c, h, w);
    let d = dx.data_mut();
    for ch in 0..c {
        let base = ch * h * w;
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let g = dout.get(ch, oy, ox);
                d[base + y0 * w + x0] += g * (1.0 - fy) * (1.0 - fx);
                d[base + y0 * w + x1] += g * (1.0 - fy) * fx;
                d[base + y1 * w + x0] += g * fy * (1.0 - fx);
                d[base + y1 * w + x1] += g * fy * fx;
            }
        }
    }
    dx
}
