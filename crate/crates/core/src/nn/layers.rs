//! Layer kernels over a flat parameter vector. Each layer records the
//! offsets of its weights; backward passes accumulate into a gradient vector
//! laid out like the parameters.

use serde::{Deserialize, Serialize};

use super::NnError;

/// `y = W x + b`, `W` row-major `out x inp`.
pub(crate) fn affine(w: &[f64], b: &[f64], x: &[f64], y: &mut [f64]) {
    let inp = x.len();
    for (o, yo) in y.iter_mut().enumerate() {
        let row = &w[o * inp..(o + 1) * inp];
        *yo = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Accumulates `dW += dy x^T`, `db += dy` and, when given, `dx += W^T dy`.
pub(crate) fn affine_backward(w: &[f64], x: &[f64], dy: &[f64], dw: &mut [f64], db: &mut [f64], dx: Option<&mut [f64]>) {
    let inp = x.len();
    for (o, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        db[o] += g;
        let row = &mut dw[o * inp..(o + 1) * inp];
        for (d, xi) in row.iter_mut().zip(x) {
            *d += g * xi;
        }
    }
    if let Some(dx) = dx {
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &w[o * inp..(o + 1) * inp];
            for (d, wi) in dx.iter_mut().zip(row) {
                *d += g * wi;
            }
        }
    }
}

pub(crate) fn check_finite(values: &[f64], layer: &str) -> Result<(), NnError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NnError::NonFiniteActivation(layer.to_string()))
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fully connected layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inp: usize,
    pub out: usize,
    pub w: usize,
    pub b: usize,
}

impl Dense {
    pub fn param_count(inp: usize, out: usize) -> usize {
        inp * out + out
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.out];
        affine(&p[self.w..self.w + self.inp * self.out], &p[self.b..self.b + self.out], x, &mut y);
        y
    }

    pub fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], grads: &mut [f64], dx: Option<&mut [f64]>) {
        let (wg, rest) = grads.split_at_mut(self.b);
        affine_backward(
            &p[self.w..self.w + self.inp * self.out],
            x,
            dy,
            &mut wg[self.w..self.w + self.inp * self.out],
            &mut rest[..self.out],
            dx,
        );
    }
}

/// 3x3 convolution, stride 1, no padding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub w: usize,
    pub b: usize,
}

pub const KERNEL: usize = 3;

impl Conv2d {
    pub fn param_count(in_c: usize, out_c: usize) -> usize {
        out_c * in_c * KERNEL * KERNEL + out_c
    }

    pub fn out_h(&self) -> usize {
        self.in_h - (KERNEL - 1)
    }

    pub fn out_w(&self) -> usize {
        self.in_w - (KERNEL - 1)
    }

    pub fn out_len(&self) -> usize {
        self.out_c * self.out_h() * self.out_w()
    }

    fn weight(&self, p: &[f64], o: usize, c: usize, ky: usize, kx: usize) -> f64 {
        p[self.w + ((o * self.in_c + c) * KERNEL + ky) * KERNEL + kx]
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let (oh, ow) = (self.out_h(), self.out_w());
        let plane = self.in_h * self.in_w;
        let mut y = vec![0.0; self.out_len()];
        for o in 0..self.out_c {
            let bias = p[self.b + o];
            for r in 0..oh {
                for c in 0..ow {
                    let mut acc = bias;
                    for ic in 0..self.in_c {
                        for ky in 0..KERNEL {
                            let base = ic * plane + (r + ky) * self.in_w + c;
                            for kx in 0..KERNEL {
                                acc += self.weight(p, o, ic, ky, kx) * x[base + kx];
                            }
                        }
                    }
                    y[(o * oh + r) * ow + c] = acc;
                }
            }
        }
        y
    }

    pub fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], grads: &mut [f64], mut dx: Option<&mut [f64]>) {
        let (oh, ow) = (self.out_h(), self.out_w());
        let plane = self.in_h * self.in_w;
        for o in 0..self.out_c {
            for r in 0..oh {
                for c in 0..ow {
                    let g = dy[(o * oh + r) * ow + c];
                    if g == 0.0 {
                        continue;
                    }
                    grads[self.b + o] += g;
                    for ic in 0..self.in_c {
                        for ky in 0..KERNEL {
                            let base = ic * plane + (r + ky) * self.in_w + c;
                            for kx in 0..KERNEL {
                                let wi = self.w + ((o * self.in_c + ic) * KERNEL + ky) * KERNEL + kx;
                                grads[wi] += g * x[base + kx];
                                if let Some(dx) = dx.as_deref_mut() {
                                    dx[base + kx] += g * p[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gated recurrent cell, gate order `[reset, update, new]`:
///
/// ```text
/// r  = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
/// z  = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
/// n  = tanh(W_in x + b_in + r * (W_hn h + b_hn))
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gru {
    pub inp: usize,
    pub hidden: usize,
    pub w_ih: usize,
    pub w_hh: usize,
    pub b_ih: usize,
    pub b_hh: usize,
}

/// Intermediate values of one recurrent step.
#[derive(Debug, Clone, PartialEq)]
pub struct GruCache {
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub n: Vec<f64>,
    /// `W_hn h + b_hn`.
    pub hn: Vec<f64>,
}

impl Gru {
    pub fn param_count(inp: usize, hidden: usize) -> usize {
        3 * hidden * (inp + hidden) + 6 * hidden
    }

    pub fn forward(&self, p: &[f64], x: &[f64], h: &[f64]) -> (Vec<f64>, GruCache) {
        let hd = self.hidden;
        let mut gi = vec![0.0; 3 * hd];
        let mut gh = vec![0.0; 3 * hd];
        affine(&p[self.w_ih..self.w_ih + 3 * hd * self.inp], &p[self.b_ih..self.b_ih + 3 * hd], x, &mut gi);
        affine(&p[self.w_hh..self.w_hh + 3 * hd * hd], &p[self.b_hh..self.b_hh + 3 * hd], h, &mut gh);
        let mut r = vec![0.0; hd];
        let mut z = vec![0.0; hd];
        let mut n = vec![0.0; hd];
        let mut out = vec![0.0; hd];
        for j in 0..hd {
            r[j] = sigmoid(gi[j] + gh[j]);
            z[j] = sigmoid(gi[hd + j] + gh[hd + j]);
            n[j] = (gi[2 * hd + j] + r[j] * gh[2 * hd + j]).tanh();
            out[j] = (1.0 - z[j]) * n[j] + z[j] * h[j];
        }
        let cache = GruCache {
            x: x.to_vec(),
            h: h.to_vec(),
            r,
            z,
            n,
            hn: gh[2 * hd..].to_vec(),
        };
        (out, cache)
    }

    /// Backpropagates `dh_out`; returns `(dx, dh)`.
    pub fn backward(&self, p: &[f64], cache: &GruCache, dh_out: &[f64], grads: &mut [f64]) -> (Vec<f64>, Vec<f64>) {
        let hd = self.hidden;
        let mut d_gi = vec![0.0; 3 * hd];
        let mut d_gh = vec![0.0; 3 * hd];
        let mut dh = vec![0.0; hd];
        for j in 0..hd {
            let (r, z, n) = (cache.r[j], cache.z[j], cache.n[j]);
            let g = dh_out[j];
            let dn = g * (1.0 - z);
            let dz = g * (cache.h[j] - n);
            dh[j] = g * z;
            let da_n = dn * (1.0 - n * n);
            let dr = da_n * cache.hn[j];
            let da_z = dz * z * (1.0 - z);
            let da_r = dr * r * (1.0 - r);
            d_gi[j] = da_r;
            d_gi[hd + j] = da_z;
            d_gi[2 * hd + j] = da_n;
            d_gh[j] = da_r;
            d_gh[hd + j] = da_z;
            d_gh[2 * hd + j] = da_n * r;
        }
        let mut dx = vec![0.0; self.inp];
        {
            let (head, tail) = grads.split_at_mut(self.b_ih);
            affine_backward(
                &p[self.w_ih..self.w_ih + 3 * hd * self.inp],
                &cache.x,
                &d_gi,
                &mut head[self.w_ih..self.w_ih + 3 * hd * self.inp],
                &mut tail[..3 * hd],
                Some(&mut dx),
            );
        }
        {
            let (head, tail) = grads.split_at_mut(self.b_hh);
            affine_backward(
                &p[self.w_hh..self.w_hh + 3 * hd * hd],
                &cache.h,
                &d_gh,
                &mut head[self.w_hh..self.w_hh + 3 * hd * hd],
                &mut tail[..3 * hd],
                Some(&mut dh),
            );
        }
        (dx, dh)
    }
}
