//! Dense layers on flat, channel-major buffers, with their adjoints.
//!
//! Convolutions use zero padding of `k / 2` on each side and keep the
//! spatial size unchanged (odd kernels only).

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub(crate) fn relu_in_place(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries whose pre-activation was not positive.
pub(crate) fn relu_backward(grad: &mut [f64], pre: &[f64]) {
    for (g, &a) in grad.iter_mut().zip(pre) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Range of output positions `i` for which `i + off - pad` lies in `0..len`.
#[inline]
fn overlap(len: usize, off: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(off);
    let hi = (len + pad).saturating_sub(off).min(len);
    (lo, hi.max(lo))
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv1d {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl Conv1d {
    /// `x`: `c_in x len`, `w`: `c_out x c_in x k`, returns `c_out x len`.
    pub fn forward(&self, x: &[f64], len: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
        let (k, pad) = (self.kernel, self.kernel / 2);
        let mut out = vec![0.0; self.c_out * len];
        for co in 0..self.c_out {
            let dst = &mut out[co * len..(co + 1) * len];
            dst.fill(b[co]);
            for ci in 0..self.c_in {
                let src = &x[ci * len..(ci + 1) * len];
                for j in 0..k {
                    let wv = w[(co * self.c_in + ci) * k + j];
                    let (lo, hi) = overlap(len, j, pad);
                    for t in lo..hi {
                        dst[t] += wv * src[t + j - pad];
                    }
                }
            }
        }
        out
    }

    /// Accumulates weight and bias gradients; returns the input gradient when asked.
    pub fn backward(
        &self,
        x: &[f64],
        len: usize,
        w: &[f64],
        grad_out: &[f64],
        grad_w: &mut [f64],
        grad_b: &mut [f64],
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let (k, pad) = (self.kernel, self.kernel / 2);
        let mut grad_x = want_input.then(|| vec![0.0; self.c_in * len]);
        for co in 0..self.c_out {
            let g = &grad_out[co * len..(co + 1) * len];
            grad_b[co] += g.iter().sum::<f64>();
            for ci in 0..self.c_in {
                let src = &x[ci * len..(ci + 1) * len];
                for j in 0..k {
                    let idx = (co * self.c_in + ci) * k + j;
                    let (lo, hi) = overlap(len, j, pad);
                    let mut acc = 0.0;
                    for t in lo..hi {
                        acc += g[t] * src[t + j - pad];
                    }
                    grad_w[idx] += acc;
                    if let Some(gx) = grad_x.as_mut() {
                        let wv = w[idx];
                        let dst = &mut gx[ci * len..(ci + 1) * len];
                        for t in lo..hi {
                            dst[t + j - pad] += wv * g[t];
                        }
                    }
                }
            }
        }
        grad_x
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv2d {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl Conv2d {
    /// `x`: `c_in x rows x cols`, `w`: `c_out x c_in x k x k`.
    pub fn forward(&self, x: &[f64], rows: usize, cols: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
        let (k, pad) = (self.kernel, self.kernel / 2);
        let plane = rows * cols;
        let mut out = vec![0.0; self.c_out * plane];
        for co in 0..self.c_out {
            let dst = &mut out[co * plane..(co + 1) * plane];
            dst.fill(b[co]);
            for ci in 0..self.c_in {
                let src = &x[ci * plane..(ci + 1) * plane];
                for ky in 0..k {
                    let (r_lo, r_hi) = overlap(rows, ky, pad);
                    for kx in 0..k {
                        let wv = w[((co * self.c_in + ci) * k + ky) * k + kx];
                        let (c_lo, c_hi) = overlap(cols, kx, pad);
                        for r in r_lo..r_hi {
                            let s = &src[(r + ky - pad) * cols..][..cols];
                            let d = &mut dst[r * cols..][..cols];
                            for c in c_lo..c_hi {
                                d[c] += wv * s[c + kx - pad];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        x: &[f64],
        rows: usize,
        cols: usize,
        w: &[f64],
        grad_out: &[f64],
        grad_w: &mut [f64],
        grad_b: &mut [f64],
    ) -> Vec<f64> {
        let (k, pad) = (self.kernel, self.kernel / 2);
        let plane = rows * cols;
        let mut grad_x = vec![0.0; self.c_in * plane];
        for co in 0..self.c_out {
            let g = &grad_out[co * plane..(co + 1) * plane];
            grad_b[co] += g.iter().sum::<f64>();
            for ci in 0..self.c_in {
                let src = &x[ci * plane..(ci + 1) * plane];
                let gx = &mut grad_x[ci * plane..(ci + 1) * plane];
                for ky in 0..k {
                    let (r_lo, r_hi) = overlap(rows, ky, pad);
                    for kx in 0..k {
                        let idx = ((co * self.c_in + ci) * k + ky) * k + kx;
                        let wv = w[idx];
                        let (c_lo, c_hi) = overlap(cols, kx, pad);
                        let mut acc = 0.0;
                        for r in r_lo..r_hi {
                            let off = (r + ky - pad) * cols;
                            let gr = &g[r * cols..][..cols];
                            let s = &src[off..][..cols];
                            let dx = &mut gx[off..][..cols];
                            for c in c_lo..c_hi {
                                acc += gr[c] * s[c + kx - pad];
                                dx[c + kx - pad] += wv * gr[c];
                            }
                        }
                        grad_w[idx] += acc;
                    }
                }
            }
        }
        grad_x
    }
}
