//! Forward pass and its exact adjoint.
//!
//! ```text
//! x (C_in x T) -> conv3 -> relu -> conv3 -> relu = h (C_h x T)
//! h -> conv -> sigmoid = p_start ; h -> conv -> sigmoid = p_end
//! h -> sample (C_h x N x D x T) -> mask -> sum_n w_n * . + b (C_h x D x T)
//!   -> conv3x3 -> relu -> 1x1 -> sigmoid = p_cls, p_reg (D x T)
//! ```

use ndarray::{Array1, Array2, Array4, ArrayView2};
use rand::Rng;

use super::config::ModelConfig;
use super::layers::{relu_backward, relu_in_place, sigmoid, Conv1d, Conv2d};
use super::params::ModelParams;
use crate::bm::{build_sampling_matrix, sample_proposal_features, scatter_proposal_gradient, ProposalMask, SamplingMatrix};
use crate::dataio::{rescale_features, FeatureSequence};
use crate::error::{Error, Result};

/// Boundary probabilities (length `T`) and confidence maps (`D x T`).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkOutputs {
    pub p_start: Array1<f64>,
    pub p_end: Array1<f64>,
    pub p_cls: Array2<f64>,
    pub p_reg: Array2<f64>,
}

impl NetworkOutputs {
    pub fn len(&self) -> usize {
        self.p_start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_start.is_empty()
    }

    pub fn durations(&self) -> usize {
        self.p_cls.nrows()
    }

    pub fn check_shape(&self) -> Result<()> {
        let (len, d) = (self.len(), self.durations());
        if self.p_end.len() != len || self.p_cls.dim() != (d, len) || self.p_reg.dim() != (d, len) {
            return Err(Error::ShapeMismatch(format!(
                "inconsistent outputs: start {}, end {}, cls {:?}, reg {:?}",
                len,
                self.p_end.len(),
                self.p_cls.dim(),
                self.p_reg.dim()
            )));
        }
        Ok(())
    }
}

/// The fixed architecture: config plus the shared sampling matrix.
#[derive(Debug, Clone)]
pub struct Network {
    cfg: ModelConfig,
    sampling: SamplingMatrix,
}

/// Intermediate activations kept for the backward pass.
pub(crate) struct Cache {
    x: Vec<f64>,
    a1: Vec<f64>,
    h1: Vec<f64>,
    a2: Vec<f64>,
    h: Vec<f64>,
    sampled: Array4<f64>,
    mask: ProposalMask,
    reduced: Vec<f64>,
    a3: Vec<f64>,
    q: Vec<f64>,
}

impl Network {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let sampling = build_sampling_matrix(cfg.len, cfg.durations, cfg.samples, cfg.expansion)?;
        Ok(Self { cfg, sampling })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn sampling(&self) -> &SamplingMatrix {
        &self.sampling
    }

    fn convs(&self) -> (Conv1d, Conv1d, Conv1d, Conv2d) {
        let c = &self.cfg;
        (
            Conv1d { c_in: c.input_channels, c_out: c.hidden_channels, kernel: c.base_kernel },
            Conv1d { c_in: c.hidden_channels, c_out: c.hidden_channels, kernel: c.base_kernel },
            Conv1d { c_in: c.hidden_channels, c_out: 1, kernel: c.boundary_kernel },
            Conv2d { c_in: c.hidden_channels, c_out: c.hidden_channels, kernel: c.plane_kernel },
        )
    }

    pub fn check_params(&self, params: &ModelParams) -> Result<()> {
        for ((name, t), want) in ModelParams::NAMES
            .iter()
            .zip(params.tensors())
            .zip(ModelParams::shapes(&self.cfg))
        {
            if t.shape != want {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {name} has shape {:?}, expected {want:?}",
                    t.shape
                )));
            }
        }
        Ok(())
    }

    /// Runs the network. Masking is drawn from `rng` only when `training`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        params: &ModelParams,
        seq: &FeatureSequence,
        training: bool,
        rng: &mut R,
    ) -> Result<NetworkOutputs> {
        let mask = if training {
            ProposalMask::draw(&self.cfg.mask, self.sampling.grid(), self.cfg.hidden_channels, rng)
        } else {
            ProposalMask::Identity
        };
        Ok(self.forward_with_mask(params, seq, mask)?.0)
    }

    /// Inference-mode forward pass.
    pub fn predict(&self, params: &ModelParams, seq: &FeatureSequence) -> Result<NetworkOutputs> {
        Ok(self.forward_with_mask(params, seq, ProposalMask::Identity)?.0)
    }

    /// Inference on a video of any length, rescaled to `T` snippets first.
    pub fn predict_video(&self, params: &ModelParams, seq: &FeatureSequence) -> Result<NetworkOutputs> {
        self.predict(params, &rescale_features(seq, self.cfg.len)?)
    }

    pub(crate) fn forward_with_mask(
        &self,
        params: &ModelParams,
        seq: &FeatureSequence,
        mask: ProposalMask,
    ) -> Result<(NetworkOutputs, Cache)> {
        let cfg = &self.cfg;
        let (len, n_d, ch) = (cfg.len, cfg.durations, cfg.hidden_channels);
        if seq.len() != len || seq.channels() != cfg.input_channels {
            return Err(Error::ShapeMismatch(format!(
                "model expects {}x{} features, got {}x{}",
                len,
                cfg.input_channels,
                seq.len(),
                seq.channels()
            )));
        }
        self.check_params(params)?;
        let (base1, base2, head, plane_conv) = self.convs();

        // channel-major copy of the time-major input
        let data = seq.data();
        let mut x = vec![0.0; cfg.input_channels * len];
        for ((t, c), &v) in data.indexed_iter() {
            x[c * len + t] = v as f64;
        }

        let a1 = base1.forward(&x, len, &params.base1_w.data, &params.base1_b.data);
        let mut h1 = a1.clone();
        relu_in_place(&mut h1);
        let a2 = base2.forward(&h1, len, &params.base2_w.data, &params.base2_b.data);
        let mut h = a2.clone();
        relu_in_place(&mut h);

        let p_start: Vec<f64> = head
            .forward(&h, len, &params.start_w.data, &params.start_b.data)
            .into_iter()
            .map(sigmoid)
            .collect();
        let p_end: Vec<f64> = head
            .forward(&h, len, &params.end_w.data, &params.end_b.data)
            .into_iter()
            .map(sigmoid)
            .collect();

        let hidden = ArrayView2::from_shape((ch, len), &h).expect("hidden layout");
        let mut sampled = sample_proposal_features(hidden, &self.sampling)?;
        mask.apply(&mut sampled);

        let plane = n_d * len;
        let s = sampled.as_slice().expect("standard layout");
        let mut reduced = vec![params.reduce_b.data[0]; ch * plane];
        for c in 0..ch {
            let dst = &mut reduced[c * plane..(c + 1) * plane];
            for (n, &w) in params.reduce_w.data.iter().enumerate() {
                let src = &s[(c * cfg.samples + n) * plane..][..plane];
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o += w * v;
                }
            }
        }

        let a3 = plane_conv.forward(&reduced, n_d, len, &params.plane_w.data, &params.plane_b.data);
        let mut q = a3.clone();
        relu_in_place(&mut q);

        let head_1x1 = |w: &[f64], b: f64| -> Vec<f64> {
            let mut z = vec![b; plane];
            for (c, &wc) in w.iter().enumerate() {
                for (o, &v) in z.iter_mut().zip(&q[c * plane..(c + 1) * plane]) {
                    *o += wc * v;
                }
            }
            z.into_iter().map(sigmoid).collect()
        };
        let p_cls = head_1x1(&params.cls_w.data, params.cls_b.data[0]);
        let p_reg = head_1x1(&params.reg_w.data, params.reg_b.data[0]);

        let outputs = NetworkOutputs {
            p_start: Array1::from(p_start),
            p_end: Array1::from(p_end),
            p_cls: Array2::from_shape_vec((n_d, len), p_cls).expect("plane"),
            p_reg: Array2::from_shape_vec((n_d, len), p_reg).expect("plane"),
        };
        let cache = Cache {
            x,
            a1,
            h1,
            a2,
            h,
            sampled,
            mask,
            reduced,
            a3,
            q,
        };
        Ok((outputs, cache))
    }

    /// Back-propagates loss gradients taken with respect to the four output
    /// probabilities. Returns parameter gradients.
    pub(crate) fn backward(
        &self,
        params: &ModelParams,
        outputs: &NetworkOutputs,
        cache: &Cache,
        d_start: &[f64],
        d_end: &[f64],
        d_cls: &[f64],
        d_reg: &[f64],
    ) -> ModelParams {
        let cfg = &self.cfg;
        let (len, n_d, ch, n_s) = (cfg.len, cfg.durations, cfg.hidden_channels, cfg.samples);
        let plane = n_d * len;
        let (base1, base2, head, plane_conv) = self.convs();
        let mut g = params.zeros_like();

        let z_start = sigmoid_backward(d_start, outputs.p_start.iter());
        let z_end = sigmoid_backward(d_end, outputs.p_end.iter());
        let z_cls = sigmoid_backward(d_cls, outputs.p_cls.iter());
        let z_reg = sigmoid_backward(d_reg, outputs.p_reg.iter());

        // 1x1 heads
        let mut d_q = vec![0.0; ch * plane];
        head_backward(&z_cls, &params.cls_w.data, &cache.q, plane, &mut g.cls_w.data, &mut g.cls_b.data, &mut d_q);
        head_backward(&z_reg, &params.reg_w.data, &cache.q, plane, &mut g.reg_w.data, &mut g.reg_b.data, &mut d_q);

        relu_backward(&mut d_q, &cache.a3);
        let d_reduced = plane_conv.backward(
            &cache.reduced,
            n_d,
            len,
            &params.plane_w.data,
            &d_q,
            &mut g.plane_w.data,
            &mut g.plane_b.data,
        );

        // sample-axis reduction
        g.reduce_b.data[0] += d_reduced.iter().sum::<f64>();
        let s = cache.sampled.as_slice().expect("standard layout");
        let mut d_sampled = Array4::<f64>::zeros((ch, n_s, n_d, len));
        {
            let ds = d_sampled.as_slice_mut().expect("fresh array");
            for c in 0..ch {
                let dr = &d_reduced[c * plane..(c + 1) * plane];
                for n in 0..n_s {
                    let off = (c * n_s + n) * plane;
                    let src = &s[off..off + plane];
                    g.reduce_w.data[n] += dr.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                    let w = params.reduce_w.data[n];
                    for (o, &v) in ds[off..off + plane].iter_mut().zip(dr) {
                        *o = w * v;
                    }
                }
            }
        }
        cache.mask.apply(&mut d_sampled);
        let d_hidden = scatter_proposal_gradient(&d_sampled, &self.sampling);
        let mut d_h: Vec<f64> = d_hidden.into_raw_vec_and_offset().0;

        // boundary heads
        for (z, w, gw, gb) in [
            (&z_start, &params.start_w, &mut g.start_w, &mut g.start_b),
            (&z_end, &params.end_w, &mut g.end_w, &mut g.end_b),
        ] {
            let dh = head
                .backward(&cache.h, len, &w.data, z, &mut gw.data, &mut gb.data, true)
                .expect("input gradient requested");
            for (a, b) in d_h.iter_mut().zip(dh) {
                *a += b;
            }
        }

        relu_backward(&mut d_h, &cache.a2);
        let mut d_h1 = base2
            .backward(&cache.h1, len, &params.base2_w.data, &d_h, &mut g.base2_w.data, &mut g.base2_b.data, true)
            .expect("input gradient requested");
        relu_backward(&mut d_h1, &cache.a1);
        base1.backward(&cache.x, len, &params.base1_w.data, &d_h1, &mut g.base1_w.data, &mut g.base1_b.data, false);
        g
    }
}

/// Adjoint of a `C -> 1` pointwise head over a plane of `plane` cells.
fn head_backward(
    dz: &[f64],
    w: &[f64],
    input: &[f64],
    plane: usize,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    grad_in: &mut [f64],
) {
    grad_b[0] += dz.iter().sum::<f64>();
    for (c, &wc) in w.iter().enumerate() {
        let x = &input[c * plane..(c + 1) * plane];
        grad_w[c] += dz.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        for (o, &z) in grad_in[c * plane..(c + 1) * plane].iter_mut().zip(dz) {
            *o += wc * z;
        }
    }
}

fn sigmoid_backward<'a>(dp: &[f64], p: impl Iterator<Item = &'a f64>) -> Vec<f64> {
    dp.iter().zip(p).map(|(d, &p)| d * p * (1.0 - p)).collect()
}
