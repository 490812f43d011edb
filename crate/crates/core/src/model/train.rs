//! Gradients over batches and the training loop.

use indexmap::IndexMap;
use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::loss::{boundary_labels, pem_loss_grad, tem_loss_grad, BoundaryLabels, PemLossConfig};
use super::network::Network;
use super::params::ModelParams;
use crate::bm::{gt_iou_map, GtIouMap, ProposalMask};
use crate::dataio::{rescale_features, AnnotationSet, FeatureSequence, Subset, VideoAnnotation};
use crate::error::{Error, Result};
use crate::preprocess::{augment, remove_long_coverage, resample_short, PreprocessConfig};

/// One training input at the model's temporal scale, with its targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Stable identity used to derive the example's random stream.
    pub key: u64,
    pub features: FeatureSequence,
    pub labels: BoundaryLabels,
    pub gt: GtIouMap,
}

impl Network {
    pub fn pem_config(&self) -> PemLossConfig {
        let c = self.config();
        PemLossConfig {
            lambda_cls: c.lambda_cls,
            lambda_reg: c.lambda_reg,
            positive_iou: c.positive_iou,
            reg_high_iou: c.reg_high_iou,
            reg_low_iou: c.reg_low_iou,
        }
    }

    /// Resamples a video's features to `T` and builds its targets.
    pub fn prepare_example(&self, seq: &FeatureSequence, ann: &VideoAnnotation) -> Result<Example> {
        let len = self.config().len;
        Ok(Example {
            key: stable_key(&ann.video_id),
            features: rescale_features(seq, len)?,
            labels: boundary_labels(ann, len),
            gt: gt_iou_map(self.sampling().grid(), ann),
        })
    }

    /// Loss of one example and its exact gradient. When `training`, the
    /// proposal mask is drawn from `rng` first; the regression strata are
    /// drawn after it.
    pub fn example_gradient<R: Rng + ?Sized>(
        &self,
        params: &ModelParams,
        ex: &Example,
        training: bool,
        rng: &mut R,
    ) -> Result<(f64, ModelParams)> {
        let cfg = self.config();
        let mask = if training {
            ProposalMask::draw(&cfg.mask, self.sampling().grid(), cfg.hidden_channels, rng)
        } else {
            ProposalMask::Identity
        };
        self.example_gradient_with_mask(params, ex, mask, rng)
    }

    pub(crate) fn example_gradient_with_mask<R: Rng + ?Sized>(
        &self,
        params: &ModelParams,
        ex: &Example,
        mask: ProposalMask,
        rng: &mut R,
    ) -> Result<(f64, ModelParams)> {
        let (out, cache) = self.forward_with_mask(params, &ex.features, mask)?;
        let (tem, d_start, d_end) = tem_loss_grad(out.p_start.view(), out.p_end.view(), &ex.labels);
        let (pem, d_cls, d_reg) = pem_loss_grad(
            out.p_cls.view(),
            out.p_reg.view(),
            ex.gt.view(),
            self.sampling().grid(),
            &self.pem_config(),
            rng,
        );
        let loss = tem + pem.total;
        let grads = self.backward(params, &out, &cache, &d_start, &d_end, &d_cls, &d_reg);
        Ok((loss, grads))
    }
}

/// FNV-1a; stable across runs and platforms.
fn stable_key(id: &str) -> u64 {
    id.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Deterministic per-example random stream.
pub fn example_rng(seed: u64, epoch: u64, step: u64, index: u64) -> ChaCha8Rng {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [epoch, step, index] {
        h = splitmix(h ^ v.wrapping_mul(0xD1B5_4A32_D192_ED03));
    }
    ChaCha8Rng::seed_from_u64(h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean loss over a batch and the gradient of that mean. Each example draws
/// its mask and regression strata from `example_rng(step_seed, 0, 0, key)`,
/// so the result does not depend on batch order beyond summation rounding.
/// Examples may be processed in parallel; the reduction runs in index order.
pub fn compute_gradients(
    net: &Network,
    params: &ModelParams,
    batch: &[Example],
    training: bool,
    step_seed: u64,
) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let parts: Vec<Result<(f64, ModelParams)>> = batch
        .par_iter()
        .map(|ex| {
            let mut rng = example_rng(step_seed, 0, 0, ex.key);
            net.example_gradient(params, ex, training, &mut rng)
        })
        .collect();
    reduce_mean(parts)
}

fn reduce_mean(parts: Vec<Result<(f64, ModelParams)>>) -> Result<(f64, ModelParams)> {
    let n = parts.len() as f64;
    let mut total = 0.0;
    let mut sum: Option<ModelParams> = None;
    for (i, part) in parts.into_iter().enumerate() {
        let (loss, g) = part?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { example: i, loss });
        }
        total += loss;
        match sum.as_mut() {
            Some(s) => s.add_scaled(&g, 1.0),
            None => sum = Some(g),
        }
    }
    let mut grads = sum.expect("non-empty batch");
    grads.scale(1.0 / n);
    Ok((total / n, grads))
}

/// Mean loss only, with the same randomness as [`compute_gradients`].
pub fn batch_loss(net: &Network, params: &ModelParams, batch: &[Example], training: bool, step_seed: u64) -> Result<f64> {
    Ok(compute_gradients(net, params, batch, training, step_seed)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub examples: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

/// The training-video epoch list after the enabled filtering strategies.
pub fn epoch_list(anns: &AnnotationSet, pre: &PreprocessConfig) -> Vec<String> {
    let filtered;
    let anns = if pre.enable_long_removal {
        filtered = remove_long_coverage(anns, pre.theta_long);
        &filtered
    } else {
        anns
    };
    if pre.enable_short_resampling {
        resample_short(anns, pre.theta_short, pre.repeat_factor)
    } else {
        anns.subset(Subset::Training).map(|v| v.video_id.clone()).collect()
    }
}

/// Trains from Glorot initialisation with momentum SGD on the training
/// subset. Deterministic for a fixed config and data.
pub fn train(
    anns: &AnnotationSet,
    features: &IndexMap<String, FeatureSequence>,
    cfg: &ModelConfig,
    pre: &PreprocessConfig,
) -> Result<(ModelParams, TrainLog)> {
    train_from(ModelParams::init(cfg), anns, features, cfg, pre)
}

pub fn train_from(
    mut params: ModelParams,
    anns: &AnnotationSet,
    features: &IndexMap<String, FeatureSequence>,
    cfg: &ModelConfig,
    pre: &PreprocessConfig,
) -> Result<(ModelParams, TrainLog)> {
    pre.validate()?;
    let net = Network::new(cfg.clone())?;
    net.check_params(&params)?;
    let mut log = TrainLog::default();
    if cfg.epochs == 0 {
        return Ok((params, log));
    }
    let base = epoch_list(anns, pre);
    if base.is_empty() {
        return Err(Error::InvalidArgument("no training videos".into()));
    }
    for id in &base {
        if !features.contains_key(id) {
            return Err(Error::InvalidArgument(format!("missing features for video {id}")));
        }
    }
    let augmenting = pre.enable_resize || pre.enable_shift;
    let mut velocity = params.zeros_like();

    for epoch in 0..cfg.epochs {
        let mut order = base.clone();
        order.shuffle(&mut example_rng(cfg.seed, epoch as u64, u64::MAX, 0));
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let parts: Vec<Result<(f64, ModelParams)>> = chunk
                .par_iter()
                .enumerate()
                .map(|(i, id)| {
                    let mut rng = example_rng(cfg.seed, epoch as u64, step as u64, i as u64);
                    let ann = anns.get(id).expect("epoch list comes from the annotation set");
                    let seq = &features[id];
                    let ex = if augmenting {
                        let (s, a) = augment(seq, ann, pre, &mut rng)?;
                        net.prepare_example(&s, &a)?
                    } else {
                        net.prepare_example(seq, ann)?
                    };
                    net.example_gradient(&params, &ex, true, &mut rng)
                })
                .collect();
            let (loss, grads) = reduce_mean(parts).map_err(|e| match e {
                Error::NonFiniteLoss { loss, .. } => Error::Divergence { epoch, step, loss },
                other => other,
            })?;
            velocity.scale(cfg.momentum);
            velocity.add_scaled(&grads, 1.0);
            params.add_scaled(&velocity, -cfg.learning_rate);
            if !params.is_finite() {
                return Err(Error::Divergence { epoch, step, loss: f64::NAN });
            }
            loss_sum += loss * chunk.len() as f64;
            steps += 1;
            debug!("epoch {epoch} step {step}: loss {loss:.6}");
        }
        let mean_loss = loss_sum / order.len() as f64;
        info!("epoch {epoch}: mean loss {mean_loss:.6} over {} examples", order.len());
        log.epochs.push(EpochLog {
            epoch,
            steps,
            examples: order.len(),
            mean_loss,
        });
    }
    Ok((params, log))
}
