//! Training-data strategies: long-coverage removal, short-instance
//! resampling, instance resizing and channel-wise temporal shift.

use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{rescale_features, AnnotationSet, FeatureSequence, Instance, Subset, VideoAnnotation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub theta_long: f64,
    pub theta_short: f64,
    pub repeat_factor: usize,
    pub resize_lo: f64,
    pub resize_hi: f64,
    pub shift_fraction: f64,
    pub enable_long_removal: bool,
    pub enable_short_resampling: bool,
    pub enable_resize: bool,
    pub enable_shift: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            theta_long: 0.98,
            theta_short: 0.05,
            repeat_factor: 2,
            resize_lo: 0.8,
            resize_hi: 1.25,
            shift_fraction: 0.125,
            enable_long_removal: true,
            enable_short_resampling: true,
            enable_resize: true,
            enable_shift: true,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.theta_long > 0.0 && self.theta_long <= 1.0) {
            return bad(format!("theta_long must lie in (0, 1], got {}", self.theta_long));
        }
        if !(self.theta_short >= 0.0) {
            return bad(format!("theta_short must be >= 0, got {}", self.theta_short));
        }
        if self.repeat_factor == 0 {
            return bad("repeat_factor must be >= 1".into());
        }
        if !(self.resize_lo > 0.0 && self.resize_lo <= self.resize_hi && self.resize_hi.is_finite()) {
            return bad(format!(
                "resize range [{}, {}] must satisfy 0 < lo <= hi",
                self.resize_lo, self.resize_hi
            ));
        }
        if !(0.0..=0.5).contains(&self.shift_fraction) {
            return bad(format!("shift_fraction must lie in [0, 0.5], got {}", self.shift_fraction));
        }
        Ok(())
    }
}

/// Length of the union of a video's instance intervals divided by its duration.
pub fn coverage(video: &VideoAnnotation) -> f64 {
    let mut spans: Vec<(f64, f64)> = video.instances.iter().map(|i| (i.start, i.end)).collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut covered = 0.0;
    let mut current: Option<(f64, f64)> = None;
    for (s, e) in spans {
        current = match current {
            Some((cs, ce)) if s <= ce => Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                covered += ce - cs;
                Some((s, e))
            }
            None => Some((s, e)),
        };
    }
    if let Some((cs, ce)) = current {
        covered += ce - cs;
    }
    covered / video.duration
}

/// Drops training videos whose instance coverage exceeds `theta_long`.
/// Validation and testing videos always pass through.
pub fn remove_long_coverage(anns: &AnnotationSet, theta_long: f64) -> AnnotationSet {
    let kept = anns
        .iter()
        .filter(|v| v.subset != Subset::Training || coverage(v) <= theta_long)
        .cloned();
    AnnotationSet::from_videos(kept).expect("subset of a valid set is valid")
}

/// Builds one training epoch: every training video once, and videos with
/// any instance shorter than `theta_short` of the duration `repeat_factor`
/// times, repeats adjacent to the original.
pub fn resample_short(anns: &AnnotationSet, theta_short: f64, repeat_factor: usize) -> Vec<String> {
    let mut out = Vec::new();
    for v in anns.subset(Subset::Training) {
        let short = v
            .instances
            .iter()
            .any(|i| i.length() / v.duration < theta_short);
        let times = if short { repeat_factor.max(1) } else { 1 };
        out.extend(std::iter::repeat_n(v.video_id.clone(), times));
    }
    out
}

/// Picks one instance at random and stretches its snippet span by a factor
/// drawn from `[lo, hi]`, splicing it back between the unchanged flanks.
/// Snippet length in seconds is preserved, so the duration changes with the
/// snippet count and every boundary after the span moves with it.
///
/// Spans shorter than two snippets are returned unchanged.
pub fn resize_instance<R: Rng + ?Sized>(
    seq: &FeatureSequence,
    ann: &VideoAnnotation,
    factor_range: (f64, f64),
    rng: &mut R,
) -> Result<(FeatureSequence, VideoAnnotation)> {
    if ann.instances.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "video {} has no instance to resize",
            ann.video_id
        )));
    }
    let (lo, hi) = factor_range;
    if !(lo > 0.0 && lo <= hi) {
        return Err(Error::InvalidArgument(format!("bad resize range [{lo}, {hi}]")));
    }
    let pick = rng.random_range(0..ann.instances.len());
    let factor = if lo == hi { lo } else { rng.random_range(lo..=hi) };

    let len = seq.len();
    let per_second = len as f64 / ann.duration;
    let chosen = &ann.instances[pick];
    const EPS: f64 = 1e-9;
    let a = ((chosen.start * per_second + EPS).floor().max(0.0) as usize).min(len);
    let b = ((chosen.end * per_second - EPS).ceil().max(0.0) as usize).min(len);
    if b < a + 2 {
        return Ok((seq.clone(), ann.clone()));
    }
    let old_span = b - a;
    let new_span = ((factor * old_span as f64).round() as usize).max(1);
    if new_span == old_span {
        return Ok((seq.clone(), ann.clone()));
    }

    let middle = rescale_features(&seq.slice(a, b)?, new_span)?;
    let mut parts = Vec::with_capacity(3);
    let head = if a > 0 { Some(seq.slice(0, a)?) } else { None };
    let tail = if b < len { Some(seq.slice(b, len)?) } else { None };
    if let Some(h) = &head {
        parts.push(h);
    }
    parts.push(&middle);
    if let Some(t) = &tail {
        parts.push(t);
    }
    let out_seq = FeatureSequence::concat(&parts)?;

    let (a_f, b_f) = (a as f64, b as f64);
    let stretch = new_span as f64 / old_span as f64;
    let shift = new_span as f64 - old_span as f64;
    let warp = |x: f64| {
        if x <= a_f {
            x
        } else if x >= b_f {
            x + shift
        } else {
            a_f + (x - a_f) * stretch
        }
    };
    let new_duration = out_seq.len() as f64 / per_second;
    let instances = ann
        .instances
        .iter()
        .map(|i| Instance {
            start: (warp(i.start * per_second) / per_second).max(0.0),
            end: (warp(i.end * per_second) / per_second).min(new_duration),
            label: i.label.clone(),
        })
        .collect();
    let out_ann = VideoAnnotation {
        video_id: ann.video_id.clone(),
        duration: new_duration,
        subset: ann.subset,
        instances,
    };
    out_ann.validate()?;
    Ok((out_seq, out_ann))
}

/// Shifts the first `floor(fraction * C)` channels forward one snippet and the
/// next block of the same size backward one snippet, zero-filling the ends.
pub fn temporal_shift(seq: &FeatureSequence, shift_fraction: f64) -> FeatureSequence {
    let (len, channels) = seq.data().dim();
    let k = ((shift_fraction * channels as f64).floor() as usize).min(channels / 2);
    if k == 0 {
        return seq.clone();
    }
    let src = seq.data();
    let mut out: Array2<f32> = src.clone();
    out.slice_mut(s![.., ..2 * k]).fill(0.0);
    if len > 1 {
        out.slice_mut(s![1.., ..k]).assign(&src.slice(s![..len - 1, ..k]));
        out.slice_mut(s![..len - 1, k..2 * k])
            .assign(&src.slice(s![1.., k..2 * k]));
    }
    FeatureSequence::new(out).expect("shifted finite features stay finite")
}

/// On-the-fly training augmentation: each enabled strategy fires with
/// probability one half.
pub fn augment<R: Rng + ?Sized>(
    seq: &FeatureSequence,
    ann: &VideoAnnotation,
    cfg: &PreprocessConfig,
    rng: &mut R,
) -> Result<(FeatureSequence, VideoAnnotation)> {
    let mut seq = seq.clone();
    let mut ann = ann.clone();
    if cfg.enable_resize && !ann.instances.is_empty() && rng.random_bool(0.5) {
        (seq, ann) = resize_instance(&seq, &ann, (cfg.resize_lo, cfg.resize_hi), rng)?;
    }
    if cfg.enable_shift && rng.random_bool(0.5) {
        seq = temporal_shift(&seq, cfg.shift_fraction);
    }
    Ok((seq, ann))
}
