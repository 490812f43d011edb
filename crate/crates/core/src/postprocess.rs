//! From network outputs to ranked proposals and labelled detections.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bm::{tiou, ProposalGrid};
use crate::dataio::{lerp_coords, resample_position, AnnotationSet, ClassScore, FeatureSequence, OrderedEntries};
use crate::error::{Error, Result};
use crate::model::{ModelParams, Network, NetworkOutputs};

/// Version string written into detection files.
pub const DETECTION_VERSION: &str = "VERSION 1.3";

/// A class-agnostic temporal segment in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub start: f64,
    pub end: f64,
    pub score: f64,
}

impl Proposal {
    pub fn new(start: f64, end: f64, score: f64) -> Self {
        Self { start, end, score }
    }

    pub fn segment(&self) -> [f64; 2] {
        [self.start, self.end]
    }
}

/// A labelled temporal segment in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub start: f64,
    pub end: f64,
    pub label: String,
    pub score: f64,
}

impl Detection {
    pub fn segment(&self) -> [f64; 2] {
        [self.start, self.end]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostprocessConfig {
    pub sigma: f64,
    pub score_floor: f64,
    pub max_out: usize,
    pub top_k: usize,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self { sigma: 0.4, score_floor: 1e-4, max_out: 100, top_k: 2 }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InfeasibleConfig(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.score_floor >= 0.0) {
            return Err(Error::InfeasibleConfig(format!("score_floor must be >= 0, got {}", self.score_floor)));
        }
        if self.max_out == 0 || self.top_k == 0 {
            return Err(Error::InfeasibleConfig("max_out and top_k must be >= 1".into()));
        }
        Ok(())
    }
}

/// Scores every valid cell as `p_start[t] * p_end[t+d] * p_cls[d,t] * p_reg[d,t]`.
///
/// Cells are emitted in row-major `(d, t)` order.
pub fn fuse_scores(out: &NetworkOutputs, grid: &ProposalGrid, duration: f64) -> Result<Vec<Proposal>> {
    out.check_shape()?;
    if out.len() != grid.len() || out.durations() != grid.durations() {
        return Err(Error::ShapeMismatch(format!(
            "outputs are {}x{}, grid is {}x{}",
            out.durations(),
            out.len(),
            grid.durations(),
            grid.len()
        )));
    }
    let scale = duration / grid.len() as f64;
    Ok(grid
        .cells()
        .map(|(d, t)| {
            let (s, e) = grid.segment(d, t);
            let score = out.p_start[t] * out.p_end[t + d] * out.p_cls[[d, t]] * out.p_reg[[d, t]];
            Proposal::new(s as f64 * scale, e as f64 * scale, score)
        })
        .collect())
}

/// Gaussian soft-NMS. Ties go to the earlier proposal.
pub fn soft_nms(props: &[Proposal], sigma: f64, score_floor: f64, max_out: usize) -> Vec<Proposal> {
    let mut remaining = props.to_vec();
    let mut kept = Vec::with_capacity(max_out.min(props.len()));
    while kept.len() < max_out && !remaining.is_empty() {
        let mut best = 0;
        for (i, p) in remaining.iter().enumerate().skip(1) {
            if p.score > remaining[best].score {
                best = i;
            }
        }
        if !(remaining[best].score >= score_floor) {
            break;
        }
        let sel = remaining.remove(best);
        for p in &mut remaining {
            let iou = tiou(sel.segment(), p.segment());
            p.score *= (-iou * iou / sigma).exp();
        }
        kept.push(sel);
    }
    kept.sort_by(|a, b| b.score.total_cmp(&a.score));
    kept
}

/// Fused and suppressed proposals for one video.
pub fn video_proposals(
    out: &NetworkOutputs,
    grid: &ProposalGrid,
    duration: f64,
    cfg: &PostprocessConfig,
) -> Result<Vec<Proposal>> {
    let fused = fuse_scores(out, grid, duration)?;
    Ok(soft_nms(&fused, cfg.sigma, cfg.score_floor, cfg.max_out))
}

/// Runs the network over every video in `anns` in parallel and ranks each
/// video's proposals. Results follow the annotation order.
pub fn infer_proposals(
    net: &Network,
    params: &ModelParams,
    anns: &AnnotationSet,
    features: &IndexMap<String, FeatureSequence>,
    cfg: &PostprocessConfig,
) -> Result<(IndexMap<String, NetworkOutputs>, ProposalSet)> {
    cfg.validate()?;
    let videos: Vec<_> = anns.iter().collect();
    let results: Vec<Result<(NetworkOutputs, Vec<Proposal>)>> = videos
        .par_iter()
        .map(|v| {
            let seq = features
                .get(&v.video_id)
                .ok_or_else(|| Error::InvalidArgument(format!("missing features for video {}", v.video_id)))?;
            let out = net.predict_video(params, seq)?;
            let props = video_proposals(&out, net.sampling().grid(), v.duration, cfg)?;
            Ok((out, props))
        })
        .collect();
    let mut outputs = IndexMap::with_capacity(videos.len());
    let mut proposals = ProposalSet::new();
    for (v, r) in videos.iter().zip(results) {
        let (out, props) = r?;
        proposals.insert(v.video_id.clone(), props)?;
        outputs.insert(v.video_id.clone(), out);
    }
    Ok((outputs, proposals))
}

/// Pairs every proposal with the `k` best video-level classes.
///
/// `class_scores` is expected in descending score order, as stored by
/// [`ClassScores`](crate::dataio::ClassScores).
pub fn assemble_detections(props: &[Proposal], class_scores: &[ClassScore], k: usize) -> Vec<Detection> {
    let classes = &class_scores[..k.min(class_scores.len())];
    props
        .iter()
        .flat_map(|p| {
            classes.iter().map(move |c| Detection {
                start: p.start,
                end: p.end,
                label: c.label.clone(),
                score: p.score * c.score,
            })
        })
        .collect()
}

/// Weighted mean of outputs sharing one shape.
pub fn ensemble_maps(outputs: &[NetworkOutputs], weights: &[f64]) -> Result<NetworkOutputs> {
    let first = outputs.first().ok_or_else(|| Error::InvalidArgument("nothing to ensemble".into()))?;
    if weights.len() != outputs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} outputs but {} weights",
            outputs.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidArgument(format!("weights must be finite and >= 0, got {weights:?}")));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("weights must have a positive sum".into()));
    }
    let (len, durations) = (first.len(), first.durations());
    let mut acc = NetworkOutputs {
        p_start: Array1::zeros(len),
        p_end: Array1::zeros(len),
        p_cls: Array2::zeros((durations, len)),
        p_reg: Array2::zeros((durations, len)),
    };
    for (i, (out, &w)) in outputs.iter().zip(weights).enumerate() {
        out.check_shape()?;
        if out.len() != len || out.durations() != durations {
            return Err(Error::ShapeMismatch(format!(
                "output {i} is {}x{}, expected {durations}x{len}",
                out.durations(),
                out.len()
            )));
        }
        let w = w / total;
        acc.p_start.scaled_add(w, &out.p_start);
        acc.p_end.scaled_add(w, &out.p_end);
        acc.p_cls.scaled_add(w, &out.p_cls);
        acc.p_reg.scaled_add(w, &out.p_reg);
    }
    Ok(acc)
}

/// Resamples outputs to a `durations x len` grid: boundary curves linearly,
/// confidence maps bilinearly.
pub fn rescale_outputs(out: &NetworkOutputs, len: usize, durations: usize) -> Result<NetworkOutputs> {
    out.check_shape()?;
    if len == 0 || durations == 0 || out.is_empty() || out.durations() == 0 {
        return Err(Error::InvalidArgument("cannot rescale empty outputs".into()));
    }
    if (len, durations) == (out.len(), out.durations()) {
        return Ok(out.clone());
    }
    let curve = |src: &Array1<f64>| {
        Array1::from_shape_fn(len, |i| {
            let (lo, hi, w) = lerp_coords(resample_position(i, src.len(), len), src.len());
            src[lo] * (1.0 - w) + src[hi] * w
        })
    };
    let map = |src: &Array2<f64>| {
        let (rows, cols) = src.dim();
        Array2::from_shape_fn((durations, len), |(d, t)| {
            let (d0, d1, wd) = lerp_coords(resample_position(d, rows, durations), rows);
            let (t0, t1, wt) = lerp_coords(resample_position(t, cols, len), cols);
            let top = src[[d0, t0]] * (1.0 - wt) + src[[d0, t1]] * wt;
            let bottom = src[[d1, t0]] * (1.0 - wt) + src[[d1, t1]] * wt;
            top * (1.0 - wd) + bottom * wd
        })
    };
    Ok(NetworkOutputs {
        p_start: curve(&out.p_start),
        p_end: curve(&out.p_end),
        p_cls: map(&out.p_cls),
        p_reg: map(&out.p_reg),
    })
}

fn check_segment(video_id: &str, start: f64, end: f64, score: f64) -> Result<()> {
    if !(start.is_finite() && end.is_finite() && start < end) {
        return Err(Error::InvalidArgument(format!("video {video_id}: bad segment [{start}, {end}]")));
    }
    if !(score.is_finite() && score >= 0.0) {
        return Err(Error::InvalidArgument(format!("video {video_id}: bad score {score}")));
    }
    Ok(())
}

/// Proposals keyed by video id, in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProposalSet {
    videos: IndexMap<String, Vec<Proposal>>,
}

#[derive(Serialize, Deserialize)]
struct ProposalEntry {
    score: f64,
    segment: [f64; 2],
}

#[derive(Deserialize)]
struct ProposalFile {
    results: OrderedEntries<Vec<ProposalEntry>>,
}

#[derive(Serialize)]
struct ProposalFileOut<'a> {
    results: IndexMap<&'a str, Vec<ProposalEntry>>,
}

impl ProposalSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a video, replacing any previous entry. Proposals are stably
    /// sorted by descending score.
    pub fn insert(&mut self, video_id: impl Into<String>, mut props: Vec<Proposal>) -> Result<()> {
        let video_id = video_id.into();
        for p in &props {
            check_segment(&video_id, p.start, p.end, p.score)?;
        }
        props.sort_by(|a, b| b.score.total_cmp(&a.score));
        self.videos.insert(video_id, props);
        Ok(())
    }

    pub fn get(&self, video_id: &str) -> Option<&[Proposal]> {
        self.videos.get(video_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[Proposal])> {
        self.videos.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: ProposalFile = serde_json::from_str(s)?;
        let mut out = Self::new();
        for (vid, entries) in file.results.0 {
            if out.videos.contains_key(&vid) {
                return Err(Error::InvalidArgument(format!("duplicate video id {vid}")));
            }
            let props = entries.iter().map(|e| Proposal::new(e.segment[0], e.segment[1], e.score)).collect();
            out.insert(vid, props)?;
        }
        Ok(out)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let results = self
            .videos
            .iter()
            .map(|(k, v)| {
                let entries = v.iter().map(|p| ProposalEntry { score: p.score, segment: p.segment() }).collect();
                (k.as_str(), entries)
            })
            .collect();
        Ok(serde_json::to_string_pretty(&ProposalFileOut { results })?)
    }
}

/// Labelled detections keyed by video id, in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionSet {
    videos: IndexMap<String, Vec<Detection>>,
}

#[derive(Serialize, Deserialize)]
struct DetectionEntry {
    label: String,
    score: f64,
    segment: [f64; 2],
}

#[derive(Deserialize)]
struct DetectionFile {
    results: OrderedEntries<Vec<DetectionEntry>>,
}

#[derive(Serialize)]
struct DetectionFileOut<'a> {
    version: &'static str,
    results: IndexMap<&'a str, Vec<DetectionEntry>>,
    external_data: IndexMap<String, String>,
}

impl DetectionSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a video, replacing any previous entry. Detections are stably
    /// sorted by descending score.
    pub fn insert(&mut self, video_id: impl Into<String>, mut dets: Vec<Detection>) -> Result<()> {
        let video_id = video_id.into();
        for d in &dets {
            check_segment(&video_id, d.start, d.end, d.score)?;
        }
        dets.sort_by(|a, b| b.score.total_cmp(&a.score));
        self.videos.insert(video_id, dets);
        Ok(())
    }

    pub fn get(&self, video_id: &str) -> Option<&[Detection]> {
        self.videos.get(video_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[Detection])> {
        self.videos.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: DetectionFile = serde_json::from_str(s)?;
        let mut out = Self::new();
        for (vid, entries) in file.results.0 {
            if out.videos.contains_key(&vid) {
                return Err(Error::InvalidArgument(format!("duplicate video id {vid}")));
            }
            let dets = entries
                .into_iter()
                .map(|e| Detection { start: e.segment[0], end: e.segment[1], label: e.label, score: e.score })
                .collect();
            out.insert(vid, dets)?;
        }
        Ok(out)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let results = self
            .videos
            .iter()
            .map(|(k, v)| {
                let entries = v
                    .iter()
                    .map(|d| DetectionEntry { label: d.label.clone(), score: d.score, segment: d.segment() })
                    .collect();
                (k.as_str(), entries)
            })
            .collect();
        let file = DetectionFileOut { version: DETECTION_VERSION, results, external_data: IndexMap::new() };
        Ok(serde_json::to_string_pretty(&file)?)
    }
}

pub fn load_proposals(path: impl AsRef<Path>) -> Result<ProposalSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ProposalSet::from_json_str(&text)
}

pub fn save_proposals(props: &ProposalSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, props.to_json_string()?).map_err(|e| Error::io(path, e))
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<DetectionSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DetectionSet::from_json_str(&text)
}

pub fn save_detections(dets: &DetectionSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dets.to_json_string()?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use proptest::prelude::*;

    fn constant_outputs(len: usize, durations: usize, v: f64) -> NetworkOutputs {
        NetworkOutputs {
            p_start: Array1::from_elem(len, v),
            p_end: Array1::from_elem(len, v),
            p_cls: Array2::from_elem((durations, len), v),
            p_reg: Array2::from_elem((durations, len), v),
        }
    }

    fn cs(pairs: &[(&str, f64)]) -> Vec<ClassScore> {
        pairs.iter().map(|(l, s)| ClassScore { label: l.to_string(), score: *s }).collect()
    }

    #[test]
    fn fusion_of_ones_is_one() {
        let grid = ProposalGrid::new(4, 4).unwrap();
        let props = fuse_scores(&constant_outputs(4, 4, 1.0), &grid, 8.0).unwrap();
        assert_eq!(props.len(), 10);
        assert!(props.iter().all(|p| p.score == 1.0));
    }

    #[test]
    fn zero_start_annihilates() {
        let grid = ProposalGrid::new(6, 4).unwrap();
        let mut out = constant_outputs(6, 4, 0.7);
        out.p_start[2] = 0.0;
        let props = fuse_scores(&out, &grid, 6.0).unwrap();
        for p in props {
            assert_eq!(p.score == 0.0, p.start == 2.0);
        }
    }

    #[test]
    fn fusion_reads_the_last_covered_snippet() {
        let grid = ProposalGrid::new(4, 2).unwrap();
        let mut out = constant_outputs(4, 2, 1.0);
        out.p_end[1] = 0.5;
        let props = fuse_scores(&out, &grid, 4.0).unwrap();
        let cell = props.iter().find(|p| p.start == 0.0 && p.end == 2.0).unwrap();
        assert_eq!(cell.score, 0.5);
    }

    #[test]
    fn segment_in_seconds() {
        let grid = ProposalGrid::new(4, 4).unwrap();
        let props = fuse_scores(&constant_outputs(4, 4, 1.0), &grid, 8.0).unwrap();
        // Row-major: row d=0 has 4 cells, so (d=1, t=0) is the fifth.
        assert_eq!(props[4].segment(), [0.0, 4.0]);
    }

    #[test]
    fn fusion_rejects_shape() {
        let grid = ProposalGrid::new(4, 4).unwrap();
        assert!(fuse_scores(&constant_outputs(5, 4, 1.0), &grid, 8.0).is_err());
    }

    #[test]
    fn single_proposal_unchanged() {
        let p = [Proposal::new(1.0, 3.0, 0.3)];
        assert_eq!(soft_nms(&p, 0.4, 1e-4, 100), p);
    }

    #[test]
    fn identical_segments_decay() {
        let p = [Proposal::new(0.0, 1.0, 1.0), Proposal::new(0.0, 1.0, 0.8)];
        let out = soft_nms(&p, 0.4, 1e-4, 100);
        assert_eq!(out[0].score, 1.0);
        assert!((out[1].score - 0.8 * (-1.0f64 / 0.4).exp()).abs() < 1e-12);
        assert!((out[1].score - 0.0657).abs() < 1e-4);
    }

    #[test]
    fn disjoint_segments_keep_scores() {
        let p = [Proposal::new(0.0, 1.0, 0.6), Proposal::new(2.0, 3.0, 0.9)];
        let out = soft_nms(&p, 0.4, 1e-4, 100);
        assert_eq!(out, vec![p[1], p[0]]);
    }

    #[test]
    fn floor_and_cap_stop_selection() {
        let p = [Proposal::new(0.0, 1.0, 0.5), Proposal::new(2.0, 3.0, 1e-5), Proposal::new(4.0, 5.0, 0.2)];
        assert_eq!(soft_nms(&p, 0.4, 1e-4, 100).len(), 2);
        assert_eq!(soft_nms(&p, 0.4, 0.0, 1), vec![p[0]]);
    }

    #[test]
    fn ties_go_to_input_order() {
        let p = [Proposal::new(0.0, 2.0, 0.5), Proposal::new(1.0, 3.0, 0.5)];
        assert_eq!(soft_nms(&p, 0.4, 0.0, 1)[0], p[0]);
    }

    #[test]
    fn detection_counts_and_scores() {
        let props = [Proposal::new(0.0, 1.0, 0.5), Proposal::new(1.0, 2.0, 0.25)];
        let classes = cs(&[("a", 1.0), ("b", 0.5)]);
        let dets = assemble_detections(&props, &classes, 2);
        assert_eq!(dets.len(), 4);
        assert_eq!(dets[0].score, 0.5);
        assert_eq!(dets[1].score, 0.25);
        assert_eq!(assemble_detections(&props, &classes, 5).len(), 4);
        assert!(assemble_detections(&props, &classes, 1).iter().all(|d| d.label == "a"));
    }

    #[test]
    fn ensemble_examples() {
        let a = constant_outputs(5, 3, 0.2);
        let mut b = a.clone();
        b.p_cls *= 3.0;
        let mean = ensemble_maps(&[a.clone(), b.clone()], &[1.0, 1.0]).unwrap();
        for (m, x) in mean.p_cls.iter().zip(&a.p_cls) {
            assert!((m - 2.0 * x).abs() < 1e-15);
        }
        assert_eq!(ensemble_maps(&[a.clone(), b.clone()], &[1.0, 0.0]).unwrap(), a);
        assert_eq!(ensemble_maps(&[a.clone(), a.clone()], &[0.3, 2.0]).unwrap(), a);
    }

    #[test]
    fn ensemble_errors() {
        let a = constant_outputs(5, 3, 0.2);
        let c = constant_outputs(6, 3, 0.2);
        assert!(matches!(ensemble_maps(&[a.clone(), c], &[1.0, 1.0]), Err(Error::ShapeMismatch(_))));
        assert!(ensemble_maps(&[a.clone()], &[0.0]).is_err());
        assert!(ensemble_maps(&[a.clone()], &[-1.0]).is_err());
        assert!(ensemble_maps(&[a], &[1.0, 1.0]).is_err());
        assert!(ensemble_maps(&[], &[]).is_err());
    }

    #[test]
    fn rescale_ramp_and_identity() {
        let out = NetworkOutputs {
            p_start: Array::linspace(0.0, 1.0, 4),
            p_end: Array::linspace(0.0, 1.0, 4),
            p_cls: Array2::from_shape_fn((2, 4), |(d, t)| d as f64 + t as f64),
            p_reg: Array2::zeros((2, 4)),
        };
        let up = rescale_outputs(&out, 7, 3).unwrap();
        for (i, v) in up.p_start.iter().enumerate() {
            assert!((v - i as f64 / 6.0).abs() < 1e-12);
        }
        // A bilinear function is reproduced exactly.
        for ((d, t), v) in up.p_cls.indexed_iter() {
            assert!((v - (d as f64 * 0.5 + t as f64 * 0.5)).abs() < 1e-12);
        }
        assert_eq!(rescale_outputs(&out, 4, 2).unwrap(), out);
    }

    #[test]
    fn proposal_json_round_trip() {
        let mut set = ProposalSet::new();
        set.insert("b", vec![Proposal::new(0.0, 1.0, 0.2), Proposal::new(0.5, 2.0, 0.9)]).unwrap();
        set.insert("a", vec![]).unwrap();
        let text = set.to_json_string().unwrap();
        assert!(text.find("\"b\"").unwrap() < text.find("\"a\"").unwrap());
        let back = ProposalSet::from_json_str(&text).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.get("b").unwrap()[0].score, 0.9);
        assert!(ProposalSet::from_json_str(r#"{"results": {"v": [{"score": 1, "segment": [2, 1]}]}}"#).is_err());
        assert!(ProposalSet::from_json_str(r#"{"results": {"v": [], "v": []}}"#).is_err());
    }

    #[test]
    fn detection_json_round_trip() {
        let mut set = DetectionSet::new();
        set.insert("v", vec![Detection { start: 0.0, end: 1.5, label: "x".into(), score: 0.4 }]).unwrap();
        let text = set.to_json_string().unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["version"], DETECTION_VERSION);
        assert!(value["external_data"].as_object().unwrap().is_empty());
        assert_eq!(value["results"]["v"][0]["segment"][1], 1.5);
        assert_eq!(DetectionSet::from_json_str(&text).unwrap(), set);
    }

    #[test]
    fn config_validation() {
        assert!(PostprocessConfig::default().validate().is_ok());
        assert!(PostprocessConfig { sigma: 0.0, ..Default::default() }.validate().is_err());
        assert!(PostprocessConfig { top_k: 0, ..Default::default() }.validate().is_err());
    }

    fn outputs_strategy(len: usize, durations: usize) -> impl Strategy<Value = NetworkOutputs> {
        let n = 2 * len + 2 * durations * len;
        prop::collection::vec(0.0f64..=1.0, n).prop_map(move |v| NetworkOutputs {
            p_start: Array1::from(v[..len].to_vec()),
            p_end: Array1::from(v[len..2 * len].to_vec()),
            p_cls: Array2::from_shape_vec((durations, len), v[2 * len..2 * len + durations * len].to_vec()).unwrap(),
            p_reg: Array2::from_shape_vec((durations, len), v[2 * len + durations * len..].to_vec()).unwrap(),
        })
    }

    fn proposals_strategy() -> impl Strategy<Value = Vec<Proposal>> {
        prop::collection::vec((0.0f64..20.0, 0.1f64..8.0, 0.0f64..1.0), 1..25)
            .prop_map(|v| v.into_iter().map(|(s, l, sc)| Proposal::new(s, s + l, sc)).collect())
    }

    proptest! {
        #[test]
        fn fusion_counts_and_range(out in outputs_strategy(7, 5), duration in 1.0f64..100.0) {
            let grid = ProposalGrid::new(7, 5).unwrap();
            let props = fuse_scores(&out, &grid, duration).unwrap();
            prop_assert_eq!(props.len(), grid.valid_count());
            for p in &props {
                prop_assert!((0.0..=1.0).contains(&p.score));
                prop_assert!(p.start < p.end && p.end <= duration * (1.0 + 1e-12));
            }
        }

        #[test]
        fn soft_nms_only_decays(props in proposals_strategy(), sigma in 0.05f64..2.0) {
            let out = soft_nms(&props, sigma, 0.0, usize::MAX);
            prop_assert_eq!(out.len(), props.len());
            let top = props.iter().fold(f64::NEG_INFINITY, |m, p| m.max(p.score));
            prop_assert_eq!(out[0].score, top);
            for w in out.windows(2) {
                prop_assert!(w[0].score >= w[1].score);
            }
            let mut used = vec![false; props.len()];
            for o in &out {
                let i = (0..props.len())
                    .find(|&i| !used[i] && props[i].start == o.start && props[i].end == o.end && o.score <= props[i].score)
                    .expect("every output matches an input");
                used[i] = true;
            }
        }

        #[test]
        fn detections_keep_geometry(props in proposals_strategy(), k in 1usize..4) {
            let classes = cs(&[("a", 0.9), ("b", 0.5), ("c", 0.1)]);
            let dets = assemble_detections(&props, &classes, k);
            prop_assert_eq!(dets.len(), props.len() * k.min(3));
            for (i, d) in dets.iter().enumerate() {
                let p = props[i / k.min(3)];
                prop_assert_eq!(d.segment(), p.segment());
            }
        }

        #[test]
        fn ensemble_scale_invariant(a in outputs_strategy(4, 3), b in outputs_strategy(4, 3), w in 0.1f64..5.0, s in 0.1f64..10.0) {
            let one = ensemble_maps(&[a.clone(), b.clone()], &[w, 1.0]).unwrap();
            let scaled = ensemble_maps(&[a.clone(), b], &[w * s, s]).unwrap();
            for (x, y) in one.p_cls.iter().zip(&scaled.p_cls) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert_eq!(ensemble_maps(&[a.clone()], &[w]).unwrap(), a);
        }
    }
}
