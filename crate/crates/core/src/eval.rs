//! Proposal recall (AR@AN, AUC) and detection precision (AP, average mAP).

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::Serialize;

use crate::bm::tiou;
use crate::dataio::AnnotationSet;
use crate::error::{Error, Result};
use crate::postprocess::{DetectionSet, ProposalSet};

/// Largest AN on the recall curve.
pub const MAX_AN: usize = 100;

/// The ten tIoU thresholds 0.50, 0.55, ..., 0.95.
pub fn tiou_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// For every GT instance and threshold, the rank of the first proposal of its
/// video reaching that IoU (`usize::MAX` if none does).
fn first_hits(props: &ProposalSet, gt: &AnnotationSet, thresholds: &[f64]) -> Result<Vec<Vec<usize>>> {
    if gt.total_instances() == 0 {
        return Err(Error::NoGroundTruth);
    }
    let mut hits = vec![Vec::with_capacity(gt.total_instances()); thresholds.len()];
    for video in gt.iter() {
        let ranked = props.get(&video.video_id).unwrap_or(&[]);
        for inst in &video.instances {
            let ious: Vec<f64> = ranked.iter().map(|p| tiou(p.segment(), [inst.start, inst.end])).collect();
            for (h, &th) in hits.iter_mut().zip(thresholds) {
                h.push(ious.iter().position(|&iou| iou >= th).unwrap_or(usize::MAX));
            }
        }
    }
    Ok(hits)
}

fn recall_from_hits(hits: &[Vec<usize>], an: usize) -> f64 {
    let per_threshold: f64 = hits
        .iter()
        .map(|h| h.iter().filter(|&&r| r < an).count() as f64 / h.len() as f64)
        .sum();
    per_threshold / hits.len() as f64
}

/// Average recall when every video keeps its `an` best proposals.
///
/// Proposal lists are read in stored order, which [`ProposalSet`] keeps
/// sorted by descending score. Recall counts are pooled over videos for each
/// threshold, then averaged over the ten thresholds.
pub fn ar_at_an(props: &ProposalSet, gt: &AnnotationSet, an: usize) -> Result<f64> {
    let hits = first_hits(props, gt, &tiou_thresholds())?;
    Ok(recall_from_hits(&hits, an))
}

/// AR for AN = 1..=[`MAX_AN`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArCurve {
    pub an: Vec<usize>,
    pub ar: Vec<f64>,
}

impl ArCurve {
    /// A curve from AR values for AN = 1, 2, ...
    pub fn from_values(ar: Vec<f64>) -> Self {
        Self { an: (1..=ar.len()).collect(), ar }
    }

    pub fn at(&self, an: usize) -> Option<f64> {
        an.checked_sub(1).and_then(|i| self.ar.get(i).copied())
    }
}

pub fn ar_curve(props: &ProposalSet, gt: &AnnotationSet) -> Result<ArCurve> {
    let hits = first_hits(props, gt, &tiou_thresholds())?;
    Ok(ArCurve::from_values((1..=MAX_AN).map(|an| recall_from_hits(&hits, an)).collect()))
}

/// Area under the AR-AN curve as a percentage: the mean AR over the curve,
/// times 100.
pub fn auc(curve: &ArCurve) -> f64 {
    if curve.ar.is_empty() {
        return 0.0;
    }
    100.0 * curve.ar.iter().sum::<f64>() / curve.ar.len() as f64
}

/// A scored segment of one class in one video.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredSegment<'a> {
    pub video_id: &'a str,
    pub segment: [f64; 2],
    pub score: f64,
}

/// A ground-truth segment of one class in one video.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtSegment<'a> {
    pub video_id: &'a str,
    pub segment: [f64; 2],
}

/// Average precision of one class at one threshold.
///
/// Detections are ranked by descending score (stable). Each one claims the
/// unmatched same-video GT with the highest IoU, provided that IoU reaches
/// `threshold`. Precision is interpolated as the running maximum from the
/// tail. Returns 0 when there is no GT.
pub fn ap_at_tiou(detections: &[ScoredSegment<'_>], gt: &[GtSegment<'_>], threshold: f64) -> f64 {
    if gt.is_empty() {
        return 0.0;
    }
    let mut by_video: IndexMap<&str, Vec<usize>> = IndexMap::new();
    for (i, g) in gt.iter().enumerate() {
        by_video.entry(g.video_id).or_default().push(i);
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score));

    let mut matched = vec![false; gt.len()];
    let mut tp = Vec::with_capacity(order.len());
    for &i in &order {
        let det = &detections[i];
        let mut best: Option<(usize, f64)> = None;
        for &g in by_video.get(det.video_id).map(Vec::as_slice).unwrap_or(&[]) {
            if matched[g] {
                continue;
            }
            let iou = tiou(det.segment, gt[g].segment);
            if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            matched[g] = true;
        }
        tp.push(best.is_some());
    }

    let npos = gt.len() as f64;
    let mut recall = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (rank, &hit) in tp.iter().enumerate() {
        hits += hit as usize;
        recall.push(hits as f64 / npos);
        precision.push(hits as f64 / (rank + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev) * p;
        prev = *r;
    }
    ap
}

/// mAP per threshold, their mean, and the per-class AP table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapReport {
    pub thresholds: Vec<f64>,
    pub map: Vec<f64>,
    pub average_map: f64,
    /// Class label to AP per threshold.
    pub per_class: IndexMap<String, Vec<f64>>,
}

impl MapReport {
    /// Aligned text table: one row per class, then the mAP row.
    pub fn to_table(&self) -> String {
        let width = self.per_class.keys().map(String::len).chain([7]).max().unwrap_or(7);
        let mut out = format!("{:<width$}", "class");
        for th in &self.thresholds {
            out += &format!(" {th:>6.2}");
        }
        out += "    avg\n";
        let mut row = |name: &str, values: &[f64]| {
            out += &format!("{name:<width$}");
            for v in values {
                out += &format!(" {:>6.2}", 100.0 * v);
            }
            let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
            out += &format!(" {:>6.2}\n", 100.0 * mean);
        };
        for (label, aps) in &self.per_class {
            row(label, aps);
        }
        row("mAP", &self.map);
        out
    }
}

/// AP per class and threshold over every video in `gt`.
///
/// Classes without GT are skipped, and so are detections in videos absent
/// from `gt`. Classes are processed in parallel; the result does not depend
/// on the thread count.
pub fn average_map(dets: &DetectionSet, gt: &AnnotationSet, thresholds: &[f64]) -> Result<MapReport> {
    if gt.total_instances() == 0 {
        return Err(Error::NoGroundTruth);
    }
    if thresholds.is_empty() {
        return Err(Error::InvalidArgument("no thresholds".into()));
    }
    let labels = gt.labels();
    let per_class: Vec<Vec<f64>> = labels
        .par_iter()
        .map(|label| {
            let gts: Vec<GtSegment<'_>> = gt
                .iter()
                .flat_map(|v| {
                    v.instances
                        .iter()
                        .filter(|i| &i.label == label)
                        .map(|i| GtSegment { video_id: &v.video_id, segment: [i.start, i.end] })
                })
                .collect();
            let scored: Vec<ScoredSegment<'_>> = dets
                .iter()
                .filter(|(vid, _)| gt.get(vid).is_some())
                .flat_map(|(vid, ds)| {
                    ds.iter()
                        .filter(|d| &d.label == label)
                        .map(move |d| ScoredSegment { video_id: vid, segment: d.segment(), score: d.score })
                })
                .collect();
            thresholds.iter().map(|&th| ap_at_tiou(&scored, &gts, th)).collect()
        })
        .collect();
    let map: Vec<f64> = (0..thresholds.len())
        .map(|j| per_class.iter().map(|aps| aps[j]).sum::<f64>() / per_class.len() as f64)
        .collect();
    let average_map = map.iter().sum::<f64>() / map.len() as f64;
    Ok(MapReport {
        thresholds: thresholds.to_vec(),
        map,
        average_map,
        per_class: labels.into_iter().zip(per_class).collect(),
    })
}

/// AR at a few standard AN values, AUC and the full curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProposalReport {
    pub ar_at: IndexMap<String, f64>,
    pub auc: f64,
    pub curve: ArCurve,
}

impl ProposalReport {
    pub fn new(curve: ArCurve) -> Self {
        let ar_at = [1, 5, 10, 50, 100]
            .into_iter()
            .filter_map(|an| curve.at(an).map(|ar| (format!("AR@{an}"), ar)))
            .collect();
        Self { ar_at, auc: auc(&curve), curve }
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for (name, ar) in &self.ar_at {
            out += &format!("{name:<8} {:>7.2}\n", 100.0 * ar);
        }
        out += &format!("{:<8} {:>7.2}\n", "AUC", self.auc);
        out
    }
}

pub fn evaluate_proposals(props: &ProposalSet, gt: &AnnotationSet) -> Result<ProposalReport> {
    Ok(ProposalReport::new(ar_curve(props, gt)?))
}
