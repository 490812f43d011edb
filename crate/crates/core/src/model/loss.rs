//! Boundary targets and the two training objectives.

use ndarray::{ArrayView1, ArrayView2};
use rand::Rng;

use crate::bm::{GtIouMap, ProposalGrid};
use crate::dataio::VideoAnnotation;

const PROB_CLAMP: f64 = 1e-7;

/// Binary start/end targets, one entry per snippet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryLabels {
    pub start: Vec<bool>,
    pub end: Vec<bool>,
}

/// Marks snippet `t` as a start (end) when its centre `t + 0.5` lies within
/// `max(0.5, 0.05 * length)` snippets of an instance's start (end).
pub fn boundary_labels(ann: &VideoAnnotation, len: usize) -> BoundaryLabels {
    let scale = len as f64 / ann.duration;
    let mut start = vec![false; len];
    let mut end = vec![false; len];
    for inst in &ann.instances {
        let (s, e) = (inst.start * scale, inst.end * scale);
        let radius = (0.05 * (e - s)).max(0.5);
        for t in 0..len {
            let centre = t as f64 + 0.5;
            start[t] |= (centre - s).abs() <= radius;
            end[t] |= (centre - e).abs() <= radius;
        }
    }
    BoundaryLabels { start, end }
}

/// Class-balanced binary log loss over the entries selected by `include`,
/// together with `dL/dp` (zero where the clamp is active).
///
/// `L = -(1/M) sum[a+ b log p + a- (1-b) log(1-p)]` with `a+ = M/M+` and
/// `a- = M/M-`; a term is dropped when its count is zero.
pub(crate) fn balanced_bce(
    probs: impl Iterator<Item = f64>,
    labels: impl Iterator<Item = bool>,
    include: impl Iterator<Item = bool>,
) -> (f64, Vec<f64>) {
    let rows: Vec<(f64, bool, bool)> = probs
        .zip(labels)
        .zip(include)
        .map(|((p, b), inc)| (p, b, inc))
        .collect();
    let m = rows.iter().filter(|r| r.2).count();
    let m_pos = rows.iter().filter(|r| r.2 && r.1).count();
    let m_neg = m - m_pos;
    let mut grad = vec![0.0; rows.len()];
    if m == 0 {
        return (0.0, grad);
    }
    let mf = m as f64;
    let a_pos = if m_pos > 0 { mf / m_pos as f64 } else { 0.0 };
    let a_neg = if m_neg > 0 { mf / m_neg as f64 } else { 0.0 };
    let mut loss = 0.0;
    for (i, &(p, b, inc)) in rows.iter().enumerate() {
        if !inc {
            continue;
        }
        let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let active = pc == p;
        if b {
            loss -= a_pos * pc.ln();
            if active {
                grad[i] = -a_pos / (pc * mf);
            }
        } else {
            loss -= a_neg * (1.0 - pc).ln();
            if active {
                grad[i] = a_neg / ((1.0 - pc) * mf);
            }
        }
    }
    (loss / mf, grad)
}

/// Boundary loss: balanced log loss on the start and end probabilities, summed.
pub fn tem_loss(p_start: ArrayView1<'_, f64>, p_end: ArrayView1<'_, f64>, labels: &BoundaryLabels) -> f64 {
    tem_loss_grad(p_start, p_end, labels).0
}

pub(crate) fn tem_loss_grad(
    p_start: ArrayView1<'_, f64>,
    p_end: ArrayView1<'_, f64>,
    labels: &BoundaryLabels,
) -> (f64, Vec<f64>, Vec<f64>) {
    let all = std::iter::repeat(true);
    let (ls, gs) = balanced_bce(p_start.iter().copied(), labels.start.iter().copied(), all.clone());
    let (le, ge) = balanced_bce(p_end.iter().copied(), labels.end.iter().copied(), all);
    (ls + le, gs, ge)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PemLossConfig {
    pub lambda_cls: f64,
    pub lambda_reg: f64,
    pub positive_iou: f64,
    pub reg_high_iou: f64,
    pub reg_low_iou: f64,
}

impl Default for PemLossConfig {
    fn default() -> Self {
        Self {
            lambda_cls: 1.0,
            lambda_reg: 10.0,
            positive_iou: 0.9,
            reg_high_iou: 0.7,
            reg_low_iou: 0.3,
        }
    }
}

/// Components of the proposal-confidence loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PemLoss {
    pub cls: f64,
    pub reg: f64,
    pub total: f64,
}

/// Cells entering the regression term: every cell above the high threshold,
/// plus equally many uniformly drawn cells from the middle stratum and from
/// the low stratum (or the whole stratum if it is smaller).
pub(crate) fn regression_cells<R: Rng + ?Sized>(
    gt: ArrayView2<'_, f64>,
    grid: &ProposalGrid,
    cfg: &PemLossConfig,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let mut high = Vec::new();
    let mut mid = Vec::new();
    let mut low = Vec::new();
    for (d, t) in grid.cells() {
        let g = gt[[d, t]];
        if g > cfg.reg_high_iou {
            high.push((d, t));
        } else if g > cfg.reg_low_iou {
            mid.push((d, t));
        } else {
            low.push((d, t));
        }
    }
    let n = high.len();
    let mut cells = high;
    for stratum in [mid, low] {
        let take = n.min(stratum.len());
        let picked = rand::seq::index::sample(rng, stratum.len(), take);
        let mut idx: Vec<usize> = picked.into_iter().collect();
        idx.sort_unstable();
        cells.extend(idx.into_iter().map(|i| stratum[i]));
    }
    cells
}

/// Proposal-confidence loss. The regression strata are sampled from `rng`.
pub fn pem_loss<R: Rng + ?Sized>(
    p_cls: ArrayView2<'_, f64>,
    p_reg: ArrayView2<'_, f64>,
    gt: &GtIouMap,
    grid: &ProposalGrid,
    cfg: &PemLossConfig,
    rng: &mut R,
) -> PemLoss {
    pem_loss_grad(p_cls, p_reg, gt.view(), grid, cfg, rng).0
}

/// Loss plus `dL/dp_cls` and `dL/dp_reg`, both `D x T` row-major.
pub(crate) fn pem_loss_grad<R: Rng + ?Sized>(
    p_cls: ArrayView2<'_, f64>,
    p_reg: ArrayView2<'_, f64>,
    gt: ArrayView2<'_, f64>,
    grid: &ProposalGrid,
    cfg: &PemLossConfig,
    rng: &mut R,
) -> (PemLoss, Vec<f64>, Vec<f64>) {
    let valid = grid.valid_mask();
    let (cls, mut g_cls) = balanced_bce(
        p_cls.iter().copied(),
        gt.iter().map(|&g| g > cfg.positive_iou),
        valid.iter().copied(),
    );
    let cols = grid.len();
    let cells = regression_cells(gt, grid, cfg, rng);
    let mut g_reg = vec![0.0; p_reg.len()];
    let mut reg = 0.0;
    if !cells.is_empty() {
        let k = cells.len() as f64;
        for &(d, t) in &cells {
            let diff = p_reg[[d, t]] - gt[[d, t]];
            reg += diff * diff;
            g_reg[d * cols + t] += 2.0 * diff / k;
        }
        reg /= k;
    }
    for g in &mut g_cls {
        *g *= cfg.lambda_cls;
    }
    for g in &mut g_reg {
        *g *= cfg.lambda_reg;
    }
    let total = cfg.lambda_cls * cls + cfg.lambda_reg * reg;
    (PemLoss { cls, reg, total }, g_cls, g_reg)
}
