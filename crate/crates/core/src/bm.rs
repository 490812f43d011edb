//! Dense boundary-matching machinery.
//!
//! A proposal is indexed by a duration row `d` and a start column `t` and
//! covers snippets `[t, t + d + 1)`. The lattice is `D x T`; cells that would
//! run past the end of the sequence are invalid and carry zeros everywhere.

use ndarray::{Array2, Array4, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::VideoAnnotation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProposalGrid {
    len: usize,
    durations: usize,
}

impl ProposalGrid {
    pub fn new(len: usize, durations: usize) -> Result<Self> {
        if durations == 0 || durations > len {
            return Err(Error::InvalidArgument(format!(
                "grid needs 1 <= D <= T, got T={len}, D={durations}"
            )));
        }
        Ok(Self { len, durations })
    }

    /// Temporal scale `T`.
    pub fn len(&self) -> usize {
        self.len
    }

    /// Always false; a grid has at least one cell.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Maximum proposal duration `D` in snippets.
    pub fn durations(&self) -> usize {
        self.durations
    }

    #[inline]
    pub fn is_valid(&self, d: usize, t: usize) -> bool {
        d < self.durations && t + d < self.len
    }

    /// Snippet-unit segment `[t, t + d + 1)` of a cell.
    #[inline]
    pub fn segment(&self, d: usize, t: usize) -> (usize, usize) {
        (t, t + d + 1)
    }

    pub fn valid_count(&self) -> usize {
        (1..=self.durations).map(|k| self.len - k + 1).sum()
    }

    /// Valid `(d, t)` cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.durations).flat_map(move |d| (0..self.len - d).map(move |t| (d, t)))
    }

    /// `D x T` boolean validity mask.
    pub fn valid_mask(&self) -> Array2<bool> {
        Array2::from_shape_fn((self.durations, self.len), |(d, t)| self.is_valid(d, t))
    }
}

pub fn proposal_grid(len: usize, durations: usize) -> Result<ProposalGrid> {
    ProposalGrid::new(len, durations)
}

/// Temporal IoU of two segments given as `[start, end]`.
pub fn segment_iou(a: [f64; 2], b: [f64; 2]) -> Result<f64> {
    for s in [a, b] {
        if !(s[0] < s[1]) {
            return Err(Error::InvalidArgument(format!(
                "degenerate segment [{}, {}]",
                s[0], s[1]
            )));
        }
    }
    Ok(tiou(a, b))
}

/// IoU without validation. Callers guarantee non-degenerate segments.
#[inline]
pub(crate) fn tiou(a: [f64; 2], b: [f64; 2]) -> f64 {
    let inter = (a[1].min(b[1]) - a[0].max(b[0])).max(0.0);
    let union = (a[1] - a[0]) + (b[1] - b[0]) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Per-cell IoU targets: `D x T`, the best IoU of each valid proposal against
/// any instance, zero at invalid cells.
pub type GtIouMap = Array2<f64>;

pub fn gt_iou_map(grid: &ProposalGrid, ann: &VideoAnnotation) -> GtIouMap {
    let scale = grid.len() as f64 / ann.duration;
    let gts: Vec<[f64; 2]> = ann
        .instances
        .iter()
        .map(|i| [i.start * scale, i.end * scale])
        .collect();
    let mut map = Array2::zeros((grid.durations(), grid.len()));
    if gts.is_empty() {
        return map;
    }
    for (d, t) in grid.cells() {
        let (s, e) = grid.segment(d, t);
        let seg = [s as f64, e as f64];
        map[[d, t]] = gts.iter().map(|g| tiou(seg, *g)).fold(0.0, f64::max);
    }
    map
}

/// Linear-interpolation weights of one sample point. Out-of-range points
/// have both weights zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SampleWeights {
    pub lo: u32,
    pub hi: u32,
    pub w_lo: f64,
    pub w_hi: f64,
}

/// Sparse linear map from a length-`T` feature map onto `N` sample points per
/// proposal cell. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMatrix {
    grid: ProposalGrid,
    samples: usize,
    expansion: f64,
    // indexed by ((d * T) + t) * N + n; invalid cells hold zero rows
    weights: Vec<SampleWeights>,
}

impl SamplingMatrix {
    pub fn grid(&self) -> &ProposalGrid {
        &self.grid
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn expansion(&self) -> f64 {
        self.expansion
    }

    /// Input length the matrix reads from.
    pub fn input_len(&self) -> usize {
        self.grid.len()
    }

    /// Weights of the `N` sample points of cell `(d, t)`.
    #[inline]
    pub fn row(&self, d: usize, t: usize) -> &[SampleWeights] {
        let base = (d * self.grid.len() + t) * self.samples;
        &self.weights[base..base + self.samples]
    }

    /// Position of sample point `n` of cell `(d, t)` in input coordinates.
    pub fn point(&self, d: usize, t: usize, n: usize) -> f64 {
        sample_point(d, t, n, self.samples, self.expansion)
    }
}

fn sample_point(d: usize, t: usize, n: usize, samples: usize, expansion: f64) -> f64 {
    let k = (d + 1) as f64;
    let start = t as f64 - expansion * k;
    let end = t as f64 + k + expansion * k;
    start + n as f64 * (end - start) / (samples - 1) as f64
}

pub fn build_sampling_matrix(len: usize, durations: usize, samples: usize, expansion: f64) -> Result<SamplingMatrix> {
    let grid = ProposalGrid::new(len, durations)?;
    if samples < 2 {
        return Err(Error::InvalidArgument(format!("need N >= 2 sample points, got {samples}")));
    }
    if !(expansion >= 0.0 && expansion.is_finite()) {
        return Err(Error::InvalidArgument(format!("expansion must be >= 0, got {expansion}")));
    }
    let mut weights = vec![SampleWeights::default(); durations * len * samples];
    let last = (len - 1) as f64;
    for (d, t) in grid.cells() {
        let base = (d * len + t) * samples;
        for n in 0..samples {
            let x = sample_point(d, t, n, samples, expansion);
            if !(0.0..=last).contains(&x) {
                continue;
            }
            let lo = x.floor() as usize;
            let frac = x - lo as f64;
            weights[base + n] = if lo + 1 < len {
                SampleWeights {
                    lo: lo as u32,
                    hi: (lo + 1) as u32,
                    w_lo: 1.0 - frac,
                    w_hi: frac,
                }
            } else {
                SampleWeights {
                    lo: lo as u32,
                    hi: lo as u32,
                    w_lo: 1.0,
                    w_hi: 0.0,
                }
            };
        }
    }
    Ok(SamplingMatrix {
        grid,
        samples,
        expansion,
        weights,
    })
}

/// Samples a `C x T` hidden map into the dense `C x N x D x T` proposal tensor.
pub fn sample_proposal_features(hidden: ArrayView2<'_, f64>, sm: &SamplingMatrix) -> Result<Array4<f64>> {
    let (channels, len) = hidden.dim();
    if len != sm.input_len() {
        return Err(Error::ShapeMismatch(format!(
            "hidden map has width {len}, sampling matrix expects {}",
            sm.input_len()
        )));
    }
    let (n_s, n_d) = (sm.samples, sm.grid.durations());
    let mut out = Array4::<f64>::zeros((channels, n_s, n_d, len));
    let hidden = hidden.as_standard_layout();
    let h = hidden.as_slice().expect("standard layout");
    let o = out.as_slice_mut().expect("fresh array");
    let plane = n_d * len;
    for c in 0..channels {
        let row = &h[c * len..(c + 1) * len];
        for (d, t) in sm.grid.cells() {
            for (n, w) in sm.row(d, t).iter().enumerate() {
                o[(c * n_s + n) * plane + d * len + t] =
                    w.w_lo * row[w.lo as usize] + w.w_hi * row[w.hi as usize];
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`sample_proposal_features`]: scatters a `C x N x D x T`
/// gradient back onto the `C x T` hidden map.
pub fn scatter_proposal_gradient(grad: &Array4<f64>, sm: &SamplingMatrix) -> Array2<f64> {
    let (channels, n_s, n_d, len) = grad.dim();
    let mut out = Array2::<f64>::zeros((channels, len));
    let g = grad.as_slice().expect("standard layout");
    let plane = n_d * len;
    for c in 0..channels {
        let mut row = out.row_mut(c);
        let row = row.as_slice_mut().unwrap();
        for (d, t) in sm.grid.cells() {
            for (n, w) in sm.row(d, t).iter().enumerate() {
                let v = g[(c * n_s + n) * plane + d * len + t];
                row[w.lo as usize] += w.w_lo * v;
                row[w.hi as usize] += w.w_hi * v;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MaskGranularity {
    /// Zero whole proposal cells across every channel and sample point.
    #[default]
    Proposal,
    /// Zero whole channels across every proposal cell.
    Channel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    pub p: f64,
    pub granularity: MaskGranularity,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            p: 0.1,
            granularity: MaskGranularity::Proposal,
        }
    }
}

impl MaskConfig {
    pub fn disabled() -> Self {
        Self {
            p: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.p) {
            return Err(Error::InvalidArgument(format!("mask.p must lie in [0, 1), got {}", self.p)));
        }
        Ok(())
    }
}

/// One realised mask: a multiplicative factor of either `0` or `1 / (1 - p)`.
#[derive(Debug, Clone, PartialEq)]
pub enum ProposalMask {
    Identity,
    /// `D x T` factors, one per proposal cell.
    Cells(Array2<f64>),
    /// One factor per channel.
    Channels(Vec<f64>),
}

impl ProposalMask {
    /// Draws a mask for a `channels x N x D x T` tensor. Consumes no
    /// randomness when `p == 0`.
    pub fn draw<R: Rng + ?Sized>(cfg: &MaskConfig, grid: &ProposalGrid, channels: usize, rng: &mut R) -> Self {
        if cfg.p <= 0.0 {
            return ProposalMask::Identity;
        }
        let keep = 1.0 / (1.0 - cfg.p);
        match cfg.granularity {
            MaskGranularity::Proposal => {
                let mut f = Array2::zeros((grid.durations(), grid.len()));
                for (d, t) in grid.cells() {
                    f[[d, t]] = if rng.random_bool(cfg.p) { 0.0 } else { keep };
                }
                ProposalMask::Cells(f)
            }
            MaskGranularity::Channel => ProposalMask::Channels(
                (0..channels)
                    .map(|_| if rng.random_bool(cfg.p) { 0.0 } else { keep })
                    .collect(),
            ),
        }
    }

    /// Multiplies the tensor in place. Also used for the backward pass, since
    /// the mask is a diagonal linear map.
    pub fn apply(&self, tensor: &mut Array4<f64>) {
        let (channels, n_s, n_d, len) = tensor.dim();
        let plane = n_d * len;
        let data = tensor.as_slice_mut().expect("standard layout");
        match self {
            ProposalMask::Identity => {}
            ProposalMask::Cells(f) => {
                let f = f.as_slice().expect("standard layout");
                for block in data.chunks_exact_mut(plane) {
                    for (x, m) in block.iter_mut().zip(f) {
                        *x *= m;
                    }
                }
            }
            ProposalMask::Channels(f) => {
                for (c, m) in f.iter().enumerate().take(channels) {
                    for x in &mut data[c * n_s * plane..(c + 1) * n_s * plane] {
                        *x *= m;
                    }
                }
            }
        }
    }

    /// Number of zeroed units (cells or channels).
    pub fn dropped(&self, grid: &ProposalGrid) -> usize {
        match self {
            ProposalMask::Identity => 0,
            ProposalMask::Cells(f) => grid.cells().filter(|&(d, t)| f[[d, t]] == 0.0).count(),
            ProposalMask::Channels(f) => f.iter().filter(|&&m| m == 0.0).count(),
        }
    }
}

/// Random proposal-feature masking. Identity outside training.
pub fn mask_proposals<R: Rng + ?Sized>(
    tensor: &Array4<f64>,
    cfg: &MaskConfig,
    training: bool,
    rng: &mut R,
) -> Result<Array4<f64>> {
    cfg.validate()?;
    let mut out = tensor.clone();
    if !training {
        return Ok(out);
    }
    let (channels, _, n_d, len) = tensor.dim();
    let grid = ProposalGrid::new(len, n_d)?;
    ProposalMask::draw(cfg, &grid, channels, rng).apply(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{Instance, Subset};
    use ndarray::Array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_counts() {
        assert_eq!(proposal_grid(4, 4).unwrap().valid_count(), 10);
        assert_eq!(proposal_grid(1, 1).unwrap().valid_count(), 1);
        let g = proposal_grid(4, 1).unwrap();
        assert_eq!(g.valid_count(), 4);
        assert!(g.cells().all(|(d, _)| d == 0));
        assert!(proposal_grid(3, 4).is_err());
        let g = proposal_grid(7, 5).unwrap();
        assert_eq!(g.cells().count(), g.valid_count());
        assert_eq!(g.valid_mask().iter().filter(|&&v| v).count(), g.valid_count());
    }

    #[test]
    fn iou_cases() {
        assert_eq!(segment_iou([1.0, 4.0], [1.0, 4.0]).unwrap(), 1.0);
        assert_eq!(segment_iou([0.0, 10.0], [20.0, 30.0]).unwrap(), 0.0);
        assert!((segment_iou([0.0, 10.0], [5.0, 15.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(segment_iou([2.0, 2.0], [0.0, 1.0]).is_err());
    }

    fn ann(duration: f64, spans: &[(f64, f64)]) -> VideoAnnotation {
        VideoAnnotation {
            video_id: "v".into(),
            duration,
            subset: Subset::Training,
            instances: spans.iter().map(|&(s, e)| Instance::new(s, e, "x")).collect(),
        }
    }

    #[test]
    fn iou_map_cases() {
        let g = proposal_grid(4, 4).unwrap();
        assert!(gt_iou_map(&g, &ann(8.0, &[])).iter().all(|&v| v == 0.0));
        // [0, 2) snippets at T=4 over 8 s
        let m = gt_iou_map(&g, &ann(8.0, &[(0.0, 4.0)]));
        assert_eq!(m[[1, 0]], 1.0);
        assert_eq!(m[[3, 0]], 0.5);
        assert_eq!(m[[3, 1]], 0.0); // invalid cell
    }

    #[test]
    fn sampling_endpoints() {
        let sm = build_sampling_matrix(4, 4, 2, 0.0).unwrap();
        let hidden = Array::from_shape_vec((1, 4), vec![10.0, 11.0, 12.0, 13.0]).unwrap();
        let out = sample_proposal_features(hidden.view(), &sm).unwrap();
        // proposal [1, 3) is cell d=1, t=1
        assert_eq!(out[[0, 0, 1, 1]], 11.0);
        assert_eq!(out[[0, 1, 1, 1]], 13.0);
    }

    #[test]
    fn expanded_points_out_of_range_are_zero() {
        let sm = build_sampling_matrix(4, 4, 2, 0.25).unwrap();
        assert_eq!(sm.point(3, 0, 0), -1.0);
        assert_eq!(sm.row(3, 0)[0], SampleWeights::default());
        let hidden = Array2::from_elem((2, 4), 3.0);
        let out = sample_proposal_features(hidden.view(), &sm).unwrap();
        assert_eq!(out[[1, 0, 3, 0]], 0.0);
    }

    #[test]
    fn sampling_rows_are_partitions_of_unity() {
        let sm = build_sampling_matrix(9, 6, 5, 0.3).unwrap();
        for (d, t) in sm.grid().cells() {
            for (n, w) in sm.row(d, t).iter().enumerate() {
                let x = sm.point(d, t, n);
                assert!(w.w_lo >= 0.0 && w.w_hi >= 0.0);
                if (0.0..=8.0).contains(&x) {
                    assert!((w.w_lo + w.w_hi - 1.0).abs() < 1e-12);
                } else {
                    assert_eq!(w.w_lo + w.w_hi, 0.0);
                }
            }
        }
    }

    #[test]
    fn sampling_shape_mismatch() {
        let sm = build_sampling_matrix(4, 2, 3, 0.0).unwrap();
        assert!(sample_proposal_features(Array2::zeros((1, 5)).view(), &sm).is_err());
        assert!(build_sampling_matrix(4, 2, 1, 0.0).is_err());
    }

    #[test]
    fn scatter_is_the_adjoint() {
        let sm = build_sampling_matrix(7, 5, 4, 0.25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = Array2::from_shape_fn((3, 7), |_| rng.random_range(-1.0..1.0));
        let g = Array4::from_shape_fn((3, 4, 5, 7), |_| rng.random_range(-1.0..1.0));
        let lhs: f64 = (&sample_proposal_features(h.view(), &sm).unwrap() * &g).sum();
        let rhs: f64 = (&h * &scatter_proposal_gradient(&g, &sm)).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn masking_no_ops() {
        let t = Array4::from_elem((2, 3, 4, 4), 1.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let zero = MaskConfig { p: 0.0, ..Default::default() };
        assert_eq!(mask_proposals(&t, &zero, true, &mut rng).unwrap(), t);
        let heavy = MaskConfig { p: 0.9, ..Default::default() };
        assert_eq!(mask_proposals(&t, &heavy, false, &mut rng).unwrap(), t);
        assert!(mask_proposals(&t, &MaskConfig { p: 1.0, ..Default::default() }, true, &mut rng).is_err());
    }

    #[test]
    fn proposal_mask_zeroes_whole_cells() {
        let sm = build_sampling_matrix(6, 6, 3, 0.0).unwrap();
        let h = Array2::from_shape_fn((2, 6), |(c, t)| 1.0 + c as f64 + t as f64 * 0.1);
        let x = sample_proposal_features(h.view(), &sm).unwrap();
        let cfg = MaskConfig { p: 0.5, granularity: MaskGranularity::Proposal };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = mask_proposals(&x, &cfg, true, &mut rng).unwrap();
        let (mut dropped, mut kept) = (0, 0);
        for (d, t) in sm.grid().cells() {
            let zeroed = y[[0, 0, d, t]] == 0.0;
            for c in 0..2 {
                for n in 0..3 {
                    if zeroed {
                        assert_eq!(y[[c, n, d, t]], 0.0);
                    } else {
                        assert_eq!(y[[c, n, d, t]], x[[c, n, d, t]] * 2.0);
                    }
                }
            }
            if zeroed { dropped += 1 } else { kept += 1 }
        }
        assert!(dropped > 0 && kept > 0);
    }

    #[test]
    fn channel_mask_zeroes_whole_channels() {
        let x = Array4::from_elem((40, 2, 3, 3), 1.0);
        let cfg = MaskConfig { p: 0.5, granularity: MaskGranularity::Channel };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y = mask_proposals(&x, &cfg, true, &mut rng).unwrap();
        let mut seen = [false; 2];
        for c in 0..40 {
            let first = y[[c, 0, 0, 0]];
            assert!(first == 0.0 || first == 2.0);
            seen[(first > 0.0) as usize] = true;
            let plane = y.index_axis(ndarray::Axis(0), c);
            assert!(plane.iter().all(|&v| v == first));
        }
        assert_eq!(seen, [true, true]);
    }
}
