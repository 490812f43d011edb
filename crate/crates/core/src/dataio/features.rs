//! Snippet-level feature sequences and the `CPNF` binary container.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: [u8; 4] = *b"CPNF";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// A `T x C` matrix of finite features, one row per snippet.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    data: Array2<f32>,
}

impl FeatureSequence {
    pub fn new(data: Array2<f32>) -> Result<Self> {
        let (t, c) = data.dim();
        if t == 0 || c == 0 {
            return Err(Error::ShapeMismatch(format!(
                "feature sequence must be non-empty, got {t}x{c}"
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { data })
    }

    pub fn from_vec(len: usize, channels: usize, values: Vec<f32>) -> Result<Self> {
        let data = Array2::from_shape_vec((len, channels), values)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::new(data)
    }

    /// Snippet count.
    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    pub fn snippet(&self, t: usize) -> ArrayView1<'_, f32> {
        self.data.row(t)
    }

    pub fn into_inner(self) -> Array2<f32> {
        self.data
    }

    /// Concatenates sequences along time. All parts must share the channel count.
    pub fn concat(parts: &[&FeatureSequence]) -> Result<Self> {
        let views: Vec<_> = parts.iter().map(|p| p.data.view()).collect();
        let data = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::new(data)
    }

    /// Rows `[from, to)` as a new sequence.
    pub fn slice(&self, from: usize, to: usize) -> Result<Self> {
        if from >= to || to > self.len() {
            return Err(Error::InvalidArgument(format!(
                "snippet range [{from}, {to}) out of 0..{}",
                self.len()
            )));
        }
        Ok(Self {
            data: self.data.slice(ndarray::s![from..to, ..]).to_owned(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (t, c) = self.data.dim();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * t * c);
        out.extend_from_slice(&FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&(t as u32).to_le_bytes());
        out.extend_from_slice(&(c as u32).to_le_bytes());
        for v in self.data.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != FEATURE_MAGIC {
            return Err(Error::BadMagic {
                expected: FEATURE_MAGIC,
                found: magic,
            });
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != FEATURE_VERSION {
            return Err(Error::VersionMismatch {
                expected: FEATURE_VERSION,
                found: version,
            });
        }
        let (t, c) = (word(8) as usize, word(12) as usize);
        let expected = HEADER_LEN + 4 * t * c;
        if bytes.len() < expected {
            return Err(Error::Truncated {
                expected,
                found: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(Error::ShapeMismatch(format!(
                "{} trailing bytes after {t}x{c} payload",
                bytes.len() - expected
            )));
        }
        let values = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::from_vec(t, c, values)
    }
}

pub fn save_features(seq: &FeatureSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, seq.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureSequence::from_bytes(&bytes)
}

/// Position in an input of length `len_in` that output index `i` of a
/// length-`len_out` resampling reads from. Endpoints map onto endpoints; a
/// single output reads the temporal midpoint.
pub(crate) fn resample_position(i: usize, len_in: usize, len_out: usize) -> f64 {
    if len_out == 1 {
        (len_in - 1) as f64 / 2.0
    } else {
        i as f64 * (len_in - 1) as f64 / (len_out - 1) as f64
    }
}

/// Left index and right-hand weight for linear interpolation at `x` on `0..len`.
pub(crate) fn lerp_coords(x: f64, len: usize) -> (usize, usize, f64) {
    let lo = (x.floor() as usize).min(len - 1);
    let hi = (lo + 1).min(len - 1);
    (lo, hi, x - lo as f64)
}

/// Linearly resamples a sequence to `target_len` snippets, channel by channel.
pub fn rescale_features(seq: &FeatureSequence, target_len: usize) -> Result<FeatureSequence> {
    if target_len == 0 {
        return Err(Error::InvalidArgument("target length must be >= 1".into()));
    }
    let len = seq.len();
    if target_len == len {
        return Ok(seq.clone());
    }
    let mut out = Array2::<f32>::zeros((target_len, seq.channels()));
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let (lo, hi, w) = lerp_coords(resample_position(i, len, target_len), len);
        let (a, b) = (seq.data.row(lo), seq.data.row(hi));
        for ((o, &x0), &x1) in row.iter_mut().zip(a.iter()).zip(b.iter()) {
            *o = ((1.0 - w) * x0 as f64 + w * x1 as f64) as f32;
        }
    }
    FeatureSequence::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(t: usize, c: usize) -> FeatureSequence {
        FeatureSequence::from_vec(t, c, (0..t * c).map(|v| v as f32 * 0.25 - 1.0).collect()).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let seq = ramp(4, 3);
        assert_eq!(FeatureSequence::from_bytes(&seq.to_bytes()).unwrap(), seq);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.cpnf");
        let seq = ramp(5, 2);
        save_features(&seq, &path).unwrap();
        assert_eq!(load_features(&path).unwrap(), seq);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = ramp(4, 3).to_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            FeatureSequence::from_bytes(&bytes),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = ramp(4, 3).to_bytes();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            FeatureSequence::from_bytes(&bytes),
            Err(Error::VersionMismatch { found: 2, .. })
        ));
    }

    #[test]
    fn truncated_payload() {
        let bytes = ramp(4, 3).to_bytes();
        let short = &bytes[..HEADER_LEN + 10 * 4];
        assert!(matches!(
            FeatureSequence::from_bytes(short),
            Err(Error::Truncated { expected: 64, found: 56 })
        ));
    }

    #[test]
    fn non_finite_payload() {
        let mut bytes = ramp(2, 2).to_bytes();
        bytes[HEADER_LEN + 4..HEADER_LEN + 8].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            FeatureSequence::from_bytes(&bytes),
            Err(Error::NonFinite(1))
        ));
    }

    #[test]
    fn rescale_ramp_hand_values() {
        let seq = FeatureSequence::from_vec(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let out = rescale_features(&seq, 7).unwrap();
        let got: Vec<f32> = out.data().iter().copied().collect();
        assert_eq!(got, vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0]);
    }

    #[test]
    fn rescale_single_output_reads_midpoint() {
        let seq = FeatureSequence::from_vec(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let out = rescale_features(&seq, 1).unwrap();
        assert_eq!(out.data()[[0, 0]], 1.5);
    }

    #[test]
    fn rescale_same_length_is_identity() {
        let seq = ramp(6, 3);
        assert_eq!(rescale_features(&seq, 6).unwrap(), seq);
        assert!(rescale_features(&seq, 0).is_err());
    }

    proptest! {
        #[test]
        fn rescale_keeps_constants(len in 1usize..20, target in 1usize..40, c in -5.0f32..5.0) {
            let seq = FeatureSequence::from_vec(len, 2, vec![c; len * 2]).unwrap();
            let out = rescale_features(&seq, target).unwrap();
            prop_assert_eq!(out.data().dim(), (target, 2));
            for v in out.data().iter() {
                prop_assert!((v - c).abs() <= 1e-6 * c.abs().max(1.0));
            }
        }

        #[test]
        fn rescale_is_idempotent(len in 1usize..20, target in 1usize..40, seed in 0u64..1000) {
            let values = (0..len * 3).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f32 / 100.0).collect();
            let seq = FeatureSequence::from_vec(len, 3, values).unwrap();
            let once = rescale_features(&seq, target).unwrap();
            let twice = rescale_features(&once, target).unwrap();
            for (a, b) in once.data().iter().zip(twice.data().iter()) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }
    }
}
