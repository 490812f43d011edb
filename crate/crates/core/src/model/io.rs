//! Binary containers for trained models (`CPNM`) and network outputs (`CPNO`).
//!
//! Both are little-endian. A model file holds the JSON-encoded config
//! (`u32` length + bytes) followed by every parameter tensor in declaration
//! order as `u32` rank, `u32` dims and `f64` values.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::config::ModelConfig;
use super::network::NetworkOutputs;
use super::params::{ModelParams, Tensor};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: [u8; 4] = *b"CPNM";
pub const MODEL_VERSION: u32 = 1;
pub const OUTPUTS_MAGIC: [u8; 4] = *b"CPNO";
pub const OUTPUTS_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                expected: end,
                found: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let start = self.pos;
        let raw = self.take(8 * n)?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite((start - self.pos) / 8 + i));
        }
        Ok(values)
    }

    fn header(&mut self, magic: [u8; 4], version: u32) -> Result<()> {
        let found: [u8; 4] = self.take(4)?.try_into().unwrap();
        if found != magic {
            return Err(Error::BadMagic { expected: magic, found });
        }
        let v = self.u32()?;
        if v != version {
            return Err(Error::VersionMismatch { expected: version, found: v });
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn put_f64s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn model_to_bytes(cfg: &ModelConfig, params: &ModelParams) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(cfg)?;
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in params.tensors() {
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        put_f64s(&mut out, t.data.iter().copied());
    }
    Ok(out)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<(ModelConfig, ModelParams)> {
    let mut r = Reader { bytes, pos: 0 };
    r.header(MODEL_MAGIC, MODEL_VERSION)?;
    let n = r.u32()? as usize;
    let cfg: ModelConfig = serde_json::from_slice(r.take(n)?)?;
    cfg.validate()?;
    let expected = ModelParams::shapes(&cfg);
    let mut tensors = Vec::with_capacity(expected.len());
    for (name, want) in ModelParams::NAMES.iter().zip(&expected) {
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if &shape != want {
            return Err(Error::ShapeMismatch(format!(
                "tensor {name}: stored shape {shape:?}, config implies {want:?}"
            )));
        }
        let data = r.f64s(shape.iter().product())?;
        tensors.push(Tensor { shape, data });
    }
    r.finish()?;
    let params = ModelParams::from_tensors(tensors.into_iter()).expect("one tensor per name");
    Ok((cfg, params))
}

pub fn save_model(cfg: &ModelConfig, params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_bytes(cfg, params)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(ModelConfig, ModelParams)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}

/// `CPNO`, u32 version, u32 T, u32 D, then p_start, p_end (T each) and
/// p_cls, p_reg (D x T each, row-major) as f64.
pub fn outputs_to_bytes(out: &NetworkOutputs) -> Vec<u8> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&OUTPUTS_MAGIC);
    bytes.extend_from_slice(&OUTPUTS_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(out.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&(out.durations() as u32).to_le_bytes());
    put_f64s(&mut bytes, out.p_start.iter().copied());
    put_f64s(&mut bytes, out.p_end.iter().copied());
    put_f64s(&mut bytes, out.p_cls.iter().copied());
    put_f64s(&mut bytes, out.p_reg.iter().copied());
    bytes
}

pub fn outputs_from_bytes(bytes: &[u8]) -> Result<NetworkOutputs> {
    let mut r = Reader { bytes, pos: 0 };
    r.header(OUTPUTS_MAGIC, OUTPUTS_VERSION)?;
    let len = r.u32()? as usize;
    let d = r.u32()? as usize;
    let p_start = Array1::from(r.f64s(len)?);
    let p_end = Array1::from(r.f64s(len)?);
    let p_cls = Array2::from_shape_vec((d, len), r.f64s(d * len)?).expect("sized read");
    let p_reg = Array2::from_shape_vec((d, len), r.f64s(d * len)?).expect("sized read");
    r.finish()?;
    Ok(NetworkOutputs { p_start, p_end, p_cls, p_reg })
}

pub fn save_outputs(out: &NetworkOutputs, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, outputs_to_bytes(out)).map_err(|e| Error::io(path, e))
}

pub fn load_outputs(path: impl AsRef<Path>) -> Result<NetworkOutputs> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    outputs_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            input_channels: 2,
            hidden_channels: 3,
            len: 6,
            durations: 4,
            samples: 3,
            seed: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn model_round_trip() {
        let params = ModelParams::init(&cfg());
        let bytes = model_to_bytes(&cfg(), &params).unwrap();
        assert_eq!(&bytes[..4], b"CPNM");
        let (c, p) = model_from_bytes(&bytes).unwrap();
        assert_eq!((c, p), (cfg(), params));
    }

    #[test]
    fn model_errors() {
        let bytes = model_to_bytes(&cfg(), &ModelParams::init(&cfg())).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(model_from_bytes(&bad), Err(Error::BadMagic { .. })));
        assert!(matches!(model_from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Truncated { .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(model_from_bytes(&extra).is_err());
    }

    #[test]
    fn outputs_round_trip() {
        let out = NetworkOutputs {
            p_start: Array1::from(vec![0.1, 0.2, 0.3]),
            p_end: Array1::from(vec![0.4, 0.5, 0.6]),
            p_cls: Array2::from_shape_fn((2, 3), |(d, t)| 0.1 * (d + t) as f64 + 0.05),
            p_reg: Array2::from_elem((2, 3), 0.25),
        };
        assert_eq!(outputs_from_bytes(&outputs_to_bytes(&out)).unwrap(), out);
    }
}
