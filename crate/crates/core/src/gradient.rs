//! Flat model/gradient vectors and their binary wire formats.
//!
//! Gradient frame layout (all integers little-endian):
//!
//! ```text
//! version: u32 | owner: u32 | model_version: u32 | flags: u8 | count: u32 | count x f64
//! ```
//!
//! flags bit 0 marks a clipped vector, bit 1 marks DP noise applied. The
//! model broadcast frame is identical minus the owner field. The epsilon
//! actually used for noising is simulator metadata and is not carried on
//! the wire.

use thiserror::Error;

pub const WIRE_VERSION: u32 = 1;

const FLAG_CLIPPED: u8 = 0b01;
const FLAG_NOISED: u8 = 0b10;

#[derive(Debug, Error, PartialEq)]
pub enum WireError {
    #[error("unsupported wire version {0}")]
    UnsupportedVersion(u32),
    #[error("frame truncated: needed {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },
    #[error("frame has {0} trailing bytes")]
    TrailingBytes(usize),
}

/// One participant's flat gradient plus exchange metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub values: Vec<f64>,
    pub owner: u32,
    /// Version of the model the gradient was computed against.
    pub model_version: u32,
    /// Set once the vector has been passed through the clipping bound.
    pub clipped: bool,
    /// Privacy budget consumed when noise was added; `None` pre-noise and
    /// after wire decode (the frame only carries the noised flag).
    pub epsilon_used: Option<f64>,
}

impl GradientVector {
    pub fn new(owner: u32, model_version: u32, values: Vec<f64>) -> Self {
        Self {
            values,
            owner,
            model_version,
            clipped: false,
            epsilon_used: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Aggregated model broadcast from a regional server.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelUpdate {
    pub model_version: u32,
    pub values: Vec<f64>,
}

pub fn encode_gradient(g: &GradientVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(17 + 8 * g.values.len());
    out.extend_from_slice(&WIRE_VERSION.to_le_bytes());
    out.extend_from_slice(&g.owner.to_le_bytes());
    out.extend_from_slice(&g.model_version.to_le_bytes());
    let mut flags = 0u8;
    if g.clipped {
        flags |= FLAG_CLIPPED;
    }
    if g.epsilon_used.is_some() {
        flags |= FLAG_NOISED;
    }
    out.push(flags);
    out.extend_from_slice(&(g.values.len() as u32).to_le_bytes());
    for v in &g.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_gradient(bytes: &[u8]) -> Result<GradientVector, WireError> {
    let mut r = Reader::new(bytes);
    let version = r.u32()?;
    if version != WIRE_VERSION {
        return Err(WireError::UnsupportedVersion(version));
    }
    let owner = r.u32()?;
    let model_version = r.u32()?;
    let flags = r.u8()?;
    let count = r.u32()? as usize;
    let values = r.f64s(count)?;
    r.finish()?;
    Ok(GradientVector {
        values,
        owner,
        model_version,
        clipped: flags & FLAG_CLIPPED != 0,
        epsilon_used: None,
    })
}

pub fn encode_model(m: &ModelUpdate) -> Vec<u8> {
    let mut out = Vec::with_capacity(13 + 8 * m.values.len());
    out.extend_from_slice(&WIRE_VERSION.to_le_bytes());
    out.extend_from_slice(&m.model_version.to_le_bytes());
    out.push(0u8);
    out.extend_from_slice(&(m.values.len() as u32).to_le_bytes());
    for v in &m.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelUpdate, WireError> {
    let mut r = Reader::new(bytes);
    let version = r.u32()?;
    if version != WIRE_VERSION {
        return Err(WireError::UnsupportedVersion(version));
    }
    let model_version = r.u32()?;
    let _flags = r.u8()?;
    let count = r.u32()? as usize;
    let values = r.f64s(count)?;
    r.finish()?;
    Ok(ModelUpdate {
        model_version,
        values,
    })
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.pos + n > self.bytes.len() {
            return Err(WireError::Truncated {
                needed: self.pos + n,
                got: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64s(&mut self, count: usize) -> Result<Vec<f64>, WireError> {
        let mut out = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    pub(crate) fn bytes_exact(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        self.take(n)
    }

    pub(crate) fn finish(self) -> Result<(), WireError> {
        if self.pos != self.bytes.len() {
            Err(WireError::TrailingBytes(self.bytes.len() - self.pos))
        } else {
            Ok(())
        }
    }
}
