//! Flat parameter vectors and their checkpoint encoding.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Flat, fixed-length vector of model parameters or gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    fn check_len(&self, other: &ParamVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(())
    }

    /// Returns `self + scale * src`.
    pub fn axpy(&self, scale: f64, src: &ParamVector) -> Result<ParamVector> {
        let mut out = self.clone();
        out.axpy_in_place(scale, src)?;
        Ok(out)
    }

    /// `self += scale * src`.
    pub fn axpy_in_place(&mut self, scale: f64, src: &ParamVector) -> Result<()> {
        self.check_len(src)?;
        for (d, s) in self.0.iter_mut().zip(&src.0) {
            *d += scale * s;
        }
        Ok(())
    }

    pub fn add_in_place(&mut self, src: &ParamVector) -> Result<()> {
        self.check_len(src)?;
        for (d, s) in self.0.iter_mut().zip(&src.0) {
            *d += s;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, factor: f64) {
        for v in &mut self.0 {
            *v *= factor;
        }
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_len(other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    /// Squared Euclidean distance.
    pub fn dist_sq(&self, other: &ParamVector) -> Result<f64> {
        self.check_len(other)?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    /// Element-wise mean, summed in slice order.
    pub fn mean(vectors: &[ParamVector]) -> Result<ParamVector> {
        let first = vectors
            .first()
            .ok_or_else(|| Error::Protocol("mean of an empty set of vectors".into()))?;
        let mut acc = ParamVector::zeros(first.len());
        for v in vectors {
            acc.add_in_place(v)?;
        }
        acc.scale_in_place(1.0 / vectors.len() as f64);
        Ok(acc)
    }

    /// Length-prefixed little-endian encoding: `u64` count, then `count` `f64`s.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.len());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for v in &self.0 {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes [`ParamVector::to_bytes`] output. The buffer must hold exactly
    /// one vector and every value must be finite.
    pub fn from_bytes(bytes: &[u8]) -> Result<ParamVector> {
        let (head, body) = bytes
            .split_first_chunk::<8>()
            .ok_or_else(|| Error::Decode(format!("need 8 header bytes, got {}", bytes.len())))?;
        let count = u64::from_le_bytes(*head);
        let expected = count.checked_mul(8).filter(|&n| n == body.len() as u64);
        if expected.is_none() {
            return Err(Error::Decode(format!(
                "header declares {count} values but payload holds {} bytes",
                body.len()
            )));
        }
        let mut values = Vec::with_capacity(count as usize);
        for (i, chunk) in body.chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
            if !v.is_finite() {
                return Err(Error::Decode(format!("value {i} is not finite")));
            }
            values.push(v);
        }
        Ok(ParamVector(values))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<ParamVector> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}
