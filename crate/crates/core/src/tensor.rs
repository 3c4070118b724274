//! TNSR: the on-disk tensor format shared by maps, images and weights.
//!
//! Layout (little-endian, no padding, no footer):
//!
//! | offset      | size      | content                            |
//! |-------------|-----------|------------------------------------|
//! | 0           | 4         | ASCII magic `TNSR`                 |
//! | 4           | 4         | `u32` rank, 2 or 3                 |
//! | 8           | 4 * rank  | `u32` dims                         |
//! | 8 + 4*rank  | 4 * prod  | `f32` values, row-major            |
//!
//! Rank-3 tensors are channel-last.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"TNSR";

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("TNSR format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },

    #[error("invalid tensor: {0}")]
    Invalid(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

fn format_err(offset: usize, reason: impl Into<String>) -> TensorError {
    TensorError::Format {
        offset,
        reason: reason.into(),
    }
}

/// Dense rank-2 or rank-3 tensor in its storage precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    values: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, values: Vec<f32>) -> Result<Self, TensorError> {
        if !(2..=3).contains(&dims.len()) {
            return Err(TensorError::Invalid(format!(
                "rank {} outside {{2,3}}",
                dims.len()
            )));
        }
        if dims.iter().any(|&d| d == 0 || d > u32::MAX as usize) {
            return Err(TensorError::Invalid(format!("bad dims {dims:?}")));
        }
        let expected = element_count(&dims)
            .ok_or_else(|| TensorError::Invalid(format!("dims {dims:?} overflow")))?;
        if expected != values.len() {
            return Err(TensorError::Invalid(format!(
                "dims {dims:?} need {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::Invalid(format!(
                "non-finite value at index {i}"
            )));
        }
        Ok(Self { dims, values })
    }

    /// Narrows 64-bit values to storage precision. Values that overflow
    /// `f32` are rejected.
    pub fn from_f64(dims: Vec<usize>, values: &[f64]) -> Result<Self, TensorError> {
        Self::new(dims, values.iter().map(|&v| v as f32).collect())
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn encoded_len(&self) -> usize {
        8 + 4 * self.dims.len() + 4 * self.values.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, TensorError> {
        if bytes.len() < 4 {
            return Err(format_err(bytes.len(), "truncated magic"));
        }
        if &bytes[..4] != MAGIC {
            return Err(format_err(0, format!("bad magic {:?}", &bytes[..4])));
        }
        let rank = read_u32(bytes, 4)? as usize;
        if !(2..=3).contains(&rank) {
            return Err(format_err(4, format!("rank {rank} outside {{2,3}}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for i in 0..rank {
            let offset = 8 + 4 * i;
            let d = read_u32(bytes, offset)? as usize;
            if d == 0 {
                return Err(format_err(offset, "zero-sized dimension"));
            }
            dims.push(d);
        }
        let header = 8 + 4 * rank;
        let count =
            element_count(&dims).ok_or_else(|| format_err(8, format!("dims {dims:?} overflow")))?;
        let needed = count
            .checked_mul(4)
            .and_then(|n| n.checked_add(header))
            .ok_or_else(|| format_err(8, format!("dims {dims:?} overflow")))?;
        if bytes.len() < needed {
            return Err(format_err(
                bytes.len(),
                format!("truncated payload: expected {needed} bytes"),
            ));
        }
        if bytes.len() > needed {
            return Err(format_err(needed, "trailing bytes after payload"));
        }
        let mut values = Vec::with_capacity(count);
        for (i, chunk) in bytes[header..].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                return Err(format_err(header + 4 * i, "non-finite value"));
            }
            values.push(v);
        }
        Ok(Self { dims, values })
    }
}

fn element_count(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32, TensorError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            format_err(
                bytes.len(),
                format!("truncated header, field at byte {offset}"),
            )
        })
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor, TensorError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| TensorError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Tensor::decode(&bytes)
}

pub fn write_tensor(tensor: &Tensor, path: impl AsRef<Path>) -> Result<(), TensorError> {
    let path = path.as_ref();
    fs::write(path, tensor.encode()).map_err(|source| TensorError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_by_two_map() {
        let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let back = Tensor::decode(&t.encode()).unwrap();
        assert_eq!(back.rank(), 2);
        assert_eq!(back.dims(), &[2, 2]);
        assert_eq!(back.values(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn zero_map_is_32_bytes() {
        // 4 magic + 4 rank + 2*4 dims + 4*4 data
        let t = Tensor::new(vec![2, 2], vec![0.0; 4]).unwrap();
        assert_eq!(t.encode().len(), 32);
    }

    #[test]
    fn last_four_bytes_hold_value() {
        let bytes = Tensor::new(vec![1, 1, 1], vec![7.0]).unwrap().encode();
        let tail: [u8; 4] = bytes[bytes.len() - 4..].try_into().unwrap();
        assert_eq!(f32::from_le_bytes(tail), 7.0);
        assert_eq!(bytes.len(), 4 + 4 + 12 + 4);
    }

    #[test]
    fn zero_image_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.tnsr");
        let t = Tensor::new(vec![3, 5, 3], vec![0.0; 45]).unwrap();
        write_tensor(&t, &path).unwrap();
        let first = fs::read(&path).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back, t);
        write_tensor(&back, &path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), first);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = Tensor::new(vec![1, 1], vec![1.0]).unwrap().encode();
        bytes[..4].copy_from_slice(b"XXXX");
        match Tensor::decode(&bytes) {
            Err(TensorError::Format { offset: 0, .. }) => {}
            other => panic!("expected format error at byte 0, got {other:?}"),
        }
    }

    #[test]
    fn rejects_truncation_and_trailing_bytes() {
        let bytes = Tensor::new(vec![2, 2], vec![1.0; 4]).unwrap().encode();
        for cut in [0, 3, 6, 10, 17, 31] {
            assert!(
                matches!(
                    Tensor::decode(&bytes[..cut]),
                    Err(TensorError::Format { .. })
                ),
                "cut at {cut}"
            );
        }
        let mut long = bytes.clone();
        long.push(0);
        match Tensor::decode(&long) {
            Err(TensorError::Format { offset, .. }) => assert_eq!(offset, 32),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_rank_and_non_finite() {
        let mut bytes = Tensor::new(vec![1, 1], vec![1.0]).unwrap().encode();
        bytes[4] = 4;
        assert!(matches!(
            Tensor::decode(&bytes),
            Err(TensorError::Format { offset: 4, .. })
        ));

        let mut bytes = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap().encode();
        bytes[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            Tensor::decode(&bytes),
            Err(TensorError::Format { offset: 20, .. })
        ));
        assert!(Tensor::new(vec![1, 1], vec![f32::INFINITY]).is_err());
        assert!(Tensor::from_f64(vec![1, 1], &[1e300]).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_is_bit_exact(
            dims in prop::collection::vec(1usize..6, 2..=3),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n: usize = dims.iter().product();
            let values: Vec<f32> = (0..n)
                .map(|_| {
                    let bits: u32 = rng.random();
                    let v = f32::from_bits(bits);
                    if v.is_finite() { v } else { 0.5 }
                })
                .collect();
            let t = Tensor::new(dims, values).unwrap();
            let bytes = t.encode();
            let back = Tensor::decode(&bytes).unwrap();
            prop_assert_eq!(back.dims(), t.dims());
            let same_bits = back.values().iter().zip(t.values()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same_bits);
            prop_assert_eq!(back.encode(), bytes);
        }
    }
}
