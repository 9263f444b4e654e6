//! `.m3t` tensor container.
//!
//! Layout (all integers little-endian, no padding):
//!
//! | bytes      | field                                           |
//! |------------|-------------------------------------------------|
//! | 0..8       | magic `M3TENSOR`                                |
//! | 8..12      | `u32` version, currently 1                      |
//! | 12         | `u8` dtype: 0 f32, 1 f64, 2 u8, 3 i64           |
//! | 13         | `u8` rank                                       |
//! | 14..       | `rank` x `u64` dims, then the row-major payload |

use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"M3TENSOR";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 14;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic {0:?}")]
    BadMagic(Vec<u8>),
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),
    #[error("truncated container: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("dimension product overflows")]
    DimensionOverflow,
    #[error("expected shape {expected:?} / dtype {expected_dtype:?}, found {found:?} / {found_dtype:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        expected_dtype: DType,
        found: Vec<usize>,
        found_dtype: DType,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
    U8 = 2,
    I64 = 3,
}

impl DType {
    pub fn from_tag(tag: u8) -> Result<Self, ContainerError> {
        match tag {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            2 => Ok(DType::U8),
            3 => Ok(DType::I64),
            other => Err(ContainerError::UnknownDtype(other)),
        }
    }

    pub fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 | DType::I64 => 8,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
    I64(Vec<i64>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::U8(_) => DType::U8,
            TensorData::I64(_) => DType::I64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
            TensorData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A typed n-dimensional array as stored in a container file.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self, ContainerError> {
        let n = element_count(&dims)?;
        if n != data.len() {
            return Err(ContainerError::ShapeMismatch {
                expected: dims,
                expected_dtype: data.dtype(),
                found: vec![data.len()],
                found_dtype: data.dtype(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    /// Checks dims and dtype against what a caller expects to load.
    pub fn expect(&self, dims: &[usize], dtype: DType) -> Result<(), ContainerError> {
        if self.dims != dims || self.dtype() != dtype {
            return Err(ContainerError::ShapeMismatch {
                expected: dims.to_vec(),
                expected_dtype: dtype,
                found: self.dims.clone(),
                found_dtype: self.dtype(),
            });
        }
        Ok(())
    }

    pub fn into_f32(self) -> Option<Vec<f32>> {
        match self.data {
            TensorData::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn into_f64(self) -> Option<Vec<f64>> {
        match self.data {
            TensorData::F64(v) => Some(v),
            _ => None,
        }
    }

    pub fn into_u8(self) -> Option<Vec<u8>> {
        match self.data {
            TensorData::U8(v) => Some(v),
            _ => None,
        }
    }

    pub fn into_i64(self) -> Option<Vec<i64>> {
        match self.data {
            TensorData::I64(v) => Some(v),
            _ => None,
        }
    }
}

fn element_count(dims: &[usize]) -> Result<usize, ContainerError> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(ContainerError::DimensionOverflow)
}

pub fn encode(tensor: &Tensor) -> Vec<u8> {
    let dtype = tensor.dtype();
    let mut out =
        Vec::with_capacity(HEADER_LEN + 8 * tensor.dims.len() + dtype.width() * tensor.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype as u8);
    out.push(tensor.dims.len() as u8);
    for &d in &tensor.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match &tensor.data {
        TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::U8(v) => out.extend_from_slice(v),
        TensorData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

fn need(bytes: &[u8], needed: usize) -> Result<(), ContainerError> {
    if bytes.len() < needed {
        Err(ContainerError::Truncated { needed, available: bytes.len() })
    } else {
        Ok(())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Tensor, ContainerError> {
    need(bytes, 8)?;
    if &bytes[..8] != MAGIC {
        return Err(ContainerError::BadMagic(bytes[..8].to_vec()));
    }
    need(bytes, HEADER_LEN)?;
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(ContainerError::UnsupportedVersion(version));
    }
    let dtype = DType::from_tag(bytes[12])?;
    let rank = bytes[13] as usize;
    let dims_end = HEADER_LEN + 8 * rank;
    need(bytes, dims_end)?;
    let dims: Vec<usize> = bytes[HEADER_LEN..dims_end]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count = element_count(&dims)?;
    let payload_len = count.checked_mul(dtype.width()).ok_or(ContainerError::DimensionOverflow)?;
    let end = dims_end.checked_add(payload_len).ok_or(ContainerError::DimensionOverflow)?;
    need(bytes, end)?;
    if bytes.len() > end {
        return Err(ContainerError::TrailingBytes(bytes.len() - end));
    }
    let payload = &bytes[dims_end..end];
    let data = match dtype {
        DType::F32 => TensorData::F32(
            payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
        ),
        DType::F64 => TensorData::F64(
            payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        ),
        DType::U8 => TensorData::U8(payload.to_vec()),
        DType::I64 => TensorData::I64(
            payload.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect(),
        ),
    };
    Ok(Tensor { dims, data })
}

pub fn write_file(path: impl AsRef<Path>, tensor: &Tensor) -> Result<(), ContainerError> {
    std::fs::write(path, encode(tensor))?;
    Ok(())
}

pub fn read_file(path: impl AsRef<Path>) -> Result<Tensor, ContainerError> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Tensor {
        Tensor::new(vec![2, 3], TensorData::F32(vec![0.0, 1.5, -2.0, f32::MIN_POSITIVE, 7.0, 1e30]))
            .unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&Tensor::new(vec![3], TensorData::U8(vec![1, 2, 3])).unwrap());
        assert_eq!(&bytes[..8], b"M3TENSOR");
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
        assert_eq!(bytes[12], 2);
        assert_eq!(bytes[13], 1);
        assert_eq!(&bytes[14..22], &[3, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[22..], &[1, 2, 3]);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode(&sample());
        bytes[..8].copy_from_slice(b"BADMAGIC");
        assert!(matches!(decode(&bytes), Err(ContainerError::BadMagic(m)) if m == b"BADMAGIC"));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = encode(&sample());
        bytes[8] = 2;
        assert!(matches!(decode(&bytes), Err(ContainerError::UnsupportedVersion(2))));
    }

    #[test]
    fn truncated_payload() {
        let bytes = encode(&sample());
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(decode(cut), Err(ContainerError::Truncated { .. })));
        assert!(matches!(decode(&bytes[..5]), Err(ContainerError::Truncated { .. })));
    }

    #[test]
    fn trailing_bytes_and_unknown_dtype() {
        let mut bytes = encode(&sample());
        bytes.push(0);
        assert!(matches!(decode(&bytes), Err(ContainerError::TrailingBytes(1))));
        let mut bytes = encode(&sample());
        bytes[12] = 9;
        assert!(matches!(decode(&bytes), Err(ContainerError::UnknownDtype(9))));
    }

    #[test]
    fn expect_reports_shape_mismatch() {
        let t = sample();
        assert!(t.expect(&[2, 3], DType::F32).is_ok());
        assert!(t.expect(&[3, 2], DType::F32).is_err());
        assert!(t.expect(&[2, 3], DType::F64).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(dims in prop::collection::vec(0usize..5, 0..4), seed in any::<u64>()) {
            let n: usize = dims.iter().product();
            let mut s = seed;
            let mut next = || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); s };
            for data in [
                TensorData::F32((0..n).map(|_| f32::from_bits(next() as u32)).collect()),
                TensorData::F64((0..n).map(|_| f64::from_bits(next())).collect()),
                TensorData::U8((0..n).map(|_| next() as u8).collect()),
                TensorData::I64((0..n).map(|_| next() as i64).collect()),
            ] {
                let t = Tensor::new(dims.clone(), data).unwrap();
                let back = decode(&encode(&t)).unwrap();
                prop_assert_eq!(encode(&back), encode(&t));
                prop_assert_eq!(back.dims, t.dims);
            }
        }
    }
}
