//! `ADTN` tensor container shared by datasets and adversarial archives.
//!
//! ```text
//! magic "ADTN" | version u16 | dtype u8 (1 = f32, 2 = f64) | rank u8
//! dims: rank x u32
//! payload: prod(dims) values, little-endian, row-major
//! label flag u8; if 1: count u32 (= dims[0]) then count x u32
//! ```

use std::path::Path;

use crate::binio::{self, Reader, Writer};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ADTN";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn tag(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub dtype: DType,
    /// Values held as `f64`; `F32` tensors hold exactly representable values.
    pub data: Vec<f64>,
    pub labels: Option<Vec<usize>>,
}

impl Tensor {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let expected: usize = self.dims.iter().product();
        if expected != self.data.len() {
            return Err(Error::input(format!(
                "tensor dims {:?} hold {expected} values, got {}",
                self.dims,
                self.data.len()
            )));
        }
        let rank = u8::try_from(self.dims.len()).map_err(|_| Error::input("rank exceeds 255"))?;
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u16(VERSION);
        w.u8(self.dtype.tag());
        w.u8(rank);
        for &d in &self.dims {
            w.len_u32(d)?;
        }
        match self.dtype {
            DType::F32 => self.data.iter().for_each(|&v| w.f32(v as f32)),
            DType::F64 => self.data.iter().for_each(|&v| w.f64(v)),
        }
        match &self.labels {
            None => w.u8(0),
            Some(labels) => {
                if labels.len() != self.dims.first().copied().unwrap_or(0) {
                    return Err(Error::input("label count must equal the leading dimension"));
                }
                w.u8(1);
                w.len_u32(labels.len())?;
                for &y in labels {
                    w.len_u32(y)?;
                }
            }
        }
        Ok(w.into_inner())
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        r.magic(MAGIC)?;
        let version = r.u16()?;
        if version != VERSION {
            return Err(r.fail(format!("unsupported container version {version}")));
        }
        let dtype = match r.u8()? {
            1 => DType::F32,
            2 => DType::F64,
            t => return Err(r.fail(format!("unknown dtype tag {t}"))),
        };
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| r.fail("dimension product overflows"))?;
        r.ensure_remaining(count, dtype.size())?;
        let data = match dtype {
            DType::F32 => (0..count).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?,
            DType::F64 => (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?,
        };
        let labels = match r.u8()? {
            0 => None,
            1 => {
                let n = r.usize()?;
                if n != dims.first().copied().unwrap_or(0) {
                    return Err(r.fail(format!("{n} labels for leading dimension {:?}", dims.first())));
                }
                r.ensure_remaining(n, 4)?;
                Some((0..n).map(|_| r.usize()).collect::<Result<Vec<_>>>()?)
            }
            t => return Err(r.fail(format!("bad label flag {t}"))),
        };
        r.finish()?;
        Ok(Self {
            dims,
            dtype,
            data,
            labels,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_atomic(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&binio::read_file(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #[test]
        fn round_trip(rows in 1usize..5, cols in 1usize..6, seed in any::<u64>(), wide in any::<bool>(), labeled in any::<bool>()) {
            let mut state = seed;
            let mut next = || { state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (state >> 11) as f64 / (1u64 << 53) as f64 };
            let dtype = if wide { DType::F64 } else { DType::F32 };
            let data: Vec<f64> = (0..rows * cols).map(|_| { let v = next(); if wide { v } else { v as f32 as f64 } }).collect();
            let labels = labeled.then(|| (0..rows).map(|i| i % 3).collect());
            let t = Tensor { dims: vec![rows, cols], dtype, data, labels };
            let back = Tensor::decode(&t.encode().unwrap(), Path::new("mem")).unwrap();
            prop_assert_eq!(back, t);
        }
    }

    #[test]
    fn truncation_and_trailing_bytes_fail() {
        let t = Tensor {
            dims: vec![2, 2],
            dtype: DType::F32,
            data: vec![0.0, 0.25, 0.5, 1.0],
            labels: Some(vec![0, 1]),
        };
        let bytes = t.encode().unwrap();
        for cut in [3, 8, 12, bytes.len() - 1] {
            assert!(matches!(
                Tensor::decode(&bytes[..cut], Path::new("t")),
                Err(Error::Format { .. })
            ));
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Tensor::decode(&extra, Path::new("t")).is_err());
        let mut bad = bytes;
        bad[4] = 9;
        assert!(Tensor::decode(&bad, Path::new("t")).is_err());
    }
}
